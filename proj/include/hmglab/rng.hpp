#pragma once

// Counter-based deterministic RNG. Streams are named and splittable: a child
// stream is keyed by hashing the parent key with a label, so any task can own
// an independent stream whose output depends only on (seed, path of labels).

#include <cmath>
#include <cstdint>
#include <string_view>

namespace hmglab {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::uint64_t seed, std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL ^ splitmix64(seed);
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace detail

class RngStream {
  public:
    explicit RngStream(std::uint64_t key = 0) : key_(key) {}

    RngStream child(std::string_view name) const {
        return RngStream(detail::fnv1a(key_, name));
    }
    RngStream child(std::uint64_t index) const {
        return RngStream(detail::splitmix64(key_ ^ (0xa5a5a5a5a5a5a5a5ULL + index)));
    }

    std::uint64_t next_u64() { return detail::splitmix64(key_ + 0x9e3779b97f4a7c15ULL * (++counter_)); }

    // uniform in [0,1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    double normal() {
        // Box-Muller; one value per call, cached partner.
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    // Knuth's product method; fine for the desk-scale rates used here.
    int poisson(double lambda) {
        if (lambda <= 0.0) return 0;
        const double limit = std::exp(-lambda);
        double prod = 1.0;
        int n = -1;
        do {
            prod *= uniform();
            ++n;
        } while (prod > limit);
        return n;
    }

  private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace hmglab
