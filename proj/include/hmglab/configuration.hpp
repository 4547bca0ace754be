#pragma once

// Finite particle configurations with a canonical (lexicographic) point order,
// plus Poisson sampling on a box. Canonical order makes equality and hashing
// permutation-invariant.

#include <algorithm>
#include <vector>

#include "hmglab/geometry.hpp"
#include "hmglab/rng.hpp"

namespace hmglab {

struct Configuration {
    std::vector<Point> points;
    TriadicCube region;

    int count() const { return static_cast<int>(points.size()); }

    int count_in_ball(const Point& x, double r) const {
        int k = 0;
        const double r2 = r * r;
        for (const auto& p : points)
            if (dist2(p, x, region.dim) <= r2) ++k;
        return k;
    }

    int count_in(const TriadicCube& box) const {
        int k = 0;
        for (const auto& p : points)
            if (box.contains(p)) ++k;
        return k;
    }

    Configuration restricted_to(const TriadicCube& box) const {
        Configuration out;
        out.region = box;
        for (const auto& p : points)
            if (box.contains(p)) out.points.push_back(p);
        return out;
    }

    void canonicalize() {
        const int d = region.dim;
        std::sort(points.begin(), points.end(), [d](const Point& a, const Point& b) {
            for (int i = 0; i < d; ++i) {
                if (a[i] < b[i]) return true;
                if (a[i] > b[i]) return false;
            }
            return false;
        });
    }

    bool operator==(const Configuration& o) const { return points == o.points; }
};

inline Configuration sample_configuration(const TriadicCube& region, double rho, RngStream& rng) {
    Configuration cfg;
    cfg.region = region;
    const int n = rng.poisson(rho * region.volume());
    cfg.points.reserve(n);
    for (int i = 0; i < n; ++i) {
        Point p{{0.0, 0.0}};
        for (int a = 0; a < region.dim; ++a) p[a] = rng.uniform(region.lo(a), region.hi(a));
        cfg.points.push_back(p);
    }
    cfg.canonicalize();
    return cfg;
}

// Sample from the truncated law: Poisson conditioned on count <= n_max.
inline Configuration sample_configuration_truncated(const TriadicCube& region, double rho, int n_max,
                                                    RngStream& rng) {
    for (;;) {
        Configuration cfg = sample_configuration(region, rho, rng);
        if (cfg.count() <= n_max) return cfg;
    }
}

} // namespace hmglab
