#pragma once

// Truncated Poisson particle-count law: the sector weights pi_n of the
// canonical projection, renormalized over n <= n_max. The discarded mass is
// reported with every instance; callers must never hide it.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmglab {

struct SectorWeights {
    double density = 1.0;   // rho
    double volume = 1.0;    // |U|
    int n_max = 0;
    std::vector<double> weights;  // renormalized, size n_max+1
    double truncated_mass = 1.0;  // P[N <= n_max] under Poisson(rho*|U|)
    double truncated_mean = 0.0;  // E[N] under the truncated law
    bool warning = false;         // truncated_mass below the configured floor
    std::string warning_text;
};

inline SectorWeights sector_weights(double rho, double volume, int n_max, double mass_floor = 0.99) {
    if (rho <= 0.0 || volume <= 0.0) throw std::invalid_argument("sector_weights: rho and volume must be positive");
    if (n_max < 0) throw std::invalid_argument("sector_weights: n_max must be >= 0");
    SectorWeights w;
    w.density = rho;
    w.volume = volume;
    w.n_max = n_max;
    const double lambda = rho * volume;
    // pmf up to n_max, computed by the stable ratio recursion p_{n+1} = p_n * lambda/(n+1)
    std::vector<double> pmf(n_max + 1);
    pmf[0] = std::exp(-lambda);
    for (int n = 1; n <= n_max; ++n) pmf[n] = pmf[n - 1] * lambda / n;
    double mass = 0.0;
    for (double p : pmf) mass += p;
    w.truncated_mass = mass;
    w.weights.resize(n_max + 1);
    if (n_max == 0) {
        w.weights[0] = 1.0;
        w.truncated_mean = 0.0;
    } else {
        double mean = 0.0;
        for (int n = 0; n <= n_max; ++n) {
            w.weights[n] = pmf[n] / mass;
            mean += n * w.weights[n];
        }
        w.truncated_mean = mean;
    }
    if (w.truncated_mass < mass_floor || w.truncated_mass < 0.9) {
        w.warning = true;
        w.warning_text = "truncated mass " + std::to_string(w.truncated_mass) + " below floor " +
                         std::to_string(std::fmax(mass_floor, 0.9)) + " (rho*V=" + std::to_string(lambda) +
                         ", n_max=" + std::to_string(n_max) + ")";
    }
    return w;
}

} // namespace hmglab
