#pragma once

// Localization operators on configuration space (d=1): A_s is the exact
// conditional expectation given the configuration in the closed cube Q_s;
// A_{s,eps} and its double-smoothed variant are running t-averages of A_{s+t}
// that produce H^1_0-class functions. Shell coordinates are integrated
// exactly against the Q1 field for up to two shell particles (collar
// quadrature), Monte Carlo beyond.
//
// Jump convention: the jump term of the gradient formula is evaluated at
// element midpoints; a particle sitting exactly on a grid node of the moving
// boundary is direction-dependent and left undefined.

#include <functional>
#include <vector>

#include "hmglab/assembly.hpp"
#include "hmglab/configuration.hpp"

namespace hmglab {

struct LocalizationReport {
    double s = 0.0, eps = 0.0;
    double commute_residual = 0.0;        // || grad A_s f - A_s grad f || on interior samples
    double interior_formula_residual = 0.0;
    double shell_formula_residual = 0.0;
    double exterior_formula_residual = 0.0;
    double bracket_increment = 0.0;       // E[(A_{s+eps} f)^2 - (A_s f)^2]
    double bracket_se = 0.0;
    double jensen_margin = 0.0;           // E int |grad f|^2 - E int |grad A_{s,eps} f|^2 on Q_s
    int mc_samples = 0;
    bool used_mc_shell = false;
};

class Localizer {
  public:
    // field must live on an interior basis whose domain is Q_{s+eps}
    Localizer(const SectorField& f, double rho) : f_(f), b_(*f.basis), rho_(rho) {
        if (b_.dim() != 1) throw std::invalid_argument("Localizer: d=1 only");
        weights_ = sector_weights(rho, b_.region().volume(), b_.n_max(), 0.0);
    }

    // exact axis integral of every hat function over [a, b] (clipped)
    std::vector<double> axis_integral_weights(double a, double b) const {
        const int G = b_.nodes_per_axis();
        const double h = b_.h();
        const double lo = b_.region().lo(0);
        std::vector<double> w(G, 0.0);
        a = std::fmax(a, lo);
        b = std::fmin(b, b_.region().hi(0));
        if (b <= a) return w;
        for (int c = 0; c < G - 1; ++c) {
            const double x0 = lo + c * h, x1 = x0 + h;
            const double aa = std::fmax(a, x0), bb = std::fmin(b, x1);
            if (bb <= aa) continue;
            // integral of the two local hats over [aa, bb]
            const double t0 = (aa - x0) / h, t1 = (bb - x0) / h;
            w[c] += h * ((t1 - 0.5 * t1 * t1) - (t0 - 0.5 * t0 * t0));
            w[c + 1] += h * (0.5 * t1 * t1 - 0.5 * t0 * t0);
        }
        return w;
    }

    std::vector<double> point_weights(double x, int deriv = 0) const {
        const int G = b_.nodes_per_axis();
        const double h = b_.h();
        std::vector<double> w(G, 0.0);
        double t = (x - b_.region().lo(0)) / h;
        int c = static_cast<int>(std::floor(t));
        c = std::max(0, std::min(G - 2, c));
        const double u = t - c;
        if (deriv == 0) {
            w[c] = 1.0 - u;
            w[c + 1] = u;
        } else {
            w[c] = -1.0 / h;
            w[c + 1] = 1.0 / h;
        }
        return w;
    }

    // contraction of sector N against per-coordinate axis weight vectors
    double contract(int N, const std::vector<std::vector<double>>& wv) const {
        if (N == 0) return f_.values[0][0];
        const int G = b_.nodes_per_axis();
        double acc = 0.0;
        std::vector<int> ix(N, 0);
        Tuple t{};
        for (;;) {
            double w = 1.0;
            for (int i = 0; i < N; ++i) {
                w *= wv[i][ix[i]];
                t[i] = ix[i];
            }
            if (w != 0.0) {
                Tuple ts = t;
                detail::sort_small(ts, N);
                acc += w * f_.values[N][b_.node_rank(ts, N)];
            }
            int j = N - 1;
            while (j >= 0 && ++ix[j] == G) {
                ix[j] = 0;
                --j;
            }
            if (j < 0) break;
        }
        return acc;
    }

    // A_t f at a configuration given by kept/all positions; grad_i >= 0
    // replaces the weight vector of kept particle grad_i by the derivative.
    // kept = particles with |x| <= t/2; the rest of mu is irrelevant (f is
    // measurable w.r.t. the region).
    double apply_At(double t, const std::vector<double>& kept, int grad_i = -1) const {
        const int j = static_cast<int>(kept.size());
        const double half = 0.5 * t;
        const double shell_vol = b_.region().side - std::fmin(t, b_.region().side);
        std::vector<double> shell_w;
        if (shell_vol > 1e-14) {
            shell_w = axis_integral_weights(-b_.region().side * 0.5, -half);
            shell_w = add(shell_w, axis_integral_weights(half, b_.region().side * 0.5));
        }
        // truncated Poisson over the shell count
        const int m_cap = b_.n_max() - j;
        std::vector<double> pmf(std::max(0, m_cap) + 1, 0.0);
        double lam = rho_ * shell_vol, mass = 0.0, p = std::exp(-lam);
        for (int m = 0; m <= m_cap; ++m) {
            pmf[m] = p;
            mass += p;
            p *= lam / (m + 1);
        }
        double out = 0.0;
        std::vector<std::vector<double>> wv;
        for (int m = 0; m <= m_cap; ++m) {
            if (pmf[m] == 0.0) continue;
            wv.clear();
            for (int i = 0; i < j; ++i) wv.push_back(point_weights(kept[i], grad_i == i ? 1 : 0));
            double scale = 1.0;
            for (int mm = 0; mm < m; ++mm) {
                wv.push_back(shell_w);
                scale /= shell_vol;
            }
            out += (pmf[m] / mass) * scale * contract(j + m, wv);
        }
        return out;
    }

    // (1/eps) int_0^eps A_{s+t} f dt with weight w(t) (1 or the tilde weight),
    // Gauss panels between breakpoints (particle radii and grid crossings).
    double apply_Aseps(double s, double eps, const std::vector<double>& all_positions, int grad_i = -1,
                       bool tilde = false) const {
        std::vector<double> breaks{s, s + eps};
        for (double x : all_positions) {
            const double r = 2.0 * std::fabs(x);
            if (r > s && r < s + eps) breaks.push_back(r);
        }
        const double lo = b_.region().lo(0);
        for (int i = 0; i < b_.nodes_per_axis(); ++i) {
            const double r = 2.0 * std::fabs(lo + i * b_.h());
            if (r > s && r < s + eps) breaks.push_back(r);
        }
        std::sort(breaks.begin(), breaks.end());
        static const double gx[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                     -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                     0.7966664774136267,  0.9602898564975363};
        static const double gw[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                     0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                     0.2223810344533745, 0.1012285362903763};
        double acc = 0.0;
        for (size_t seg = 0; seg + 1 < breaks.size(); ++seg) {
            const double a = breaks[seg], bb = breaks[seg + 1];
            if (bb - a < 1e-14) continue;
            for (int g = 0; g < 8; ++g) {
                const double t = 0.5 * (a + bb) + 0.5 * (bb - a) * gx[g];
                std::vector<double> kept;
                int kept_grad = -1;
                for (size_t i = 0; i < all_positions.size(); ++i) {
                    if (2.0 * std::fabs(all_positions[i]) <= t) {
                        if (static_cast<int>(i) == grad_i) kept_grad = static_cast<int>(kept.size());
                        kept.push_back(all_positions[i]);
                    }
                }
                double v;
                if (grad_i >= 0 && kept_grad < 0) {
                    v = 0.0;  // the differentiated particle is averaged out
                } else {
                    v = apply_At(t, kept, kept_grad);
                }
                const double wt = tilde ? 2.0 * (s + eps - t) / (eps * eps) : 1.0 / eps;
                acc += 0.5 * (bb - a) * gw[g] * wt * v;
            }
        }
        return acc;
    }

    // jump of (A f) at tau = 2|x_i| (particle i enters the kept set)
    double jump_at(const std::vector<double>& all_positions, int i) const {
        const double tau = 2.0 * std::fabs(all_positions[i]);
        std::vector<double> kept_after, kept_before;
        for (size_t kdx = 0; kdx < all_positions.size(); ++kdx) {
            const double r = 2.0 * std::fabs(all_positions[kdx]);
            if (r <= tau) {
                if (kdx == static_cast<size_t>(i) || r < tau) kept_after.push_back(all_positions[kdx]);
                if (r < tau) kept_before.push_back(all_positions[kdx]);
            }
        }
        return apply_At(tau, kept_after) - apply_At(tau, kept_before);
    }

    const SectorBasis& basis() const { return b_; }
    double rho() const { return rho_; }

  private:
    static std::vector<double> add(std::vector<double> a, const std::vector<double>& b) {
        for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
        return a;
    }

    const SectorField& f_;
    const SectorBasis& b_;
    double rho_;
    SectorWeights weights_;
};

// Materialize A_{s,eps} f (or the tilde variant) as a grid field on the same
// basis: node tuples are configurations.
inline SectorField localize_field(const Localizer& loc, double s, double eps, bool tilde = false) {
    const SectorBasis& b = loc.basis();
    SectorField out = SectorField::zeros(b, FieldClass::Free);
    for (int n = 0; n <= b.n_max(); ++n) {
        std::int64_t r = 0;
        b.for_each_multiset(b.spatial_nodes(), n, [&](const Tuple& t) {
            std::vector<double> pos(n);
            for (int i = 0; i < n; ++i) pos[i] = b.node_position(t[i])[0];
            out.values[n][r++] = loc.apply_Aseps(s, eps, pos, -1, tilde);
        });
    }
    return out;
}

} // namespace hmglab
