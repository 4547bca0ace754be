#pragma once

// The plain Laplace problem on a sector basis: find u with per-sector mean
// zero such that E[int grad u . grad phi dmu] = E[f phi] for every test
// field, given the compatibility condition that every sector of f is
// centered. Expectations here are raw (no per-unit-mass normalization).

#include "hmglab/assembly.hpp"
#include "hmglab/solver.hpp"

namespace hmglab {

struct LaplaceResult {
    SectorField solution;
    SolveStats stats;
};

// right-hand side E[f phi_dof], consistent (2-pt Gauss) mass quadrature
inline std::vector<double> mass_apply(const SectorSystem& sys, const DofMap& dofs, const SectorField& f) {
    const SectorBasis& b = *sys.basis;
    const int d = b.dim();
    std::vector<double> rhs(dofs.n_dofs, 0.0);
    const double gq[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
    std::vector<std::int64_t> ranks;
    std::vector<double> w;
    detail::walk_elements(sys, [&](int n, const Tuple&, double w_e, const Configuration&,
                                   const std::array<std::array<std::int64_t, 4>, kMaxSector>& corners) {
        const int dn = d * n;
        const double wq = w_e * ipow(b.h(), dn) / ipow(2.0, dn);
        ranks.resize(1u << dn);
        w.resize(1u << dn);
        for (unsigned c = 0; c < (1u << dn); ++c) ranks[c] = detail::rank_of_assignment(b, n, d, corners, c);
        for (unsigned q = 0; q < (1u << dn); ++q) {
            double fv = 0.0;
            for (unsigned c = 0; c < (1u << dn); ++c) {
                double ww = 1.0;
                for (int bit = 0; bit < dn; ++bit) {
                    const double x = gq[(q >> bit) & 1u];
                    ww *= ((c >> bit) & 1u) ? x : 1.0 - x;
                }
                w[c] = ww;
                fv += ww * f.values[n][ranks[c]];
            }
            for (unsigned c = 0; c < (1u << dn); ++c) {
                const auto& e = dofs.table[n][ranks[c]];
                if (e.dof >= 0) rhs[e.dof] += wq * w[c] * fv;
            }
        }
    });
    return rhs;
}

inline LaplaceResult laplace_solve(const SectorBasis& basis, double rho, const SectorField& f,
                                   double tol = 1e-10, double compat_tol = 1e-9) {
    SectorSystem sys(basis, CoefficientModel::constant(basis.dim(), 1.0), rho, 0.0);
    sys.normalizer = 1.0;  // raw expectations on both sides of the weak form
    // compatibility: E[f | G_U] = 0, i.e. every sector mean vanishes
    const auto means = sector_means(basis, f);
    double scale = 1e-300;
    for (int n = 0; n <= basis.n_max(); ++n)
        for (double v : f.values[n]) scale = std::fmax(scale, std::fabs(v));
    for (int n = 0; n <= basis.n_max(); ++n)
        if (std::fabs(means[n]) > compat_tol * std::fmax(1.0, scale))
            throw std::invalid_argument("laplace_solve: incompatible load, sector " + std::to_string(n) +
                                        " has nonzero mean " + std::to_string(means[n]));
    QuadraticProblem P = assemble_problem(sys, FieldClass::Free, false);
    const std::vector<double> rhs = mass_apply(sys, P.dofs, f);
    std::vector<double> u;
    LaplaceResult out;
    out.stats = pcg_solve(P.A, rhs, u, P.dofs.gauge, CgOptions{tol, 200000});
    out.solution = materialize(P, u);
    recenter_per_sector(out.solution);
    return out;
}

// Discrete second-difference energy E[int int |grad^2 u|^2 dmu dmu] over the
// sector basis: same-axis second differences at interior nodes plus mixed
// cross differences, trapezoid-weighted. Used by the tolerance-based discrete
// H2 check.
inline double second_difference_energy(const SectorSystem& sys, const SectorField& u) {
    const SectorBasis& b = *sys.basis;
    const int d = b.dim();
    const int G = b.nodes_per_axis();
    const double h = b.h();
    double total = 0.0;
    for (int n = 1; n <= b.n_max(); ++n) {
        const double pref = sys.weights.weights[n] / ipow(b.region().volume(), n);
        double acc = 0.0;
        std::int64_t r = 0;
        b.for_each_multiset(b.spatial_nodes(), n, [&](const Tuple& t) {
            const double mult = SectorBasis::orbit_size(t, n);
            // trapezoid nodal weight over all dn axes
            double wnode = ipow(h, d * n);
            std::array<std::array<int, kMaxDim>, kMaxSector> ax{};
            for (int i = 0; i < n; ++i) {
                std::int64_t s = t[i];
                for (int a = 0; a < d; ++a) {
                    ax[i][a] = static_cast<int>(s % G);
                    s /= G;
                    if (ax[i][a] == 0 || ax[i][a] == G - 1) wnode *= 0.5;
                }
            }
            auto value_at = [&](int i, int a, int di, int j, int bxy, int dj) {
                Tuple tt = t;
                std::int64_t step_i = 1;
                for (int k = 0; k < a; ++k) step_i *= G;
                tt[i] = static_cast<std::int32_t>(tt[i] + di * step_i);
                std::int64_t step_j = 1;
                for (int k = 0; k < bxy; ++k) step_j *= G;
                tt[j] = static_cast<std::int32_t>(tt[j] + dj * step_j);
                return u.at_tuple(n, tt);
            };
            double s2 = 0.0;
            for (int i = 0; i < n; ++i)
                for (int a = 0; a < d; ++a)
                    for (int j = 0; j < n; ++j)
                        for (int bb = 0; bb < d; ++bb) {
                            if (i == j && a == bb) {
                                if (ax[i][a] == 0 || ax[i][a] == G - 1) continue;
                                const double dd = (value_at(i, a, 1, i, a, 0) - 2.0 * u.values[n][r] +
                                                   value_at(i, a, -1, i, a, 0)) /
                                                  (h * h);
                                s2 += dd * dd;
                            } else {
                                if (ax[i][a] == 0 || ax[i][a] == G - 1) continue;
                                if (ax[j][bb] == 0 || ax[j][bb] == G - 1) continue;
                                const double dd = (value_at(i, a, 1, j, bb, 1) - value_at(i, a, 1, j, bb, -1) -
                                                   value_at(i, a, -1, j, bb, 1) + value_at(i, a, -1, j, bb, -1)) /
                                                  (4.0 * h * h);
                                s2 += dd * dd;
                            }
                        }
            acc += mult * wnode * s2;
            ++r;
        });
        total += pref * acc;
    }
    return total;
}

} // namespace hmglab
