#pragma once

// Conditional spatial averages S_{n,k} of gradients over the triadic
// partition of a cube, given the per-sub-cube particle counts: a spatial
// martingale. Exact per-sector integration over count partitions in d=1 at
// small particle numbers; Monte Carlo estimators for the martingale and
// Jensen checks.

#include <map>
#include <vector>

#include "hmglab/assembly.hpp"
#include "hmglab/quantities.hpp"

namespace hmglab {

// one exact conditional average: per child, given the composition
struct SnkEntry {
    std::vector<int> counts;       // N_z per child
    double prob = 0.0;             // P[composition | N] (multinomial)
    std::vector<Vec> value;        // S_{n,k} grad f on each child (0 if empty)
};

struct AveragedGradient {
    int lev_n = 0, lev_k = 0;
    std::vector<TriadicCube> children;
    std::vector<std::vector<SnkEntry>> by_count;  // [total N][composition]
};

namespace detail {

// integral of sum_j grad_j f over an ordered product of cell boxes, with the
// same transverse-lumped quadrature as the energy; returns per-particle-block
// directional sums. allowed[i] lists the grid cells particle i may occupy.
inline void constrained_gradient_sums(const SectorBasis& b, const SectorField& f, int n,
                                      const std::vector<std::vector<std::int64_t>>& allowed,
                                      std::vector<Vec>& per_particle) {
    const int d = b.dim();
    const double h = b.h();
    per_particle.assign(n, Vec{{0.0, 0.0}});
    std::vector<size_t> idx(n, 0);
    std::array<std::array<std::int64_t, 4>, kMaxSector> corners{};
    Tuple cells{};
    for (;;) {
        for (int i = 0; i < n; ++i) {
            cells[i] = static_cast<std::int32_t>(allowed[i][idx[i]]);
            for (unsigned c = 0; c < (1u << d); ++c) corners[i][c] = b.cell_corner(cells[i], c);
        }
        const int dn = d * n;
        for (int i = 0; i < n; ++i) {
            for (int alpha = 0; alpha < d; ++alpha) {
                const unsigned bit = 1u << (i * d + alpha);
                const double wl = ipow(h, dn - 1) / ipow(2.0, dn - 1);
                double acc = 0.0;
                for (unsigned T = 0; T < (1u << dn); ++T) {
                    if (T & bit) continue;
                    const auto r_lo = rank_of_assignment(b, n, d, corners, T);
                    const auto r_hi = rank_of_assignment(b, n, d, corners, T | bit);
                    acc += f.values[n][r_hi] - f.values[n][r_lo];
                }
                per_particle[i][alpha] += wl * acc;
            }
        }
        // advance the mixed-radix index
        int j = n - 1;
        while (j >= 0 && ++idx[j] == allowed[j].size()) {
            idx[j] = 0;
            --j;
        }
        if (j < 0) break;
    }
}

inline std::vector<std::int64_t> cells_in_box(const SectorBasis& b, const TriadicCube& box) {
    std::vector<std::int64_t> out;
    for (std::int64_t c = 0; c < b.spatial_cells(); ++c)
        if (b.cell_in_box(c, box)) out.push_back(c);
    return out;
}

inline double multinomial_prob(const std::vector<int>& counts, int N, int m) {
    double logp = 0.0;
    for (int v = 2; v <= N; ++v) logp += std::log(v);
    for (int c : counts)
        for (int v = 2; v <= c; ++v) logp -= std::log(v);
    return std::exp(logp) * ipow(1.0 / m, N);
}

template <class F>
void for_each_composition(int N, int m, std::vector<int>& counts, int pos, F&& f) {
    if (pos == m - 1) {
        counts[pos] = N;
        f(counts);
        return;
    }
    for (int v = 0; v <= N; ++v) {
        counts[pos] = v;
        for_each_composition(N - v, m, counts, pos + 1, std::forward<F>(f));
    }
}

} // namespace detail

// Exact S_{lev_n, lev_k} grad f for a field on the box_{lev_n} interior basis.
inline AveragedGradient snk_gradient_average(const SectorField& f, int lev_n, int lev_k) {
    const SectorBasis& b = *f.basis;
    const int d = b.dim();
    AveragedGradient out;
    out.lev_n = lev_n;
    out.lev_k = lev_k;
    std::vector<TriadicCube> cubes{b.domain()};
    for (int lev = lev_n; lev > lev_k; --lev) {
        std::vector<TriadicCube> next;
        for (const auto& c : cubes)
            for (const auto& ch : c.children()) next.push_back(ch);
        cubes = next;
    }
    out.children = cubes;
    const int m = static_cast<int>(cubes.size());
    std::vector<std::vector<std::int64_t>> child_cells(m);
    for (int z = 0; z < m; ++z) child_cells[z] = detail::cells_in_box(b, cubes[z]);

    out.by_count.resize(b.n_max() + 1);
    for (int N = 0; N <= b.n_max(); ++N) {
        std::vector<int> counts(m, 0);
        detail::for_each_composition(N, m, counts, 0, [&](const std::vector<int>& cc) {
            SnkEntry e;
            e.counts = cc;
            e.prob = detail::multinomial_prob(cc, N, m);
            e.value.assign(m, Vec{{0.0, 0.0}});
            if (N > 0) {
                // canonical assignment: particles blocked by child
                std::vector<std::vector<std::int64_t>> allowed;
                std::vector<int> block_of;
                double volprod = 1.0;
                for (int z = 0; z < m; ++z)
                    for (int r = 0; r < cc[z]; ++r) {
                        allowed.push_back(child_cells[z]);
                        block_of.push_back(z);
                        volprod *= cubes[z].volume();
                    }
                std::vector<Vec> sums;
                detail::constrained_gradient_sums(b, f, N, allowed, sums);
                for (int i = 0; i < N; ++i) {
                    const int z = block_of[i];
                    for (int a = 0; a < d; ++a) e.value[z][a] += sums[i][a] / volprod;
                }
                for (int z = 0; z < m; ++z)
                    if (cc[z] > 0)
                        for (int a = 0; a < d; ++a) e.value[z][a] /= cc[z];
            }
            out.by_count[N].push_back(std::move(e));
        });
    }
    return out;
}

// E[int_box |S grad f|^2 dmu] (raw expectation, no normalizer)
inline double snk_square_integral(const SectorSystem& sys, const AveragedGradient& S) {
    double total = 0.0;
    const int d = sys.basis->dim();
    for (int N = 0; N <= sys.basis->n_max(); ++N) {
        double inner = 0.0;
        for (const auto& e : S.by_count[N]) {
            double s = 0.0;
            for (size_t z = 0; z < e.counts.size(); ++z) {
                double v2 = 0.0;
                for (int a = 0; a < d; ++a) v2 += e.value[z][a] * e.value[z][a];
                s += e.counts[z] * v2;
            }
            inner += e.prob * s;
        }
        total += sys.weights.weights[N] * inner;
    }
    return total;
}

// E[int_box |S grad f - w|^2 dmu]
inline double snk_square_deviation(const SectorSystem& sys, const AveragedGradient& S, const Vec& w) {
    double total = 0.0;
    const int d = sys.basis->dim();
    for (int N = 0; N <= sys.basis->n_max(); ++N) {
        double inner = 0.0;
        for (const auto& e : S.by_count[N]) {
            double s = 0.0;
            for (size_t z = 0; z < e.counts.size(); ++z) {
                if (e.counts[z] == 0) continue;
                double v2 = 0.0;
                for (int a = 0; a < d; ++a) {
                    const double dv = e.value[z][a] - w[a];
                    v2 += dv * dv;
                }
                s += e.counts[z] * v2;
            }
            inner += e.prob * s;
        }
        total += sys.weights.weights[N] * inner;
    }
    return total;
}

struct MartingaleCheck {
    double residual = 0.0;     // |mean of the tower mismatch|
    double standard_error = 0.0;
    int samples = 0;
};

// Monte Carlo check of the martingale structure: the fine average S_{n,k}
// aggregated over a coarse child must match S_{n,k'} in conditional mean.
// Estimates E[(1/N) sum_{z'} N_{z'} (B(z') - S_{n,k'}(z'))] over truncated
// samples, which is zero exactly by the tower property.
inline MartingaleCheck martingale_residual(const SectorField& f, double rho, int lev_n, int lev_k,
                                           int lev_kp, int samples, RngStream rng) {
    if (lev_k > lev_kp || lev_kp > lev_n)
        throw std::invalid_argument("martingale_residual: need k <= k' <= n (nesting)");
    const SectorBasis& b = *f.basis;
    const int d = b.dim();
    AveragedGradient fine = snk_gradient_average(f, lev_n, lev_k);
    AveragedGradient coarse = snk_gradient_average(f, lev_n, lev_kp);
    // lookup: composition -> index
    auto key_of = [](const std::vector<int>& c) {
        std::string k;
        for (int v : c) {
            k += std::to_string(v);
            k += ',';
        }
        return k;
    };
    std::vector<std::map<std::string, const SnkEntry*>> fine_ix(b.n_max() + 1), coarse_ix(b.n_max() + 1);
    for (int N = 0; N <= b.n_max(); ++N) {
        for (const auto& e : fine.by_count[N]) fine_ix[N][key_of(e.counts)] = &e;
        for (const auto& e : coarse.by_count[N]) coarse_ix[N][key_of(e.counts)] = &e;
    }
    MartingaleCheck out;
    double acc = 0.0, acc2 = 0.0;
    for (int it = 0; it < samples; ++it) {
        RngStream s = rng.child(it);
        const Configuration mu = sample_configuration_truncated(b.domain(), rho, b.n_max(), s);
        const int N = mu.count();
        if (N == 0) {
            ++out.samples;
            continue;
        }
        std::vector<int> cf(fine.children.size(), 0), cc(coarse.children.size(), 0);
        for (const auto& pnt : mu.points) {
            for (size_t z = 0; z < fine.children.size(); ++z)
                if (fine.children[z].contains(pnt)) {
                    ++cf[z];
                    break;
                }
            for (size_t z = 0; z < coarse.children.size(); ++z)
                if (coarse.children[z].contains(pnt)) {
                    ++cc[z];
                    break;
                }
        }
        const SnkEntry* ef = fine_ix[N].at(key_of(cf));
        const SnkEntry* ec = coarse_ix[N].at(key_of(cc));
        double D = 0.0;
        for (size_t zp = 0; zp < coarse.children.size(); ++zp) {
            if (cc[zp] == 0) continue;
            Vec Bz{{0.0, 0.0}};
            for (size_t z = 0; z < fine.children.size(); ++z) {
                if (cf[z] == 0) continue;
                if (!coarse.children[zp].contains(Point{{fine.children[z].center[0], fine.children[z].center[1]}}))
                    continue;
                for (int a = 0; a < d; ++a) Bz[a] += cf[z] * ef->value[z][a];
            }
            for (int a = 0; a < d; ++a) {
                Bz[a] /= cc[zp];
                D += cc[zp] * (Bz[a] - ec->value[zp][a]);
            }
        }
        D /= N;
        acc += D;
        acc2 += D * D;
        ++out.samples;
    }
    const double mean = acc / out.samples;
    const double var = std::fmax(0.0, acc2 / out.samples - mean * mean);
    out.residual = std::fabs(mean);
    out.standard_error = std::sqrt(var / out.samples);
    return out;
}

} // namespace hmglab
