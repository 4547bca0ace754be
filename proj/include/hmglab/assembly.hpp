#pragma once

// Assembly of the discrete quadratic forms behind nu, nu* and the Laplace
// problem, plus streaming evaluation of energies and moments on solved
// fields.
//
// Discretization: Q1 elements on the symmetric tensor grid, coefficient
// frozen at the element midpoint, directional integrals exact along the
// derivative axis and trapezoid-lumped across the transverse axes. All
// per-level identities the quantities module asserts (flux, slope, duality,
// quadratic response) hold exactly for this family of forms, independent of
// h and of the particle-number truncation.
//
// Two system flavors share the code path:
//   interior system: basis region == U, exterior handled through the
//     conditional coefficient (analytic Poisson exterior);
//   collar system: basis region == B1-expansion of U, raw coefficient at
//     collar midpoints, moving-particle integrals restricted to U. Both nu
//     classes are then optimized under this one functional, which is what
//     makes the interior/collar ordering exact.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "hmglab/coefficients.hpp"
#include "hmglab/sector_grid.hpp"
#include "hmglab/solver.hpp"

namespace hmglab {

struct SectorSystem {
    const SectorBasis* basis = nullptr;
    SectorWeights weights;  // truncated count law on the basis region
    CoefficientModel model;
    double rho = 1.0;
    bool collar = false;      // collar system: raw coefficient; else conditional
    double normalizer = 1.0;  // truncated E[mu(U)] under this system's law
    double norm_rho_u = 1.0;  // rho*|U|, the untruncated normalizer variant

    SectorSystem() = default;
    SectorSystem(const SectorBasis& b, const CoefficientModel& m, double rho_, double mass_floor = 0.99)
        : basis(&b), model(m), rho(rho_) {
        collar = b.collar_width() > 0.0;
        weights = sector_weights(rho_, b.region().volume(), b.n_max(), mass_floor);
        const double frac = b.domain().volume() / b.region().volume();
        double mean_in_U = 0.0;
        for (int n = 0; n <= b.n_max(); ++n) mean_in_U += n * weights.weights[n] * frac;
        normalizer = mean_in_U;
        norm_rho_u = rho_ * b.domain().volume();
    }

    SymMatrix coefficient(const Configuration& mid_config, const Point& x) const {
        if (collar) return evaluate(model, mid_config, x);
        return conditional_coefficient(model, mid_config, x, basis->domain(), rho);
    }
};

namespace detail {

// Walk all (sector, element-orbit) pairs; cb(n, cells, orbit_weight,
// midpoints, corner_nodes) with orbit_weight = pi_n * m_e / V^n.
template <class F>
void walk_elements(const SectorSystem& sys, F&& cb) {
    const SectorBasis& b = *sys.basis;
    const int d = b.dim();
    const double V = b.region().volume();
    Configuration mid;
    mid.region = b.region();
    std::array<std::array<std::int64_t, 4>, kMaxSector> corner_nodes{};
    for (int n = 1; n <= b.n_max(); ++n) {
        const double pref = sys.weights.weights[n] / ipow(V, n);
        if (pref == 0.0) continue;
        b.for_each_multiset(b.spatial_cells(), n, [&](const Tuple& cells) {
            const double w_e = pref * SectorBasis::orbit_size(cells, n);
            mid.points.resize(n);
            for (int i = 0; i < n; ++i) {
                mid.points[i] = b.cell_midpoint(cells[i]);
                for (unsigned c = 0; c < (1u << d); ++c) corner_nodes[i][c] = b.cell_corner(cells[i], c);
            }
            cb(n, cells, w_e, mid, corner_nodes);
        });
    }
}

inline void sort_small(Tuple& t, int n) {
    for (int i = 1; i < n; ++i) {
        const auto key = t[i];
        int j = i - 1;
        while (j >= 0 && t[j] > key) {
            t[j + 1] = t[j];
            --j;
        }
        t[j + 1] = key;
    }
}

} // namespace detail

// ----------------------------------------------------------------------------
// Degree-of-freedom maps (constraint elimination, not penalties)

struct DofEntry {
    std::int32_t dof = -1;  // -1: no unknown (value is the affine offset only)
    Point g{{0.0, 0.0}};    // value = u[dof] + p . g
};

struct DofMap {
    FieldClass klass = FieldClass::Free;
    std::vector<std::vector<DofEntry>> table;  // [sector][node rank]
    std::int64_t n_dofs = 0;
    GaugeRanges gauge;

    const DofEntry& entry(int n, std::int64_t rank) const { return table[n][rank]; }
};

// Dirichlet-affine class: boundary coordinates are eliminated against the
// lower sector plus p*xbar (exact tie, all boundary positions of a particle
// share the same lower-sector unknown); outside coordinates (collar grids)
// are dropped entirely; the empty-configuration value is pinned to zero.
inline DofMap build_dirichlet_map(const SectorBasis& b) {
    DofMap m;
    m.klass = FieldClass::DirichletAffine;
    m.table.resize(b.n_max() + 1);
    // dof numbering: all-interior tuples, sectors 1..n_max
    std::vector<std::vector<std::int32_t>> dof_of_rank(b.n_max() + 1);
    std::int64_t next = 0;
    for (int n = 1; n <= b.n_max(); ++n) {
        dof_of_rank[n].assign(b.node_count(n), -1);
        std::int64_t r = 0;
        b.for_each_multiset(b.spatial_nodes(), n, [&](const Tuple& t) {
            bool interior = true;
            for (int i = 0; i < n; ++i)
                if (b.node_class(t[i]) != NodeClass::Interior) interior = false;
            if (interior) dof_of_rank[n][r] = static_cast<std::int32_t>(next++);
            ++r;
        });
    }
    m.n_dofs = next;
    for (int n = 0; n <= b.n_max(); ++n) {
        m.table[n].resize(b.node_count(n));
        std::int64_t r = 0;
        b.for_each_multiset(b.spatial_nodes(), n, [&](const Tuple& t) {
            DofEntry e;
            Tuple kept{};
            int k = 0;
            for (int i = 0; i < n; ++i) {
                const NodeClass c = b.node_class(t[i]);
                if (c == NodeClass::Interior) {
                    kept[k++] = t[i];
                } else if (c == NodeClass::Boundary) {
                    const Point pos = b.node_position(t[i]);
                    for (int a = 0; a < b.dim(); ++a) e.g[a] += pos[a];
                }
                // Outside: dropped, no offset
            }
            if (k > 0) e.dof = dof_of_rank[k][b.node_rank(kept, k)];
            m.table[n][r++] = e;
        });
    }
    return m;
}

// Free class on the region (nu* collar mode, Laplace): every node of sectors
// 1..n_max is an unknown; per-sector constants form the gauge.
inline DofMap build_free_map(const SectorBasis& b) {
    DofMap m;
    m.klass = FieldClass::Free;
    m.table.resize(b.n_max() + 1);
    std::int64_t next = 0;
    for (int n = 0; n <= b.n_max(); ++n) {
        m.table[n].resize(b.node_count(n));
        if (n == 0) {
            m.table[0][0] = DofEntry{};
            continue;
        }
        const std::int64_t begin = next;
        for (std::int64_t r = 0; r < b.node_count(n); ++r) m.table[n][r].dof = static_cast<std::int32_t>(next++);
        m.gauge.ranges.emplace_back(begin, next);
    }
    m.n_dofs = next;
    return m;
}

// Interior-measurable class inside a collar system: the unknown depends only
// on coordinates in the closure of U; shell coordinates are dropped with no
// offset. On an interior basis this coincides with build_free_map.
inline DofMap build_interior_class_map(const SectorBasis& b) {
    DofMap m;
    m.klass = FieldClass::Neumann;
    m.table.resize(b.n_max() + 1);
    std::vector<std::vector<std::int32_t>> dof_of_rank(b.n_max() + 1);
    std::int64_t next = 0;
    for (int n = 1; n <= b.n_max(); ++n) {
        dof_of_rank[n].assign(b.node_count(n), -1);
        const std::int64_t begin = next;
        std::int64_t r = 0;
        b.for_each_multiset(b.spatial_nodes(), n, [&](const Tuple& t) {
            bool in_closure = true;
            for (int i = 0; i < n; ++i)
                if (b.node_class(t[i]) == NodeClass::Outside) in_closure = false;
            if (in_closure) dof_of_rank[n][r] = static_cast<std::int32_t>(next++);
            ++r;
        });
        if (next > begin) m.gauge.ranges.emplace_back(begin, next);
    }
    m.n_dofs = next;
    for (int n = 0; n <= b.n_max(); ++n) {
        m.table[n].resize(b.node_count(n));
        std::int64_t r = 0;
        b.for_each_multiset(b.spatial_nodes(), n, [&](const Tuple& t) {
            DofEntry e;
            Tuple kept{};
            int k = 0;
            for (int i = 0; i < n; ++i)
                if (b.node_class(t[i]) != NodeClass::Outside) kept[k++] = t[i];
            if (k > 0) e.dof = dof_of_rank[k][b.node_rank(kept, k)];
            m.table[n][r++] = e;
        });
    }
    return m;
}

// ----------------------------------------------------------------------------
// Assembled problem

struct QuadraticProblem {
    const SectorSystem* system = nullptr;
    DofMap dofs;
    CsrMatrix A;                                     // bilinear form on unknowns
    std::array<std::vector<double>, kMaxDim> Bhat;   // affine-offset coupling (Dirichlet)
    SymMatrix Chat;                                  // offset-offset block (Dirichlet)
    std::array<std::vector<double>, kMaxDim> M1;     // plain directional loads (Neumann)
    FieldClass klass = FieldClass::Free;
};

namespace detail {

struct CornerScratch {
    Tuple t{};
    int n = 0;
};

// resolve a full corner assignment to a node rank within its sector
inline std::int64_t rank_of_assignment(const SectorBasis& b, int n, int d,
                                       const std::array<std::array<std::int64_t, 4>, kMaxSector>& corners,
                                       unsigned bits) {
    Tuple t{};
    for (int j = 0; j < n; ++j) {
        const unsigned cj = (bits >> (j * d)) & ((1u << d) - 1u);
        t[j] = static_cast<std::int32_t>(corners[j][cj]);
    }
    sort_small(t, n);
    return b.node_rank(t, n);
}

} // namespace detail

// Assemble the directional energy form for the given unknown class.
//   with_loads: also assemble M1 (Neumann right-hand sides).
inline QuadraticProblem assemble_problem(const SectorSystem& sys, FieldClass klass, bool with_loads = true) {
    const SectorBasis& b = *sys.basis;
    const int d = b.dim();
    QuadraticProblem P;
    P.system = &sys;
    P.klass = klass;
    switch (klass) {
        case FieldClass::DirichletAffine: P.dofs = build_dirichlet_map(b); break;
        case FieldClass::Neumann: P.dofs = build_interior_class_map(b); break;
        case FieldClass::Free: P.dofs = build_free_map(b); break;
    }
    SparseBuilder builder(P.dofs.n_dofs);
    for (int a = 0; a < d; ++a) {
        P.Bhat[a].assign(P.dofs.n_dofs, 0.0);
        if (with_loads) P.M1[a].assign(P.dofs.n_dofs, 0.0);
    }
    P.Chat = SymMatrix::identity(d, 0.0);
    const double h = b.h();
    const bool anisotropic = (d == 2 && sys.model.kind == ModelKind::Constant &&
                              std::fabs(sys.model.base.at(0, 1)) > 0.0);

    detail::walk_elements(sys, [&](int n, const Tuple& cells, double w_e, const Configuration& mid,
                                   const std::array<std::array<std::int64_t, 4>, kMaxSector>& corners) {
        const int dn = d * n;
        const double hpow = ipow(h, dn - 2);
        const auto& table = P.dofs.table[n];
        for (int i = 0; i < n; ++i) {
            if (!b.cell_in_domain(cells[i])) continue;
            const SymMatrix coef = sys.coefficient(mid, mid.points[i]);
            for (int alpha = 0; alpha < d; ++alpha) {
                const unsigned dir_bit = 1u << (i * d + alpha);
                const double wdir = w_e * coef.at(alpha, alpha) * hpow / ipow(2.0, dn - 1);
                const double wload = w_e * ipow(h, dn - 1) / ipow(2.0, dn - 1);
                for (unsigned T = 0; T < (1u << dn); ++T) {
                    if (T & dir_bit) continue;
                    const std::int64_t r_lo = detail::rank_of_assignment(b, n, d, corners, T);
                    const std::int64_t r_hi = detail::rank_of_assignment(b, n, d, corners, T | dir_bit);
                    const DofEntry& lo = table[r_lo];
                    const DofEntry& hi = table[r_hi];
                    // stiffness: (hi - lo) * coef * (hi - lo)
                    const DofEntry* ends[2] = {&lo, &hi};
                    const double sgn[2] = {-1.0, 1.0};
                    for (int ia = 0; ia < 2; ++ia) {
                        for (int ib = 0; ib < 2; ++ib) {
                            const double w = wdir * sgn[ia] * sgn[ib];
                            const DofEntry& ea = *ends[ia];
                            const DofEntry& eb = *ends[ib];
                            const bool ga = ea.g[0] != 0.0 || ea.g[1] != 0.0;
                            const bool gb = eb.g[0] != 0.0 || eb.g[1] != 0.0;
                            if (ea.dof >= 0 && eb.dof >= 0) builder.add(ea.dof, eb.dof, w);
                            if (ea.dof >= 0 && gb)
                                for (int k = 0; k < d; ++k) P.Bhat[k][ea.dof] += w * eb.g[k];
                            if (ga && gb)
                                for (int ka = 0; ka < d; ++ka)
                                    for (int kb = 0; kb < d; ++kb)
                                        P.Chat.at(ka, kb) += w * ea.g[ka] * eb.g[kb];
                        }
                    }
                    if (with_loads) {
                        // int of d_alpha(phi): +1 on the hi corner, -1 on lo
                        if (hi.dof >= 0) P.M1[alpha][hi.dof] += wload;
                        if (lo.dof >= 0) P.M1[alpha][lo.dof] -= wload;
                    }
                }
                if (anisotropic) {
                    for (int beta = 0; beta < d; ++beta) {
                        if (beta == alpha) continue;
                        const double cab = coef.at(alpha, beta);
                        if (cab == 0.0) continue;
                        const unsigned beta_bit = 1u << (i * d + beta);
                        const double wx = w_e * cab * hpow / ipow(2.0, dn);
                        for (unsigned T = 0; T < (1u << dn); ++T) {
                            if (T & (dir_bit | beta_bit)) continue;
                            for (unsigned sa = 0; sa < 2; ++sa)
                                for (unsigned ba = 0; ba < 2; ++ba)
                                    for (unsigned sb = 0; sb < 2; ++sb)
                                        for (unsigned ab = 0; ab < 2; ++ab) {
                                            const unsigned bits_a = T | (sa ? dir_bit : 0u) | (ba ? beta_bit : 0u);
                                            const unsigned bits_b = T | (ab ? dir_bit : 0u) | (sb ? beta_bit : 0u);
                                            const double w = wx * (sa ? 1.0 : -1.0) * (sb ? 1.0 : -1.0);
                                            const auto ra = detail::rank_of_assignment(b, n, d, corners, bits_a);
                                            const auto rb = detail::rank_of_assignment(b, n, d, corners, bits_b);
                                            const DofEntry& ea = table[ra];
                                            const DofEntry& eb = table[rb];
                                            const bool gb = eb.g[0] != 0.0 || eb.g[1] != 0.0;
                                            if (ea.dof >= 0 && eb.dof >= 0) builder.add(ea.dof, eb.dof, w);
                                            if (ea.dof >= 0 && gb)
                                                for (int k = 0; k < d; ++k) P.Bhat[k][ea.dof] += w * eb.g[k];
                                            if (gb && (ea.g[0] != 0.0 || ea.g[1] != 0.0))
                                                for (int ka = 0; ka < d; ++ka)
                                                    for (int kb = 0; kb < d; ++kb)
                                                        P.Chat.at(ka, kb) += w * ea.g[ka] * eb.g[kb];
                                        }
                        }
                    }
                }
            }
        }
    });
    P.A = builder.finalize();
    // scale from the system normalizer (all loads and the form carry 1/norm)
    const double s = 1.0 / sys.normalizer;
    for (auto& v : P.A.val) v *= s;
    for (int a = 0; a < d; ++a) {
        for (auto& v : P.Bhat[a]) v *= s;
        for (auto& v : P.M1[a]) v *= s;
    }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) P.Chat.at(i, j) *= s;
    return P;
}

// Rebuild full node values from the unknown vector (+ affine offsets).
inline SectorField materialize(const QuadraticProblem& P, const std::vector<double>& u,
                               const std::array<double, kMaxDim>& p = {{0.0, 0.0}}) {
    const SectorBasis& b = *P.system->basis;
    SectorField f = SectorField::zeros(b, P.dofs.klass == FieldClass::DirichletAffine
                                              ? FieldClass::DirichletAffine
                                              : (P.klass == FieldClass::Free ? FieldClass::Free : FieldClass::Neumann));
    f.slope = p;
    f.normalizer = P.system->normalizer;
    for (int n = 0; n <= b.n_max(); ++n) {
        for (std::int64_t r = 0; r < b.node_count(n); ++r) {
            const DofEntry& e = P.dofs.table[n][r];
            double v = e.dof >= 0 ? u[e.dof] : 0.0;
            for (int a = 0; a < b.dim(); ++a) v += p[a] * e.g[a];
            f.values[n][r] = v;
        }
    }
    return f;
}

// The discrete affine field ell_{p,U} on this basis (value = sum of p.x over
// coordinates in the closure of U).
inline SectorField affine_field(const SectorBasis& b, const std::array<double, kMaxDim>& p) {
    SectorField f = SectorField::zeros(b, FieldClass::DirichletAffine);
    f.slope = p;
    for (int n = 1; n <= b.n_max(); ++n) {
        std::int64_t r = 0;
        b.for_each_multiset(b.spatial_nodes(), n, [&](const Tuple& t) {
            double v = 0.0;
            for (int i = 0; i < n; ++i) {
                if (b.node_class(t[i]) == NodeClass::Outside) continue;
                const Point pos = b.node_position(t[i]);
                for (int a = 0; a < b.dim(); ++a) v += p[a] * pos[a];
            }
            f.values[n][r++] = v;
        });
    }
    return f;
}

// ----------------------------------------------------------------------------
// Streaming functionals on materialized fields (same quadrature as assembly)

struct MomentOptions {
    const TriadicCube* restrict_box = nullptr;  // default: the system's U
    bool use_coefficient = true;                // false: identity coefficient
    double scale = 0.0;                         // default: 1/normalizer
};

// E[(scale) * int_box grad f . a grad g dmu] under the system quadrature.
inline double energy_product(const SectorSystem& sys, const SectorField& f, const SectorField& g,
                             MomentOptions opt = {}) {
    const SectorBasis& b = *sys.basis;
    const int d = b.dim();
    const double h = b.h();
    const double scale = opt.scale != 0.0 ? opt.scale : 1.0 / sys.normalizer;
    double out = 0.0;
    detail::walk_elements(sys, [&](int n, const Tuple& cells, double w_e, const Configuration& mid,
                                   const std::array<std::array<std::int64_t, 4>, kMaxSector>& corners) {
        const int dn = d * n;
        const double hpow = ipow(h, dn - 2);
        for (int i = 0; i < n; ++i) {
            const bool inside = opt.restrict_box ? b.cell_in_box(cells[i], *opt.restrict_box)
                                                 : b.cell_in_domain(cells[i]);
            if (!inside) continue;
            SymMatrix coef = opt.use_coefficient ? sys.coefficient(mid, mid.points[i])
                                                 : SymMatrix::identity(d, 1.0);
            for (int alpha = 0; alpha < d; ++alpha) {
                const unsigned dir_bit = 1u << (i * d + alpha);
                const double wdir = w_e * coef.at(alpha, alpha) * hpow / ipow(2.0, dn - 1);
                for (unsigned T = 0; T < (1u << dn); ++T) {
                    if (T & dir_bit) continue;
                    const auto r_lo = detail::rank_of_assignment(b, n, d, corners, T);
                    const auto r_hi = detail::rank_of_assignment(b, n, d, corners, T | dir_bit);
                    const double df = f.values[n][r_hi] - f.values[n][r_lo];
                    const double dg = g.values[n][r_hi] - g.values[n][r_lo];
                    out += wdir * df * dg;
                }
                if (d == 2 && opt.use_coefficient && std::fabs(coef.at(0, 1)) > 0.0) {
                    const int beta = 1 - alpha;
                    const unsigned beta_bit = 1u << (i * d + beta);
                    const double wx = w_e * coef.at(alpha, beta) * hpow / ipow(2.0, dn);
                    for (unsigned T = 0; T < (1u << dn); ++T) {
                        if (T & (dir_bit | beta_bit)) continue;
                        // df along alpha averaged over its beta corner, dg along beta
                        for (unsigned ba = 0; ba < 2; ++ba)
                            for (unsigned ab = 0; ab < 2; ++ab) {
                                const auto fa_lo = detail::rank_of_assignment(b, n, d, corners, T | (ba ? beta_bit : 0u));
                                const auto fa_hi = detail::rank_of_assignment(b, n, d, corners, T | dir_bit | (ba ? beta_bit : 0u));
                                const auto gb_lo = detail::rank_of_assignment(b, n, d, corners, T | (ab ? dir_bit : 0u));
                                const auto gb_hi = detail::rank_of_assignment(b, n, d, corners, T | beta_bit | (ab ? dir_bit : 0u));
                                out += wx * (f.values[n][fa_hi] - f.values[n][fa_lo]) *
                                       (g.values[n][gb_hi] - g.values[n][gb_lo]);
                            }
                    }
                }
            }
        }
    });
    return out * scale;
}

// E[(scale) * int_box grad f dmu]  (per space axis)
inline std::array<double, kMaxDim> gradient_moment(const SectorSystem& sys, const SectorField& f,
                                                   MomentOptions opt = {}) {
    opt.use_coefficient = false;
    const SectorBasis& b = *sys.basis;
    const int d = b.dim();
    const double h = b.h();
    const double scale = opt.scale != 0.0 ? opt.scale : 1.0 / sys.normalizer;
    std::array<double, kMaxDim> out{{0.0, 0.0}};
    detail::walk_elements(sys, [&](int n, const Tuple& cells, double w_e, const Configuration&,
                                   const std::array<std::array<std::int64_t, 4>, kMaxSector>& corners) {
        const int dn = d * n;
        const double wl = w_e * ipow(h, dn - 1) / ipow(2.0, dn - 1);
        for (int i = 0; i < n; ++i) {
            const bool inside = opt.restrict_box ? b.cell_in_box(cells[i], *opt.restrict_box)
                                                 : b.cell_in_domain(cells[i]);
            if (!inside) continue;
            for (int alpha = 0; alpha < d; ++alpha) {
                const unsigned dir_bit = 1u << (i * d + alpha);
                for (unsigned T = 0; T < (1u << dn); ++T) {
                    if (T & dir_bit) continue;
                    const auto r_lo = detail::rank_of_assignment(b, n, d, corners, T);
                    const auto r_hi = detail::rank_of_assignment(b, n, d, corners, T | dir_bit);
                    out[alpha] += wl * (f.values[n][r_hi] - f.values[n][r_lo]);
                }
            }
        }
    });
    for (int a = 0; a < d; ++a) out[a] *= scale;
    return out;
}

// E[(scale) * int_box a grad f dmu]
inline std::array<double, kMaxDim> flux_moment(const SectorSystem& sys, const SectorField& f,
                                               MomentOptions opt = {}) {
    const SectorBasis& b = *sys.basis;
    const int d = b.dim();
    const double h = b.h();
    const double scale = opt.scale != 0.0 ? opt.scale : 1.0 / sys.normalizer;
    std::array<double, kMaxDim> out{{0.0, 0.0}};
    detail::walk_elements(sys, [&](int n, const Tuple& cells, double w_e, const Configuration& mid,
                                   const std::array<std::array<std::int64_t, 4>, kMaxSector>& corners) {
        const int dn = d * n;
        const double wl = w_e * ipow(h, dn - 1) / ipow(2.0, dn - 1);
        for (int i = 0; i < n; ++i) {
            const bool inside = opt.restrict_box ? b.cell_in_box(cells[i], *opt.restrict_box)
                                                 : b.cell_in_domain(cells[i]);
            if (!inside) continue;
            const SymMatrix coef = sys.coefficient(mid, mid.points[i]);
            for (int alpha = 0; alpha < d; ++alpha) {
                const unsigned dir_bit = 1u << (i * d + alpha);
                double dsum = 0.0;
                for (unsigned T = 0; T < (1u << dn); ++T) {
                    if (T & dir_bit) continue;
                    const auto r_lo = detail::rank_of_assignment(b, n, d, corners, T);
                    const auto r_hi = detail::rank_of_assignment(b, n, d, corners, T | dir_bit);
                    dsum += f.values[n][r_hi] - f.values[n][r_lo];
                }
                for (int k = 0; k < d; ++k) out[k] += wl * coef.at(k, alpha) * dsum;
            }
        }
    });
    for (int a = 0; a < d; ++a) out[a] *= scale;
    return out;
}

// Per-sector average gradient (1/V^N) int grad_1 f over the full tensor grid;
// used by the S_{n,n} spatial average and the variance diagnostics.
inline std::vector<std::array<double, kMaxDim>> sector_gradient_averages(const SectorSystem& sys,
                                                                         const SectorField& f) {
    const SectorBasis& b = *sys.basis;
    const int d = b.dim();
    const double h = b.h();
    std::vector<std::array<double, kMaxDim>> out(b.n_max() + 1, {{0.0, 0.0}});
    detail::walk_elements(sys, [&](int n, const Tuple& cells, double w_e, const Configuration&,
                                   const std::array<std::array<std::int64_t, 4>, kMaxSector>& corners) {
        const int dn = d * n;
        const double wl = w_e * ipow(h, dn - 1) / ipow(2.0, dn - 1);
        for (int i = 0; i < n; ++i) {
            if (!b.cell_in_domain(cells[i])) continue;
            for (int alpha = 0; alpha < d; ++alpha) {
                const unsigned dir_bit = 1u << (i * d + alpha);
                for (unsigned T = 0; T < (1u << dn); ++T) {
                    if (T & dir_bit) continue;
                    const auto r_lo = detail::rank_of_assignment(b, n, d, corners, T);
                    const auto r_hi = detail::rank_of_assignment(b, n, d, corners, T | dir_bit);
                    out[n][alpha] += wl * (f.values[n][r_hi] - f.values[n][r_lo]);
                }
            }
        }
    });
    for (int n = 1; n <= b.n_max(); ++n) {
        // normalize by pi_n * n * (|U|/V): the measure of one moving particle
        const double denom = sys.weights.weights[n] * n *
                             (b.domain().volume() / b.region().volume());
        if (denom > 0.0)
            for (int a = 0; a < d; ++a) out[n][a] /= denom;
    }
    return out;
}

// L2-type quantities: E[f g] with exact tensor 2-point Gauss per element.
inline double l2_product(const SectorSystem& sys, const SectorField& f, const SectorField& g) {
    const SectorBasis& b = *sys.basis;
    const int d = b.dim();
    const int dn_max = d * b.n_max();
    if (dn_max > 12) throw std::runtime_error("l2_product: sector dimension too large for dense Gauss");
    double out = sys.weights.weights[0] * f.values[0][0] * g.values[0][0];
    const double gq[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
    std::vector<std::int64_t> ranks;
    detail::walk_elements(sys, [&](int n, const Tuple&, double w_e, const Configuration&,
                                   const std::array<std::array<std::int64_t, 4>, kMaxSector>& corners) {
        const int dn = d * n;
        const double wq = w_e * ipow(b.h(), dn) / ipow(2.0, dn);
        ranks.resize(1u << dn);
        for (unsigned c = 0; c < (1u << dn); ++c) ranks[c] = detail::rank_of_assignment(b, n, d, corners, c);
        // per-element: sum over 2^dn Gauss points of (interpolated f)(interpolated g)
        for (unsigned q = 0; q < (1u << dn); ++q) {
            double fv = 0.0, gv = 0.0;
            for (unsigned c = 0; c < (1u << dn); ++c) {
                double w = 1.0;
                for (int bit = 0; bit < dn; ++bit) {
                    const double x = gq[(q >> bit) & 1u];
                    w *= ((c >> bit) & 1u) ? x : 1.0 - x;
                }
                fv += w * f.values[n][ranks[c]];
                gv += w * g.values[n][ranks[c]];
            }
            out += wq * fv * gv;
        }
    });
    return out;
}

// per-sector plain mean (1/V^n) int f_n  (trapezoid weights; exact for Q1)
inline std::vector<double> sector_means(const SectorBasis& b, const SectorField& f) {
    std::vector<double> out(b.n_max() + 1, 0.0);
    out[0] = f.values[0][0];
    for (int n = 1; n <= b.n_max(); ++n) {
        const int d = b.dim();
        const int dn = d * n;
        double acc = 0.0;
        const double wq = ipow(b.h(), dn) / ipow(2.0, dn) / ipow(b.region().volume(), n);
        b.for_each_multiset(b.spatial_cells(), n, [&](const Tuple& cells) {
            const double m_e = SectorBasis::orbit_size(cells, n);
            std::array<std::array<std::int64_t, 4>, kMaxSector> corners{};
            for (int i = 0; i < n; ++i)
                for (unsigned c = 0; c < (1u << d); ++c) corners[i][c] = b.cell_corner(cells[i], c);
            double s = 0.0;
            for (unsigned c = 0; c < (1u << dn); ++c)
                s += f.values[n][detail::rank_of_assignment(b, n, d, corners, c)];
            acc += m_e * wq * s;
        });
        out[n] = acc;
    }
    return out;
}

// E[f] under the system law
inline double expectation(const SectorSystem& sys, const SectorField& f) {
    const auto means = sector_means(*sys.basis, f);
    double e = 0.0;
    for (int n = 0; n <= sys.basis->n_max(); ++n) e += sys.weights.weights[n] * means[n];
    return e;
}

// subtract the per-sector mean in place (the discrete E[.|G_U] gauge)
inline void recenter_per_sector(SectorField& f) {
    const auto means = sector_means(*f.basis, f);
    for (int n = 0; n <= f.basis->n_max(); ++n)
        for (auto& v : f.values[n]) v -= means[n];
}

} // namespace hmglab
