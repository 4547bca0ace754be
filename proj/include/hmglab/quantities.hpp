#pragma once

// The subadditive quantities nu(U,p), nu*(U,q), the finite-volume matrix pair
// abar(U) / abarstar(U), the duality defect J(U,p,q) and its optimizer, and
// the identity residuals the acceptance suite consumes. Every residual is a
// first-class output.
//
// One solve per basis direction and unknown class is enough: minimizers are
// linear in the slope, so arbitrary (p, q) are combinations of the cached
// direction solves.

#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "hmglab/assembly.hpp"

namespace hmglab {

struct Discretization {
    double h = 0.25;
    int n_max = 3;
    double mass_floor = 0.99;
    std::int64_t node_budget = 8'000'000;
    double solver_tol = 1e-10;
    int solver_max_iterations = 200000;
};

enum class NuStarMode { Interior, Collar };

inline const char* to_string(NuStarMode m) { return m == NuStarMode::Interior ? "interior" : "collar"; }

using Vec = std::array<double, kMaxDim>;

inline Vec vec_scale(const Vec& v, double c) { return {{v[0] * c, v[1] * c}}; }
inline Vec vec_sub(const Vec& a, const Vec& b) { return {{a[0] - b[0], a[1] - b[1]}}; }
inline double vec_dot(const Vec& a, const Vec& b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += a[i] * b[i];
    return s;
}
inline double vec_norm(const Vec& v, int d) { return std::sqrt(vec_dot(v, v, d)); }
inline Vec basis_vec(int i) {
    Vec v{{0.0, 0.0}};
    v[i] = 1.0;
    return v;
}

// Everything assembled for one cube in one mode. Results hold a shared_ptr to
// keep the basis alive.
struct Workspace {
    SectorBasis basis;
    SectorSystem system;
    QuadraticProblem dirichlet;
    QuadraticProblem neumann;  // Free class on this basis
    std::vector<std::vector<double>> nu_dir_solutions;   // per basis direction
    std::vector<std::vector<double>> nust_dir_solutions; // per basis direction
    std::vector<SolveStats> nu_stats, nust_stats;

    Workspace(const TriadicCube& U, const CoefficientModel& model, double rho, const Discretization& disc,
              double collar_width)
        : basis(U, disc.h, disc.n_max, collar_width, disc.node_budget),
          system(basis, model, rho, disc.mass_floor) {}
};

class QuantityContext {
  public:
    QuantityContext(const CoefficientModel& model, double rho, const Discretization& disc,
                    NuStarMode mode = NuStarMode::Interior)
        : model_(model), rho_(rho), disc_(disc), mode_(mode) {}

    const CoefficientModel& model() const { return model_; }
    double rho() const { return rho_; }
    const Discretization& disc() const { return disc_; }
    NuStarMode mode() const { return mode_; }
    int dim() const { return model_.dim; }

    std::shared_ptr<Workspace> workspace(const TriadicCube& U) {
        std::ostringstream key;
        key.precision(17);
        key << U.dim << ":" << U.side << ":" << U.center[0] << ":" << U.center[1] << ":"
            << (mode_ == NuStarMode::Collar ? "c" : "i");
        auto it = cache_.find(key.str());
        if (it != cache_.end()) return it->second;
        const double collar = mode_ == NuStarMode::Collar ? 1.0 : 0.0;
        auto ws = std::make_shared<Workspace>(U, model_, rho_, disc_, collar);
        ws->dirichlet = assemble_problem(ws->system, FieldClass::DirichletAffine);
        ws->neumann = assemble_problem(ws->system, FieldClass::Free);
        cache_[key.str()] = ws;
        return ws;
    }

    // dof-space minimizer of nu for slope p (linear combination of the cached
    // basis-direction solves)
    const std::vector<double>& nu_solution(Workspace& ws, int direction) {
        ensure_direction_solves(ws);
        return ws.nu_dir_solutions[direction];
    }
    const std::vector<double>& nust_solution(Workspace& ws, int direction) {
        ensure_direction_solves(ws);
        return ws.nust_dir_solutions[direction];
    }

    std::vector<double> nu_solution_for(Workspace& ws, const Vec& p) {
        ensure_direction_solves(ws);
        std::vector<double> u(ws.dirichlet.dofs.n_dofs, 0.0);
        for (int a = 0; a < dim(); ++a)
            if (p[a] != 0.0)
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(u.size()); ++i)
                    u[i] += p[a] * ws.nu_dir_solutions[a][i];
        return u;
    }
    std::vector<double> nust_solution_for(Workspace& ws, const Vec& q) {
        ensure_direction_solves(ws);
        std::vector<double> u(ws.neumann.dofs.n_dofs, 0.0);
        for (int a = 0; a < dim(); ++a)
            if (q[a] != 0.0)
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(u.size()); ++i)
                    u[i] += q[a] * ws.nust_dir_solutions[a][i];
        return u;
    }

    CgOptions cg_options() const { return CgOptions{disc_.solver_tol, disc_.solver_max_iterations}; }

  private:
    void ensure_direction_solves(Workspace& ws) {
        if (!ws.nu_dir_solutions.empty()) return;
        const int d = dim();
        ws.nu_dir_solutions.resize(d);
        ws.nust_dir_solutions.resize(d);
        ws.nu_stats.resize(d);
        ws.nust_stats.resize(d);
        for (int a = 0; a < d; ++a) {
            std::vector<double> rhs(ws.dirichlet.dofs.n_dofs, 0.0);
            for (std::int64_t i = 0; i < ws.dirichlet.dofs.n_dofs; ++i) rhs[i] = -ws.dirichlet.Bhat[a][i];
            ws.nu_stats[a] = pcg_solve(ws.dirichlet.A, rhs, ws.nu_dir_solutions[a], ws.dirichlet.dofs.gauge,
                                       cg_options());
            std::vector<double> rhs2(ws.neumann.dofs.n_dofs, 0.0);
            for (std::int64_t i = 0; i < ws.neumann.dofs.n_dofs; ++i) rhs2[i] = ws.neumann.M1[a][i];
            ws.nust_stats[a] = pcg_solve(ws.neumann.A, rhs2, ws.nust_dir_solutions[a], ws.neumann.dofs.gauge,
                                         cg_options());
        }
    }

    CoefficientModel model_;
    double rho_;
    Discretization disc_;
    NuStarMode mode_;
    std::map<std::string, std::shared_ptr<Workspace>> cache_;
};

// ----------------------------------------------------------------------------

struct NuResult {
    double value = 0.0;           // truncated-mean normalizer
    double value_rho_u = 0.0;     // rho|U| normalizer variant
    Vec p{{0, 0}};
    SectorField minimizer;        // v = ell_p + phi
    Vec flux{{0, 0}};             // E[(1/norm) int a grad v dmu]
    double slope_residual = 0.0;  // |E[(1/norm) int grad v dmu] - p|
    double flux_residual = 0.0;   // |flux - abar(U) p| (filled by abar_pair callers)
    SolveStats stats;
    std::shared_ptr<Workspace> ws;
};

struct NuStarResult {
    double value = 0.0;
    double value_rho_u = 0.0;
    Vec q{{0, 0}};
    SectorField maximizer;
    Vec avg_gradient{{0, 0}};  // E[(1/norm) int grad u dmu]  (= abarstar^{-1} q)
    std::vector<Vec> sector_slopes;  // per-count conditional average gradients
    NuStarMode mode = NuStarMode::Interior;
    SolveStats stats;
    std::shared_ptr<Workspace> ws;
};

struct JResult {
    double value = 0.0;
    Vec p{{0, 0}}, q{{0, 0}};
    SectorField optimizer;          // v_J, per-sector recentered
    double energy_residual = 0.0;   // |J - E[(1/norm) int 1/2 grad vJ . a grad vJ]|
    Vec slope{{0, 0}};              // E[(1/norm) int grad vJ dmu]
    std::shared_ptr<Workspace> ws;
};

inline NuResult nu(const TriadicCube& U, const Vec& p, QuantityContext& ctx) {
    auto ws = ctx.workspace(U);
    NuResult r;
    r.ws = ws;
    r.p = p;
    auto u = ctx.nu_solution_for(*ws, p);
    r.minimizer = materialize(ws->dirichlet, u, p);
    // normalization E[v - ell_p] = 0
    const SectorField lp = affine_field(ws->basis, p);
    double shift = 0.0;
    {
        SectorField diff = r.minimizer;
        for (int n = 0; n <= ws->basis.n_max(); ++n)
            for (std::int64_t i = 0; i < ws->basis.node_count(n); ++i) diff.values[n][i] -= lp.values[n][i];
        shift = expectation(ws->system, diff);
    }
    for (int n = 0; n <= ws->basis.n_max(); ++n)
        for (auto& v : r.minimizer.values[n]) v -= shift;
    r.value = 0.5 * energy_product(ws->system, r.minimizer, r.minimizer);
    r.value_rho_u = r.value * ws->system.normalizer / ws->system.norm_rho_u;
    r.flux = flux_moment(ws->system, r.minimizer);
    const Vec slope = gradient_moment(ws->system, r.minimizer);
    r.slope_residual = vec_norm(vec_sub(slope, p), ctx.dim());
    r.stats = ws->nu_stats.empty() ? SolveStats{} : ws->nu_stats[0];
    return r;
}

inline NuStarResult nu_star(const TriadicCube& U, const Vec& q, QuantityContext& ctx) {
    auto ws = ctx.workspace(U);
    NuStarResult r;
    r.ws = ws;
    r.q = q;
    r.mode = ctx.mode();
    auto u = ctx.nust_solution_for(*ws, q);
    r.maximizer = materialize(ws->neumann, u);
    r.avg_gradient = gradient_moment(ws->system, r.maximizer);
    r.value = -0.5 * energy_product(ws->system, r.maximizer, r.maximizer) +
              vec_dot(q, r.avg_gradient, ctx.dim());
    r.value_rho_u = r.value * ws->system.normalizer / ws->system.norm_rho_u;
    const auto per_sector = sector_gradient_averages(ws->system, r.maximizer);
    r.sector_slopes.assign(per_sector.begin(), per_sector.end());
    r.stats = ws->nust_stats.empty() ? SolveStats{} : ws->nust_stats[0];
    return r;
}

struct AbarPair {
    SymMatrix abar;       // from nu
    SymMatrix abarstar;   // from nu*
    double asymmetry = 0.0;       // worst bilinear-form asymmetry before symmetrizing
    double ordering_margin = 0.0; // min eigenvalue of (abar - abarstar)
    std::shared_ptr<Workspace> ws;
};

inline AbarPair abar_pair(const TriadicCube& U, QuantityContext& ctx, double asymmetry_tol = 1e-8) {
    const int d = ctx.dim();
    auto ws = ctx.workspace(U);
    AbarPair out;
    out.ws = ws;
    SymMatrix Af = SymMatrix::identity(d, 0.0);
    SymMatrix Gi = SymMatrix::identity(d, 0.0);
    for (int i = 0; i < d; ++i) {
        NuResult ni = nu(U, basis_vec(i), ctx);
        NuStarResult si = nu_star(U, basis_vec(i), ctx);
        for (int j = 0; j < d; ++j) {
            Af.at(i, j) = ni.flux[j];        // row i: abar e_i (flux route)
            Gi.at(i, j) = si.avg_gradient[j]; // row i: abarstar^{-1} e_i
        }
    }
    out.asymmetry = std::fmax(Af.asymmetry(), Gi.asymmetry());
    if (out.asymmetry > asymmetry_tol)
        throw std::runtime_error("abar_pair: bilinear-form asymmetry " + std::to_string(out.asymmetry) +
                                 " exceeds tolerance (assembly bug)");
    // symmetrize
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double a = 0.5 * (Af.at(i, j) + Af.at(j, i));
            Af.at(i, j) = Af.at(j, i) = a;
            const double g = 0.5 * (Gi.at(i, j) + Gi.at(j, i));
            Gi.at(i, j) = Gi.at(j, i) = g;
        }
    out.abar = Af;
    out.abarstar = Gi.inverse();
    out.ordering_margin = out.abar.minus(out.abarstar).eig_min();
    return out;
}

inline JResult j_value(const TriadicCube& U, const Vec& p, const Vec& q, QuantityContext& ctx,
                       double duality_tol = 1e-9) {
    NuResult nv = nu(U, p, ctx);
    NuStarResult ns = nu_star(U, q, ctx);
    JResult r;
    r.ws = nv.ws;
    r.p = p;
    r.q = q;
    r.value = nv.value + ns.value - vec_dot(p, q, ctx.dim());
    if (r.value < -duality_tol)
        throw std::runtime_error("j_value: negative duality defect " + std::to_string(r.value) +
                                 " (duality violation signals a bug)");
    SectorField vj = ns.maximizer;
    for (int n = 0; n <= r.ws->basis.n_max(); ++n)
        for (std::int64_t i = 0; i < r.ws->basis.node_count(n); ++i)
            vj.values[n][i] -= nv.minimizer.values[n][i];
    recenter_per_sector(vj);
    r.optimizer = std::move(vj);
    const double e = 0.5 * energy_product(r.ws->system, r.optimizer, r.optimizer);
    r.energy_residual = std::fabs(r.value - e);
    r.slope = gradient_moment(r.ws->system, r.optimizer);
    return r;
}

// J at arbitrary slopes from the recovered quadratic forms (no new solves).
inline double j_from_matrices(const AbarPair& m, const Vec& p, const Vec& q, int d) {
    const SymMatrix inv = m.abarstar.inverse();
    double v = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            v += 0.5 * p[i] * m.abar.at(i, j) * p[j] + 0.5 * q[i] * inv.at(i, j) * q[j];
    v -= vec_dot(p, q, d);
    return v;
}

// E[(1/norm) int_U |grad phi* - grad phi|^2 dmu] at q = abarstar(U) p;
// contract: <= 2 J(U, p, abarstar p) since a >= Id.
inline double optimizer_gap(const TriadicCube& U, const Vec& p, QuantityContext& ctx,
                            const AbarPair& pair) {
    const Vec q = pair.abarstar.apply(p);
    JResult j = j_value(U, p, q, ctx);
    MomentOptions opt;
    opt.use_coefficient = false;
    return energy_product(j.ws->system, j.optimizer, j.optimizer, opt);
}

// ----------------------------------------------------------------------------
// Quadratic response checks: |LHS - RHS| of eq-style identities, normalized
// by the energy scale.

enum class ResponseKind { Nu, NuStar, J };

// Pair a field against the Dirichlet-class test functions: the residual
// vector of the first-order condition; also the admissibility filter for
// a-harmonicity.
inline std::vector<double> apply_form_to_tests(const SectorSystem& sys, const DofMap& dofs,
                                               const SectorField& f) {
    const SectorBasis& b = *sys.basis;
    const int d = b.dim();
    const double h = b.h();
    std::vector<double> r(dofs.n_dofs, 0.0);
    detail::walk_elements(sys, [&](int n, const Tuple& cells, double w_e, const Configuration& mid,
                                   const std::array<std::array<std::int64_t, 4>, kMaxSector>& corners) {
        const int dn = d * n;
        const double hpow = ipow(h, dn - 2);
        const auto& table = dofs.table[n];
        for (int i = 0; i < n; ++i) {
            if (!b.cell_in_domain(cells[i])) continue;
            const SymMatrix coef = sys.coefficient(mid, mid.points[i]);
            for (int alpha = 0; alpha < d; ++alpha) {
                const unsigned dir_bit = 1u << (i * d + alpha);
                const double wdir = w_e * coef.at(alpha, alpha) * hpow / ipow(2.0, dn - 1);
                for (unsigned T = 0; T < (1u << dn); ++T) {
                    if (T & dir_bit) continue;
                    const auto r_lo = detail::rank_of_assignment(b, n, d, corners, T);
                    const auto r_hi = detail::rank_of_assignment(b, n, d, corners, T | dir_bit);
                    const double df = f.values[n][r_hi] - f.values[n][r_lo];
                    if (table[r_hi].dof >= 0) r[table[r_hi].dof] += wdir * df;
                    if (table[r_lo].dof >= 0) r[table[r_lo].dof] -= wdir * df;
                }
            }
        }
    });
    for (auto& v : r) v /= sys.normalizer;
    return r;
}

inline double harmonicity_residual(const SectorSystem& sys, const DofMap& dirichlet_dofs,
                                   const SectorField& f) {
    const auto r = apply_form_to_tests(sys, dirichlet_dofs, f);
    double m = 0.0;
    for (double v : r) m = std::fmax(m, std::fabs(v));
    return m;
}

inline double quadratic_response_check(const TriadicCube& U, ResponseKind kind, const SectorField& candidate,
                                       QuantityContext& ctx, const Vec& p, const Vec& q) {
    auto ws = ctx.workspace(U);
    const SectorSystem& sys = ws->system;
    const int d = ctx.dim();
    if (candidate.basis != &ws->basis)
        throw std::invalid_argument("quadratic_response_check: candidate lives on a different basis");
    if (kind == ResponseKind::Nu) {
        if (candidate.tag != FieldClass::DirichletAffine)
            throw std::invalid_argument("quadratic_response_check: nu candidate must be dirichlet-affine");
        NuResult nv = nu(U, p, ctx);
        SectorField diff = candidate;
        for (int n = 0; n <= ws->basis.n_max(); ++n)
            for (std::int64_t i = 0; i < ws->basis.node_count(n); ++i)
                diff.values[n][i] -= nv.minimizer.values[n][i];
        const double lhs = 0.5 * energy_product(sys, diff, diff);
        const double rhs = 0.5 * energy_product(sys, candidate, candidate) - nv.value;
        const double scale = std::fmax(1.0, std::fabs(nv.value));
        return std::fabs(lhs - rhs) / scale;
    }
    if (kind == ResponseKind::NuStar) {
        NuStarResult ns = nu_star(U, q, ctx);
        SectorField diff = candidate;
        for (int n = 0; n <= ws->basis.n_max(); ++n)
            for (std::int64_t i = 0; i < ws->basis.node_count(n); ++i)
                diff.values[n][i] -= ns.maximizer.values[n][i];
        const double lhs = 0.5 * energy_product(sys, diff, diff);
        const double functional = -0.5 * energy_product(sys, candidate, candidate) +
                                  vec_dot(q, gradient_moment(sys, candidate), d);
        const double rhs = ns.value - functional;
        const double scale = std::fmax(1.0, std::fabs(ns.value));
        return std::fabs(lhs - rhs) / scale;
    }
    // J: candidate must be discretely a-harmonic
    const double harm = harmonicity_residual(sys, ws->dirichlet.dofs, candidate);
    if (harm > 1e-6)
        throw std::invalid_argument("quadratic_response_check: J candidate is not a-harmonic (residual " +
                                    std::to_string(harm) + ")");
    JResult j = j_value(U, p, q, ctx);
    SectorField diff = candidate;
    for (int n = 0; n <= ws->basis.n_max(); ++n)
        for (std::int64_t i = 0; i < ws->basis.node_count(n); ++i)
            diff.values[n][i] -= j.optimizer.values[n][i];
    const double lhs = 0.5 * energy_product(sys, diff, diff);
    const double functional = -0.5 * energy_product(sys, candidate, candidate) -
                              vec_dot(p, flux_moment(sys, candidate), d) +
                              vec_dot(q, gradient_moment(sys, candidate), d);
    const double rhs = j.value - functional;
    const double scale = std::fmax(1.0, std::fabs(j.value) + 0.5 * energy_product(sys, candidate, candidate));
    return std::fabs(lhs - rhs) / scale;
}

} // namespace hmglab
