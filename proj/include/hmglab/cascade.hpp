#pragma once

// Multi-scale driver: per-level matrix pairs and duality defects, the
// subadditivity defects tau_m, two-scale comparison, variance and flatness
// defects, the weighted Step-4 iteration diagnostic, and the algebraic rate
// fit. Monotonicity statements across levels are judged against a band
// calibrated from a constant-model run on the same plan (the rho|U|-variant
// deviation from the exact answer, which measures the severity of the
// particle-number truncation at each level); the band is part of the record.

#include <cmath>
#include <string>
#include <vector>

#include "hmglab/quantities.hpp"

namespace hmglab {

struct CascadeRecord {
    int level = 0;
    double h = 0.0;
    int n_max = 0;
    SymMatrix abar;               // mode-dependent finite-volume matrix
    SymMatrix abarstar;
    std::vector<double> j_diag;   // J(box_m, e_i, abarstar e_i) per direction
    double tau = 0.0;             // defect vs the next level (last record: 0)
    double gap = 0.0;             // |abar - abarstar| spectral
    double gap_bound = 0.0;       // sqrt(2 lambda_max(abar)) * sup_p sqrt(J(p, abarstar p))
    double variance_defect = 0.0; // V_m at (p, q) = (e_1, abarstar e_1), interior system
    double flatness = 0.0;        // interior system
    double optimizer_gap = 0.0;
    double two_scale_lhs = 0.0, two_scale_rhs = 0.0;  // vs the previous level (0 at level 0)
    double truncated_mass = 1.0;
    double truncated_mass_interior = 1.0;
    double normalizer = 0.0, normalizer_rho_u = 0.0;
    double band = 0.0;            // monotonicity band vs the next level
    double abar_rho_u_dev = 0.0;  // | abar^{rho|U|}_const-style deviation | driver fills for constant runs
    std::string warning;
    double wall_seconds = 0.0;    // serialized separately from the record log
};

struct RateFit {
    double alpha = 0.0;
    double constant = 0.0;
    double residual = 0.0;   // rms residual of the log-linear fit
    bool degenerate = false; // all gaps below resolution (exact homogenization)
    std::string reference;
    int points = 0;
};

struct CascadePlan {
    int levels = 2;                // m = 0..levels
    std::vector<double> h_per_level;
    int n_max = 3;
    double rho = 1.0;
    NuStarMode mode = NuStarMode::Interior;
    double solver_tol = 1e-10;
    double mass_floor = 0.99;
    std::int64_t node_budget = 8'000'000;

    double h_at(int m) const {
        if (h_per_level.empty()) return 0.25;
        return h_per_level[std::min<size_t>(m, h_per_level.size() - 1)];
    }
};

inline Discretization plan_disc(const CascadePlan& plan, int m) {
    Discretization d;
    d.h = plan.h_at(m);
    d.n_max = plan.n_max;
    d.mass_floor = plan.mass_floor;
    d.node_budget = plan.node_budget;
    d.solver_tol = plan.solver_tol;
    return d;
}

// tau_m = sup_{p in B1}(nu_m - nu_{m+1}) + sup_{q in B1}(nu*_m - nu*_{m+1});
// both sups are eigenvalues of quadratic-form differences, evaluated exactly.
inline std::vector<double> tau_defects(const std::vector<CascadeRecord>& records) {
    std::vector<double> out;
    for (size_t m = 0; m + 1 < records.size(); ++m) {
        const SymMatrix dnu = records[m].abar.minus(records[m + 1].abar);
        const SymMatrix dnus = records[m].abarstar.inverse().minus(records[m + 1].abarstar.inverse());
        out.push_back(0.5 * dnu.eig_max() + 0.5 * dnus.eig_max());
    }
    return out;
}

// Least-squares fit of log|abar(box_m) - ref| against m log 3.
inline RateFit gap_and_rate(const std::vector<CascadeRecord>& records, const std::string& reference = "midpoint",
                            double resolution = 1e-12) {
    if (records.size() < 3) throw std::invalid_argument("gap_and_rate: need at least 3 levels");
    RateFit fit;
    fit.reference = reference;
    const CascadeRecord& last = records.back();
    SymMatrix ref = reference == "largest"
                        ? last.abar
                        : last.abar.plus(last.abarstar).scaled(0.5);
    std::vector<double> xs, ys;
    for (const auto& r : records) {
        const double g = r.abar.minus(ref).spectral_norm();
        if (g <= resolution) continue;  // below resolution: excluded with a note
        xs.push_back(r.level * std::log(3.0));
        ys.push_back(std::log(g));
    }
    fit.points = static_cast<int>(xs.size());
    if (fit.points < 3) {
        fit.degenerate = true;
        return fit;
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double n = static_cast<double>(xs.size());
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double icept = (sy - slope * sx) / n;
    fit.alpha = -slope;
    fit.constant = std::exp(icept);
    double rss = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double e = ys[i] - (icept + slope * xs[i]);
        rss += e * e;
    }
    fit.residual = std::sqrt(rss / n);
    return fit;
}

// F_tilde_m = sum_{n<=m} 3^{-beta(m-n)/2} F_n and the empirical contraction
// ratio; theta_hat is the worst consecutive ratio.
struct Step4Result {
    std::vector<double> weighted;  // F_tilde
    double theta_hat = 0.0;
    bool theta_defined = false;
    bool contraction = false;
};

inline Step4Result step4_diagnostic(const std::vector<double>& F, double beta) {
    if (F.size() < 3) throw std::invalid_argument("step4_diagnostic: need at least 3 levels");
    Step4Result out;
    const double w = std::pow(3.0, -beta / 2.0);
    out.weighted.resize(F.size());
    for (size_t m = 0; m < F.size(); ++m) {
        double acc = 0.0;
        for (size_t n = 0; n <= m; ++n) acc += std::pow(w, static_cast<double>(m - n)) * F[n];
        out.weighted[m] = acc;
    }
    double worst = 0.0;
    bool any = false;
    for (size_t m = 0; m + 1 < out.weighted.size(); ++m) {
        if (out.weighted[m] <= 0.0) continue;
        worst = std::fmax(worst, out.weighted[m + 1] / out.weighted[m]);
        any = true;
    }
    out.theta_defined = any;
    out.theta_hat = worst;
    out.contraction = any && worst < 1.0;
    return out;
}

// Pull a field solved on a (possibly translated) child cube back to the
// parent basis: the child optimizer is measurable w.r.t. the child region, so
// a parent node's value reads off the child field at the coordinates inside
// the child closure.
inline SectorField pullback_child_field(const SectorBasis& parent, const SectorField& child) {
    const SectorBasis& cb = *child.basis;
    SectorField out = SectorField::zeros(parent, child.tag);
    const int d = parent.dim();
    for (int n = 0; n <= parent.n_max(); ++n) {
        std::int64_t r = 0;
        parent.for_each_multiset(parent.spatial_nodes(), n, [&](const Tuple& t) {
            Tuple kept{};
            int k = 0;
            for (int i = 0; i < n; ++i) {
                const Point x = parent.node_position(t[i]);
                bool inside = true;
                for (int a = 0; a < d; ++a)
                    if (x[a] < cb.region().lo(a) - 1e-9 || x[a] > cb.region().hi(a) + 1e-9) inside = false;
                if (!inside) continue;
                // child node id at the same position
                std::int64_t s = 0, mul = 1;
                for (int a = 0; a < d; ++a) {
                    const auto ia = static_cast<std::int64_t>(std::llround((x[a] - cb.region().lo(a)) / cb.h()));
                    s += ia * mul;
                    mul *= cb.nodes_per_axis();
                }
                kept[k++] = static_cast<std::int32_t>(s);
            }
            if (k <= cb.n_max()) {
                detail::sort_small(kept, k);
                out.values[n][r] = child.values[k][cb.node_rank(kept, k)];
            }
            ++r;
        });
    }
    return out;
}

struct TwoScaleResult {
    double lhs = 0.0;  // averaged 1/2 |grad v(box_n) - grad v(z+box_k)|^2
    double rhs = 0.0;  // J(box_k) - J(box_n)
};

// Comparison between two scales for the J optimizers, computed on interior
// systems with a shared h (child grids embed into the parent grid).
inline TwoScaleResult two_scale_check(int n, int k, const Vec& p, const Vec& q, QuantityContext& ctx) {
    if (k > n) throw std::invalid_argument("two_scale_check: need k <= n");
    TwoScaleResult out;
    const TriadicCube parent = triadic_cube(ctx.dim(), n);
    JResult jn = j_value(parent, p, q, ctx);
    if (k == n) return out;

    // enumerate the 3^{d(n-k)} child cubes by recursive subdivision
    std::vector<TriadicCube> cubes{parent};
    for (int lev = n; lev > k; --lev) {
        std::vector<TriadicCube> next;
        for (const auto& c : cubes)
            for (const auto& ch : c.children()) next.push_back(ch);
        cubes = next;
    }

    auto parent_ws = ctx.workspace(parent);
    double lhs = 0.0;
    double child_J = 0.0;
    for (const auto& child : cubes) {
        // child problem on its own grid (same h); stationarity makes all
        // children congruent, but the centers differ, so solve per child via
        // the translated cube (the workspace cache keys on the center).
        JResult jk = j_value(child, p, q, ctx);
        child_J += jk.value;
        SectorField pulled = pullback_child_field(parent_ws->basis, jk.optimizer);
        SectorField diff = jn.optimizer;
        for (int s = 0; s <= parent_ws->basis.n_max(); ++s)
            for (std::int64_t i = 0; i < parent_ws->basis.node_count(s); ++i)
                diff.values[s][i] -= pulled.values[s][i];
        MomentOptions opt;
        opt.restrict_box = &child;
        opt.use_coefficient = false;
        opt.scale = 1.0 / (parent_ws->system.normalizer * child.volume() / parent.volume());
        lhs += 0.5 * energy_product(parent_ws->system, diff, diff, opt);
    }
    out.lhs = lhs / static_cast<double>(cubes.size());
    out.rhs = child_J / static_cast<double>(cubes.size()) - jn.value;
    return out;
}

// V_n = E[(1/norm) int |S_n grad v - (abarstar^{-1} q - p)|^2 dmu] by exact
// per-sector integration on the interior system.
inline double variance_defect(int n, const Vec& p, const Vec& q, QuantityContext& ctx) {
    const TriadicCube box = triadic_cube(ctx.dim(), n);
    AbarPair pair = abar_pair(box, ctx);
    JResult j = j_value(box, p, q, ctx);
    const Vec w = vec_sub(pair.abarstar.inverse().apply(q), p);
    const auto s = sector_gradient_averages(j.ws->system, j.optimizer);
    const auto& wts = j.ws->system.weights;
    double v = 0.0;
    for (int N = 1; N <= j.ws->basis.n_max(); ++N) {
        double d2 = 0.0;
        for (int a = 0; a < ctx.dim(); ++a) {
            const double dd = s[N][a] - w[a];
            d2 += dd * dd;
        }
        v += wts.weights[N] * N * d2 * (box.volume() / j.ws->basis.region().volume());
    }
    return v / j.ws->system.normalizer;
}

// (1/(norm 3^{2m})) || v_J - ell_{abarstar^{-1} q - p} ||_{L^2}^2 with the
// per-sector gauge removed; interior system.
inline double flatness_defect(int m, const Vec& p, const Vec& q, QuantityContext& ctx) {
    const TriadicCube box = triadic_cube(ctx.dim(), m);
    AbarPair pair = abar_pair(box, ctx);
    JResult j = j_value(box, p, q, ctx);
    const Vec w = vec_sub(pair.abarstar.inverse().apply(q), p);
    SectorField lw = affine_field(j.ws->basis, w);
    SectorField diff = j.optimizer;
    for (int n = 0; n <= j.ws->basis.n_max(); ++n)
        for (std::int64_t i = 0; i < j.ws->basis.node_count(n); ++i)
            diff.values[n][i] -= lw.values[n][i];
    recenter_per_sector(diff);
    const double l2 = l2_product(j.ws->system, diff, diff);
    return l2 / (j.ws->system.normalizer * ipow(3.0, 2 * m));
}

struct CascadeResult {
    std::vector<CascadeRecord> records;
    RateFit fit;
    bool fit_valid = false;
};

// Runs levels 0..plan.levels for the given model, including the constant-model
// band calibration. Two-scale, variance and flatness diagnostics per level.
inline CascadeResult run_cascade(const CascadePlan& plan, const CoefficientModel& model) {
    CascadeResult out;
    const int d = model.dim;

    // band calibration: rho|U|-variant deviation of the constant model from
    // the exact answer at the same discretization, c in {1, 2}
    std::vector<double> band_dev(plan.levels + 1, 0.0);
    for (double c : {1.0, 2.0}) {
        for (int m = 0; m <= plan.levels; ++m) {
            QuantityContext cctx(CoefficientModel::constant(d, c), plan.rho, plan_disc(plan, m), plan.mode);
            const TriadicCube box = triadic_cube(d, m);
            AbarPair pair = abar_pair(box, cctx);
            auto ws = cctx.workspace(box);
            const double ratio = ws->system.normalizer / ws->system.norm_rho_u;
            const double dev = std::fmax(pair.abar.scaled(ratio).minus(SymMatrix::identity(d, c)).spectral_norm(),
                                         pair.abarstar.scaled(1.0 / ratio).minus(SymMatrix::identity(d, c)).spectral_norm());
            band_dev[m] = std::fmax(band_dev[m], dev);
        }
    }

    for (int m = 0; m <= plan.levels; ++m) {
        const auto t0 = std::chrono::steady_clock::now();
        CascadeRecord rec;
        rec.level = m;
        rec.h = plan.h_at(m);
        rec.n_max = plan.n_max;
        const TriadicCube box = triadic_cube(d, m);
        QuantityContext ctx(model, plan.rho, plan_disc(plan, m), plan.mode);
        AbarPair pair = abar_pair(box, ctx);
        rec.abar = pair.abar;
        rec.abarstar = pair.abarstar;
        rec.gap = pair.abar.minus(pair.abarstar).spectral_norm();
        rec.normalizer = pair.ws->system.normalizer;
        rec.normalizer_rho_u = pair.ws->system.norm_rho_u;
        rec.truncated_mass = pair.ws->system.weights.truncated_mass;
        if (pair.ws->system.weights.warning) rec.warning = pair.ws->system.weights.warning_text;

        double sup_j = 0.0;
        for (int i = 0; i < d; ++i) {
            const Vec p = basis_vec(i);
            const Vec q = pair.abarstar.apply(p);
            JResult j = j_value(box, p, q, ctx);
            rec.j_diag.push_back(j.value);
            sup_j = std::fmax(sup_j, j.value);
        }
        if (d == 2) {
            // sup over B1 of the quadratic form p -> J(p, abarstar p), from
            // three independent J evaluations
            const Vec p12{{M_SQRT1_2, M_SQRT1_2}};
            JResult cross = j_value(box, p12, pair.abarstar.apply(p12), ctx);
            SymMatrix jform = SymMatrix::identity(2, 0.0);
            jform.at(0, 0) = rec.j_diag[0];
            jform.at(1, 1) = rec.j_diag[1];
            jform.at(0, 1) = jform.at(1, 0) = cross.value - 0.5 * (rec.j_diag[0] + rec.j_diag[1]);
            sup_j = std::fmax(0.0, jform.eig_max());
        }
        rec.gap_bound = std::sqrt(2.0 * pair.abar.eig_max() * sup_j);
        rec.optimizer_gap = optimizer_gap(box, basis_vec(0), ctx, pair);

        // interior-system diagnostics
        if (plan.mode == NuStarMode::Interior) {
            rec.variance_defect = variance_defect(m, basis_vec(0), pair.abarstar.apply(basis_vec(0)), ctx);
            rec.flatness = flatness_defect(m, basis_vec(0), pair.abarstar.apply(basis_vec(0)), ctx);
            rec.truncated_mass_interior = rec.truncated_mass;
        } else {
            QuantityContext ictx(model, plan.rho, plan_disc(plan, m), NuStarMode::Interior);
            AbarPair ipair = abar_pair(box, ictx);
            rec.variance_defect = variance_defect(m, basis_vec(0), ipair.abarstar.apply(basis_vec(0)), ictx);
            rec.flatness = flatness_defect(m, basis_vec(0), ipair.abarstar.apply(basis_vec(0)), ictx);
            rec.truncated_mass_interior = ipair.ws->system.weights.truncated_mass;
        }

        // two-scale comparison against the previous level (interior systems,
        // shared h required for the embedding)
        if (m >= 1 && plan.h_at(m) == plan.h_at(m - 1)) {
            QuantityContext tctx(model, plan.rho, plan_disc(plan, m), NuStarMode::Interior);
            AbarPair ip = abar_pair(box, tctx);
            TwoScaleResult ts = two_scale_check(m, m - 1, basis_vec(0), ip.abarstar.apply(basis_vec(0)), tctx);
            rec.two_scale_lhs = ts.lhs;
            rec.two_scale_rhs = ts.rhs;
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.records.push_back(std::move(rec));
    }
    // tau and bands between consecutive levels
    const auto taus = tau_defects(out.records);
    for (size_t m = 0; m + 1 < out.records.size(); ++m) {
        out.records[m].tau = taus[m];
        out.records[m].band = 2.0 * std::fmax(band_dev[m], band_dev[m + 1]);
    }
    if (out.records.size() >= 3) {
        out.fit = gap_and_rate(out.records);
        out.fit_valid = true;
    }
    return out;
}

} // namespace hmglab
