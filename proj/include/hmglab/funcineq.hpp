#pragma once

// Empirical harness for the functional inequalities: Poincare (both classes),
// multiscale Poincare with the S_{n,k} averages, localization-operator checks
// and the weak Caccioppoli inequality with theta' = 2 Lambda / (2 Lambda + 1).

#include <sstream>
#include <vector>

#include "hmglab/localization.hpp"
#include "hmglab/quantities.hpp"
#include "hmglab/snk.hpp"

namespace hmglab {

enum class PoincareClass { H10, H1 };

// variance term / (diam(U)^2 * gradient term); raw expectations
inline double poincare_ratio(const SectorSystem& sys, const SectorField& f, PoincareClass klass) {
    SectorField centered = f;
    if (klass == PoincareClass::H10) {
        const double mean = expectation(sys, f);
        for (int n = 0; n <= sys.basis->n_max(); ++n)
            for (auto& v : centered.values[n]) v -= mean;
    } else {
        recenter_per_sector(centered);
    }
    const double var = l2_product(sys, centered, centered);
    MomentOptions opt;
    opt.use_coefficient = false;
    opt.scale = 1.0;
    const double grad = energy_product(sys, f, f, opt);
    const double diam2 = sys.basis->domain().diameter() * sys.basis->domain().diameter();
    if (grad <= 1e-28) {
        if (var > 1e-20)
            throw std::runtime_error("poincare_ratio: zero gradient with nonzero variance (class mismatch)");
        return 0.0;
    }
    return var / (diam2 * grad);
}

struct MultiscaleResult {
    double lhs = 0.0;                 // ||u||_{L2}
    double gradient_term = 0.0;       // (E int |grad u|^2)^{1/2}
    std::vector<double> snk_terms;    // (E int |S_{n,k} grad u|^2)^{1/2}, k = 0..n
    double rhs = 0.0;                 // gradient term + sum_k 3^k snk_k
    double ratio = 0.0;
};

inline MultiscaleResult multiscale_poincare_check(const SectorSystem& sys, const SectorField& u, int lev_n) {
    SectorField cu = u;
    recenter_per_sector(cu);  // the G_n gauge
    MultiscaleResult out;
    out.lhs = std::sqrt(std::fmax(0.0, l2_product(sys, cu, cu)));
    MomentOptions opt;
    opt.use_coefficient = false;
    opt.scale = 1.0;
    out.gradient_term = std::sqrt(std::fmax(0.0, energy_product(sys, cu, cu, opt)));
    out.rhs = out.gradient_term;
    for (int k = 0; k <= lev_n; ++k) {
        AveragedGradient S = snk_gradient_average(cu, lev_n, k);
        const double term = std::sqrt(std::fmax(0.0, snk_square_integral(sys, S)));
        out.snk_terms.push_back(term);
        out.rhs += ipow(3.0, k) * term;
    }
    out.ratio = out.rhs > 0.0 ? out.lhs / out.rhs : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Localization harness

struct LocalizeOptions {
    int mc_samples = 10000;
    int formula_probes = 50;  // configurations probed for the gradient formula
    double fd_step = 1e-6;
};

inline std::pair<SectorField, LocalizationReport> localize(const SectorField& f, double rho, double s,
                                                           double eps, RngStream rng,
                                                           LocalizeOptions opt = {}) {
    Localizer loc(f, rho);
    const SectorBasis& b = *f.basis;
    LocalizationReport rep;
    rep.s = s;
    rep.eps = eps;
    SectorField localized = localize_field(loc, s, eps);

    // gradient three-case formula probed with central differences of the
    // exact evaluation (jumps evaluated at element midpoints)
    RngStream probe = rng.child("formula");
    for (int it = 0; it < opt.formula_probes; ++it) {
        RngStream ps = probe.child(it);
        Configuration mu = sample_configuration_truncated(b.domain(), rho, std::max(1, b.n_max() - 1), ps);
        if (mu.count() == 0) continue;
        std::vector<double> pos(mu.count());
        for (int i = 0; i < mu.count(); ++i) {
            // snap to an element midpoint to stay away from kinks
            const double x = mu.points[i][0];
            const double cell = std::floor((x - b.region().lo(0)) / b.h());
            pos[i] = b.region().lo(0) + (cell + 0.5) * b.h();
        }
        const int i = static_cast<int>(ps.next_u64() % pos.size());
        const double r = 2.0 * std::fabs(pos[i]);
        auto fd = [&](double delta) {
            std::vector<double> pp = pos;
            pp[i] += delta;
            return loc.apply_Aseps(s, eps, pp);
        };
        const double grad_fd = (fd(opt.fd_step) - fd(-opt.fd_step)) / (2.0 * opt.fd_step);
        double predicted = 0.0;
        if (r < s) {
            predicted = loc.apply_Aseps(s, eps, pos, i);
            rep.interior_formula_residual = std::fmax(rep.interior_formula_residual,
                                                      std::fabs(grad_fd - predicted));
        } else if (r < s + eps) {
            const double avg = loc.apply_Aseps(s, eps, pos, i);
            const double nx = pos[i] > 0.0 ? 1.0 : -1.0;
            predicted = avg - nx * loc.jump_at(pos, i) / eps;
            rep.shell_formula_residual = std::fmax(rep.shell_formula_residual,
                                                   std::fabs(grad_fd - predicted));
        } else {
            rep.exterior_formula_residual = std::fmax(rep.exterior_formula_residual, std::fabs(grad_fd));
        }
    }

    // commute residual grad A_s f = A_s grad f on interior probes (fixed s)
    RngStream cstream = rng.child("commute");
    for (int it = 0; it < opt.formula_probes; ++it) {
        RngStream ps = cstream.child(it);
        Configuration mu = sample_configuration_truncated(cube_of_side(1, s * 0.8), rho,
                                                          std::max(1, b.n_max() - 1), ps);
        if (mu.count() == 0) continue;
        std::vector<double> pos(mu.count());
        for (int i = 0; i < mu.count(); ++i) {
            const double x = mu.points[i][0];
            const double cell = std::floor((x - b.region().lo(0)) / b.h());
            pos[i] = b.region().lo(0) + (cell + 0.5) * b.h();
        }
        const int i = static_cast<int>(ps.next_u64() % pos.size());
        std::vector<double> kept = pos;
        auto fd = [&](double delta) {
            std::vector<double> pp = kept;
            pp[i] += delta;
            return loc.apply_At(s, pp);
        };
        const double lhs = (fd(opt.fd_step) - fd(-opt.fd_step)) / (2.0 * opt.fd_step);
        const double rhs = loc.apply_At(s, kept, i);
        rep.commute_residual = std::fmax(rep.commute_residual, std::fabs(lhs - rhs));
    }

    // bracket increment E[(A_{s+eps} f)^2 - (A_s f)^2] >= 0 (martingale L2)
    RngStream bstream = rng.child("bracket");
    double acc = 0.0, acc2 = 0.0;
    int ns = 0;
    for (int it = 0; it < opt.mc_samples; ++it) {
        RngStream ps = bstream.child(it);
        Configuration mu = sample_configuration_truncated(b.domain(), rho, b.n_max(), ps);
        std::vector<double> kept_s, kept_se;
        for (const auto& pnt : mu.points) {
            if (2.0 * std::fabs(pnt[0]) <= s) kept_s.push_back(pnt[0]);
            if (2.0 * std::fabs(pnt[0]) <= s + eps) kept_se.push_back(pnt[0]);
        }
        const double a1 = loc.apply_At(s, kept_s);
        const double a2 = loc.apply_At(s + eps, kept_se);
        const double dv = a2 * a2 - a1 * a1;
        acc += dv;
        acc2 += dv * dv;
        ++ns;
    }
    rep.mc_samples = ns;
    rep.bracket_increment = acc / ns;
    rep.bracket_se = std::sqrt(std::fmax(0.0, acc2 / ns - rep.bracket_increment * rep.bracket_increment) / ns);

    // Jensen energy contraction on Q_s interior particles: for x in Q_s the
    // gradient of the localized function is the conditional t-average of
    // grad f, so E|A grad f|^2 <= E|grad f|^2 exactly; estimated by MC.
    {
        RngStream jstream = rng.child("jensen");
        double jacc = 0.0, jacc2 = 0.0;
        int jn = 0;
        const int jsamples = std::max(200, opt.mc_samples / 10);
        for (int it = 0; it < jsamples; ++it) {
            RngStream ps = jstream.child(it);
            Configuration mu = sample_configuration_truncated(b.domain(), rho, b.n_max(), ps);
            std::vector<double> pos(mu.count());
            std::vector<Point> ppos = mu.points;
            for (int i = 0; i < mu.count(); ++i) pos[i] = mu.points[i][0];
            double D = 0.0;
            for (int i = 0; i < mu.count(); ++i) {
                if (2.0 * std::fabs(pos[i]) > s) continue;
                double gf = 0.0;
                f.evaluate(ppos, i, 0, &gf);
                const double ga = loc.apply_Aseps(s, eps, pos, i);
                D += gf * gf - ga * ga;
            }
            jacc += D;
            jacc2 += D * D;
            ++jn;
        }
        rep.jensen_margin = jacc / jn;
        rep.jensen_se = std::sqrt(std::fmax(0.0, jacc2 / jn - rep.jensen_margin * rep.jensen_margin) / jn);
    }
    return {std::move(localized), rep};
}

// ---------------------------------------------------------------------------
// Weak Caccioppoli

struct CaccioppoliResult {
    double lhs = 0.0, rhs = 0.0;
    double theta_prime = 0.0;
    double a2_s = 0.0, a2_se = 0.0;       // E[(A_s u)^2] and its MC standard error
    double harmonicity = 0.0;
    int samples = 0;
};

// lhs = (theta'/2eps^2) E[(A_s u)^2] + int_{Q_r} localized Dirichlet energy;
// rhs = theta' ((1/2eps^2) E[(A_{s+eps} u)^2] + full energy on Q_{s+eps}).
inline CaccioppoliResult weak_caccioppoli_check(const SectorField& u, const SectorSystem& sys, double r,
                                                double s, double eps, RngStream rng, int mc_samples = 10000) {
    if (s < r + 2.0 - 1e-12) throw std::invalid_argument("weak_caccioppoli_check: need s >= r + 2");
    if (std::fabs(s + eps - sys.basis->region().side) > 1e-12)
        throw std::invalid_argument("weak_caccioppoli_check: the field must live on Q_{s+eps}");
    CaccioppoliResult out;
    const double lambda = sys.model.lambda_max;
    out.theta_prime = 2.0 * lambda / (2.0 * lambda + 1.0);

    // a-harmonicity gate
    DofMap dmap = build_dirichlet_map(*sys.basis);
    out.harmonicity = harmonicity_residual(sys, dmap, u);
    if (out.harmonicity > 1e-6)
        throw std::invalid_argument("weak_caccioppoli_check: input is not a-harmonic (residual " +
                                    std::to_string(out.harmonicity) + ")");

    Localizer loc(u, sys.rho);
    // E[(A_s u)^2] by Monte Carlo over the truncated law
    double acc = 0.0, acc2 = 0.0;
    int ns = 0;
    for (int it = 0; it < mc_samples; ++it) {
        RngStream ps = rng.child(it);
        Configuration mu = sample_configuration_truncated(sys.basis->domain(), sys.rho, sys.basis->n_max(), ps);
        std::vector<double> kept;
        for (const auto& pnt : mu.points)
            if (2.0 * std::fabs(pnt[0]) <= s) kept.push_back(pnt[0]);
        const double a = loc.apply_At(s, kept);
        acc += a * a;
        acc2 += a * a * a * a;
        ++ns;
    }
    out.samples = ns;
    out.a2_s = acc / ns;
    out.a2_se = std::sqrt(std::fmax(0.0, acc2 / ns - out.a2_s * out.a2_s) / ns);

    const double u2_full = l2_product(sys, u, u);  // A_{s+eps} u = u: shell empty

    SectorField loc_field = localize_field(loc, s, eps);
    const TriadicCube qr = cube_of_side(1, r);
    MomentOptions o;
    o.scale = 1.0;
    o.restrict_box = &qr;
    const double energy_r = energy_product(sys, loc_field, loc_field, o);
    MomentOptions of;
    of.scale = 1.0;
    const double energy_full = energy_product(sys, u, u, of);

    out.lhs = out.theta_prime / (2.0 * eps * eps) * out.a2_s + energy_r;
    out.rhs = out.theta_prime * (u2_full / (2.0 * eps * eps) + energy_full);
    return out;
}

// ---------------------------------------------------------------------------
// Random-field corpus: seeded standard-normal node values, gauge projected.

inline SectorField random_field(const SectorBasis& b, FieldClass klass, RngStream rng) {
    if (klass == FieldClass::DirichletAffine) {
        DofMap m = build_dirichlet_map(b);
        std::vector<double> u(m.n_dofs);
        for (auto& v : u) v = rng.normal();
        QuadraticProblem P;
        P.dofs = std::move(m);
        SectorField f = SectorField::zeros(b, FieldClass::DirichletAffine);
        for (int n = 0; n <= b.n_max(); ++n)
            for (std::int64_t i = 0; i < b.node_count(n); ++i) {
                const auto& e = P.dofs.table[n][i];
                f.values[n][i] = e.dof >= 0 ? u[e.dof] : 0.0;
            }
        return f;
    }
    SectorField f = SectorField::zeros(b, klass);
    for (int n = 1; n <= b.n_max(); ++n)
        for (auto& v : f.values[n]) v = rng.normal();
    recenter_per_sector(f);
    return f;
}

} // namespace hmglab
