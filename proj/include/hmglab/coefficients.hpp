#pragma once

// Coefficient fields a(mu, x): uniformly elliptic, unit dependence range,
// stationary by construction. Three model kinds:
//   constant      a = M for a fixed symmetric matrix Id <= M <= Lambda*Id
//   crowding      a = (1 + 1{mu(B_1(x)) = 1}) * Id
//   radial-count  a = M_j * Id-scale chosen by thresholds on mu(B_1(x))
// plus the exact exterior-conditional expectation E[a | mu restricted to U]
// with Poisson(rho) exterior, which finite-volume energies need near the
// boundary.

#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hmglab/configuration.hpp"
#include "hmglab/geometry.hpp"
#include "hmglab/rng.hpp"

namespace hmglab {

struct SymMatrix {
    int dim = 1;
    // row-major, symmetric; only dim*dim entries used
    std::array<double, kMaxDim * kMaxDim> m{{0, 0, 0, 0}};

    static SymMatrix identity(int d, double scale = 1.0) {
        SymMatrix s;
        s.dim = d;
        for (int i = 0; i < d; ++i) s.at(i, i) = scale;
        return s;
    }
    double& at(int i, int j) { return m[i * kMaxDim + j]; }
    double at(int i, int j) const { return m[i * kMaxDim + j]; }

    SymMatrix scaled(double c) const {
        SymMatrix s = *this;
        for (auto& v : s.m) v *= c;
        return s;
    }
    SymMatrix plus(const SymMatrix& o) const {
        SymMatrix s = *this;
        for (size_t i = 0; i < m.size(); ++i) s.m[i] += o.m[i];
        return s;
    }
    SymMatrix minus(const SymMatrix& o) const {
        SymMatrix s = *this;
        for (size_t i = 0; i < m.size(); ++i) s.m[i] -= o.m[i];
        return s;
    }

    std::array<double, kMaxDim> apply(const std::array<double, kMaxDim>& v) const {
        std::array<double, kMaxDim> r{{0, 0}};
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) r[i] += at(i, j) * v[j];
        return r;
    }

    double quad(const std::array<double, kMaxDim>& v) const {
        double s = 0.0;
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) s += v[i] * at(i, j) * v[j];
        return s;
    }

    // eigenvalues of a 1x1 or symmetric 2x2 matrix
    std::array<double, kMaxDim> eigenvalues() const {
        if (dim == 1) return {{at(0, 0), 0.0}};
        const double a = at(0, 0), b = 0.5 * (at(0, 1) + at(1, 0)), c = at(1, 1);
        const double t = 0.5 * (a + c);
        const double d = std::sqrt(std::fmax(0.0, 0.25 * (a - c) * (a - c) + b * b));
        return {{t - d, t + d}};
    }
    double eig_min() const { return eigenvalues()[0]; }
    double eig_max() const { return dim == 1 ? at(0, 0) : eigenvalues()[1]; }
    // spectral norm of the (symmetric) matrix
    double spectral_norm() const {
        auto e = eigenvalues();
        return std::fmax(std::fabs(e[0]), dim == 1 ? std::fabs(e[0]) : std::fabs(e[1]));
    }
    double asymmetry() const { return dim == 1 ? 0.0 : std::fabs(at(0, 1) - at(1, 0)); }

    SymMatrix inverse() const {
        SymMatrix s;
        s.dim = dim;
        if (dim == 1) {
            s.at(0, 0) = 1.0 / at(0, 0);
            return s;
        }
        const double det = at(0, 0) * at(1, 1) - at(0, 1) * at(1, 0);
        s.at(0, 0) = at(1, 1) / det;
        s.at(1, 1) = at(0, 0) / det;
        s.at(0, 1) = -at(0, 1) / det;
        s.at(1, 0) = -at(1, 0) / det;
        return s;
    }
};

enum class ModelKind { Constant, Crowding, RadialCount };

struct CoefficientModel {
    ModelKind kind = ModelKind::Constant;
    int dim = 1;
    double lambda_max = 1.0;      // Lambda (ellipticity upper bound)
    SymMatrix base;               // constant model matrix
    std::vector<int> thresholds;  // radial-count: counts at which the level changes
    std::vector<double> levels;   // radial-count: scalar level per bin, size thresholds.size()+1
    static constexpr double range = 1.0;  // dependence radius, fixed

    static CoefficientModel constant(int d, const SymMatrix& m) {
        CoefficientModel c;
        c.kind = ModelKind::Constant;
        c.dim = d;
        c.base = m;
        c.lambda_max = m.eig_max();
        return c;
    }
    static CoefficientModel constant(int d, double scale) { return constant(d, SymMatrix::identity(d, scale)); }

    static CoefficientModel crowding(int d) {
        CoefficientModel c;
        c.kind = ModelKind::Crowding;
        c.dim = d;
        c.lambda_max = 2.0;
        return c;
    }

    // levels[j] applies when mu(B_1(x)) in [thresholds[j-1], thresholds[j]),
    // with thresholds[-1] = 0 and thresholds[end] = +inf.
    static CoefficientModel radial_count(int d, std::vector<int> thr, std::vector<double> lv) {
        if (lv.size() != thr.size() + 1) throw std::invalid_argument("radial_count: need one more level than thresholds");
        CoefficientModel c;
        c.kind = ModelKind::RadialCount;
        c.dim = d;
        c.thresholds = std::move(thr);
        c.levels = std::move(lv);
        c.lambda_max = 1.0;
        for (double v : c.levels) c.lambda_max = std::fmax(c.lambda_max, v);
        return c;
    }

    double scalar_for_count(int k) const {
        if (kind == ModelKind::Crowding) return k == 1 ? 2.0 : 1.0;
        size_t j = 0;
        while (j < thresholds.size() && k >= thresholds[j]) ++j;
        return levels[j];
    }
};

// a(mu, x); depends only on points of mu within distance 1 of x.
inline SymMatrix evaluate(const CoefficientModel& model, const Configuration& mu, const Point& x) {
    if (model.kind == ModelKind::Constant) return model.base;
    const int k = mu.count_in_ball(x, CoefficientModel::range);
    return SymMatrix::identity(model.dim, model.scalar_for_count(k));
}

// E[a(mu, x) | mu restricted to U = interior], exterior Poisson(rho) on U^c.
// Closed form for every model kind in this family: the exterior count in
// B_1(x)\U is Poisson(rho * lambda) with lambda the exact overlap volume.
inline SymMatrix conditional_coefficient(const CoefficientModel& model, const Configuration& interior,
                                         const Point& x, const TriadicCube& U, double rho) {
    if (model.kind == ModelKind::Constant) return model.base;
    const double lam = rho * ball_minus_box_volume(x, CoefficientModel::range, U);
    int k = 0;
    const double r2 = CoefficientModel::range * CoefficientModel::range;
    for (const auto& p : interior.points)
        if (U.contains(p) && dist2(p, x, model.dim) <= r2) ++k;
    if (model.kind == ModelKind::Crowding) {
        double v = 1.0;
        if (k == 1) v += std::exp(-lam);
        else if (k == 0) v += lam * std::exp(-lam);
        return SymMatrix::identity(model.dim, v);
    }
    // radial-count: sum the Poisson pmf over exterior counts until the level
    // saturates, then lump the tail.
    double val = 0.0, p = std::exp(-lam), acc = 0.0;
    const int top = model.thresholds.empty() ? 0 : model.thresholds.back();
    for (int e = 0; k + e < top; ++e) {
        val += p * model.scalar_for_count(k + e);
        acc += p;
        p *= lam / (e + 1);
    }
    val += (1.0 - acc) * model.scalar_for_count(top + k);
    return SymMatrix::identity(model.dim, val);
}

// Monte Carlo estimate of the conditional coefficient with antithetic
// exterior sampling; returns (estimate, standard error of the (0,0) entry).
inline std::pair<SymMatrix, double> mc_conditional_coefficient(const CoefficientModel& model,
                                                               const Configuration& interior, const Point& x,
                                                               const TriadicCube& U, double rho, int samples,
                                                               RngStream& rng) {
    const TriadicCube halo = U.expanded(CoefficientModel::range);
    SymMatrix mean = SymMatrix::identity(model.dim, 0.0);
    double s2 = 0.0;
    int n = 0;
    for (int it = 0; it < (samples + 1) / 2; ++it) {
        const int m = rng.poisson(rho * (halo.volume() - U.volume()));
        Configuration ext_a = interior, ext_b = interior;
        for (int j = 0; j < m; ++j) {
            // rejection into the halo shell, with the antithetic mirror image
            Point p{{0, 0}};
            do {
                for (int a = 0; a < model.dim; ++a) p[a] = rng.uniform(halo.lo(a), halo.hi(a));
            } while (U.contains(p));
            Point q = p;
            for (int a = 0; a < model.dim; ++a) q[a] = halo.center[a] - (p[a] - halo.center[a]);
            ext_a.points.push_back(p);
            if (!U.contains(q)) ext_b.points.push_back(q);
        }
        for (const Configuration* cfg : {&ext_a, &ext_b}) {
            const SymMatrix v = evaluate(model, *cfg, x);
            ++n;
            mean = mean.plus(v);
            s2 += v.at(0, 0) * v.at(0, 0);
        }
    }
    SymMatrix est = mean.scaled(1.0 / n);
    const double var = std::fmax(0.0, s2 / n - est.at(0, 0) * est.at(0, 0));
    return {est, std::sqrt(var / n)};
}

struct ValidationReport {
    bool valid = true;
    double min_eig = 0.0;
    double max_eig = 0.0;
    bool range_ok = true;
    bool stationarity_ok = true;
    std::string detail;
};

// Samples (mu, x) pairs and checks ellipticity bounds, the unit dependence
// range (far-away points never change the value) and translation invariance.
inline ValidationReport validate_model(const CoefficientModel& model, int sample_budget, RngStream& rng) {
    ValidationReport rep;
    rep.min_eig = 1e300;
    rep.max_eig = -1e300;
    const TriadicCube box = cube_of_side(model.dim, 4.0);
    for (int it = 0; it < sample_budget; ++it) {
        Configuration mu = sample_configuration(box, 1.0, rng);
        Point x{{0, 0}};
        for (int a = 0; a < model.dim; ++a) x[a] = rng.uniform(box.lo(a) + 1.5, box.hi(a) - 1.5);
        mu.points.push_back(x);
        const SymMatrix v = evaluate(model, mu, x);
        rep.min_eig = std::fmin(rep.min_eig, v.eig_min());
        rep.max_eig = std::fmax(rep.max_eig, v.eig_max());
        // range: a point beyond distance 1 of x must not change the value
        Configuration mu2 = mu;
        Point far = x;
        far[0] += 1.0 + rng.uniform(0.5, 1.5);
        mu2.points.push_back(far);
        const SymMatrix v2 = evaluate(model, mu2, x);
        for (int i = 0; i < model.dim; ++i)
            for (int j = 0; j < model.dim; ++j)
                if (v.at(i, j) != v2.at(i, j)) rep.range_ok = false;
        // stationarity: translate everything and re-evaluate
        Point shift{{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)}};
        Configuration mu3 = mu;
        mu3.region.center[0] += shift[0];
        mu3.region.center[1] += shift[1];
        for (auto& p : mu3.points)
            for (int a = 0; a < model.dim; ++a) p[a] += shift[a];
        Point x3 = x;
        for (int a = 0; a < model.dim; ++a) x3[a] += shift[a];
        const SymMatrix v3 = evaluate(model, mu3, x3);
        for (int i = 0; i < model.dim; ++i)
            for (int j = 0; j < model.dim; ++j)
                if (v.at(i, j) != v3.at(i, j)) rep.stationarity_ok = false;
    }
    if (rep.min_eig < 1.0 - 1e-12 || rep.max_eig > model.lambda_max + 1e-12) {
        rep.valid = false;
        std::ostringstream os;
        os << "ellipticity bounds violated: eig in [" << rep.min_eig << ", " << rep.max_eig << "], Lambda="
           << model.lambda_max;
        rep.detail = os.str();
    }
    if (!rep.range_ok) {
        rep.valid = false;
        rep.detail += " finite-range violated;";
    }
    if (!rep.stationarity_ok) {
        rep.valid = false;
        rep.detail += " stationarity violated;";
    }
    return rep;
}

} // namespace hmglab
