#pragma once

// Dense direct-factorization oracle for the sector solves. Independent path:
// full ordered tensor grids (no orbit reduction), explicit dense quadratic
// form, constraint substitution matrices, Eigen factorizations. Shares only
// the model/weights definitions with the implementation under test.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "hmglab/coefficients.hpp"
#include "hmglab/geometry.hpp"
#include "hmglab/sector_weights.hpp"

namespace oracle {

using hmglab::CoefficientModel;
using hmglab::Configuration;
using hmglab::Point;
using hmglab::SectorWeights;
using hmglab::TriadicCube;

struct DenseSectorProblem {
    TriadicCube U, region;
    int d = 1, n_max = 1, G = 2;
    double h = 0.5, rho = 1.0;
    long long P = 2;  // spatial nodes per particle
    SectorWeights weights;
    double norm = 1.0;       // truncated E[mu(U)] under the region law
    CoefficientModel model;
    bool collar = false;

    std::vector<long long> offset;  // start of each sector block in the stacked vector
    long long total = 0;

    Eigen::MatrixXd K;                   // stacked raw quadratic form (no constraints)
    std::vector<Eigen::VectorXd> L;      // directional moment vectors, one per axis

    DenseSectorProblem(const TriadicCube& U_, double h_, int n_max_, const CoefficientModel& m,
                       double rho_, bool collar_)
        : U(U_), d(U_.dim), n_max(n_max_), h(h_), rho(rho_), model(m), collar(collar_) {
        region = collar ? U.expanded(1.0) : U;
        G = static_cast<int>(std::llround(region.side / h)) + 1;
        P = 1;
        for (int a = 0; a < d; ++a) P *= G;
        weights = hmglab::sector_weights(rho, region.volume(), n_max, 0.0);
        norm = 0.0;
        for (int n = 0; n <= n_max; ++n)
            n == 0 ? void() : void(norm += n * weights.weights[n] * U.volume() / region.volume());
        offset.resize(n_max + 2);
        offset[0] = 0;
        long long pw = 1;
        for (int n = 0; n <= n_max; ++n) {
            offset[n + 1] = offset[n] + pw;
            pw *= P;
        }
        total = offset[n_max + 1];
        assemble();
    }

    Point node_pos(long long s) const {
        Point p{{0, 0}};
        for (int a = 0; a < d; ++a) {
            p[a] = region.lo(a) + static_cast<double>(s % G) * h;
            s /= G;
        }
        return p;
    }
    // position class: 0 strictly inside U, 1 on boundary of U, 2 outside closure
    int node_class(long long s) const {
        bool bnd = false;
        for (int a = 0; a < d; ++a) {
            const int i = static_cast<int>(s % G);
            s /= G;
            const double x = region.lo(a) + i * h;
            if (x < U.lo(a) - 1e-12 || x > U.hi(a) + 1e-12) return 2;
            if (std::fabs(x - U.lo(a)) < 1e-12 || std::fabs(x - U.hi(a)) < 1e-12) bnd = true;
        }
        return bnd ? 1 : 0;
    }

    void assemble() {
        K = Eigen::MatrixXd::Zero(total, total);
        L.assign(d, Eigen::VectorXd::Zero(total));
        const int C = G - 1;
        long long PC = 1;
        for (int a = 0; a < d; ++a) PC *= C;
        for (int n = 1; n <= n_max; ++n) {
            const double pref = weights.weights[n] / std::pow(region.volume(), n) / norm;
            long long n_elems = 1;
            for (int i = 0; i < n; ++i) n_elems *= PC;
            const int dn = d * n;
            for (long long e = 0; e < n_elems; ++e) {
                // decode ordered cell tuple
                std::vector<long long> cell(n);
                long long rem = e;
                for (int i = 0; i < n; ++i) {
                    cell[i] = rem % PC;
                    rem /= PC;
                }
                Configuration mid;
                mid.region = region;
                mid.points.resize(n);
                std::vector<std::array<int, 2>> axcell(n * static_cast<size_t>(d));
                for (int i = 0; i < n; ++i) {
                    long long cc = cell[i];
                    for (int a = 0; a < d; ++a) {
                        const int ca = static_cast<int>(cc % C);
                        cc /= C;
                        axcell[i * d + a] = {ca, ca + 1};
                        mid.points[i][a] = region.lo(a) + (ca + 0.5) * h;
                    }
                }
                auto node_of = [&](unsigned bits) {
                    long long idx = 0;
                    for (int i = n - 1; i >= 0; --i) {
                        long long s = 0;
                        for (int a = d - 1; a >= 0; --a)
                            s = s * G + axcell[i * d + a][(bits >> (i * d + a)) & 1u];
                        idx = idx * P + s;
                    }
                    return offset[n] + idx;
                };
                for (int i = 0; i < n; ++i) {
                    bool in_U = true;
                    for (int a = 0; a < d; ++a) {
                        const double lo = region.lo(a) + axcell[i * d + a][0] * h;
                        if (lo < U.lo(a) - 1e-12 || lo + h > U.hi(a) + 1e-12) in_U = false;
                    }
                    if (!in_U) continue;
                    hmglab::SymMatrix coef =
                        collar ? hmglab::evaluate(model, mid, mid.points[i])
                               : hmglab::conditional_coefficient(model, mid, mid.points[i], U, rho);
                    for (int alpha = 0; alpha < d; ++alpha) {
                        const unsigned bit = 1u << (i * d + alpha);
                        const double wdir = pref * coef.at(alpha, alpha) * std::pow(h, dn - 2) /
                                            std::pow(2.0, dn - 1);
                        const double wl = pref * std::pow(h, dn - 1) / std::pow(2.0, dn - 1);
                        for (unsigned T = 0; T < (1u << dn); ++T) {
                            if (T & bit) continue;
                            const long long lo = node_of(T), hi = node_of(T | bit);
                            K(lo, lo) += wdir;
                            K(hi, hi) += wdir;
                            K(lo, hi) -= wdir;
                            K(hi, lo) -= wdir;
                            L[alpha](hi) += wl;
                            L[alpha](lo) -= wl;
                        }
                        if (d == 2 && model.kind == hmglab::ModelKind::Constant &&
                            std::fabs(model.base.at(0, 1)) > 0.0) {
                            const int beta = 1 - alpha;
                            const unsigned bbit = 1u << (i * d + beta);
                            const double wx = pref * coef.at(alpha, beta) * std::pow(h, dn - 2) /
                                              std::pow(2.0, dn);
                            for (unsigned T = 0; T < (1u << dn); ++T) {
                                if (T & (bit | bbit)) continue;
                                for (unsigned sa = 0; sa < 2; ++sa)
                                    for (unsigned ba = 0; ba < 2; ++ba)
                                        for (unsigned sb = 0; sb < 2; ++sb)
                                            for (unsigned ab = 0; ab < 2; ++ab) {
                                                const long long na =
                                                    node_of(T | (sa ? bit : 0u) | (ba ? bbit : 0u));
                                                const long long nb =
                                                    node_of(T | (ab ? bit : 0u) | (sb ? bbit : 0u));
                                                K(na, nb) += wx * (sa ? 1.0 : -1.0) * (sb ? 1.0 : -1.0);
                                            }
                            }
                        }
                    }
                }
            }
        }
    }

    // substitution v = S u + p . Goff for the dirichlet-affine class
    void dirichlet_substitution(Eigen::MatrixXd& S, std::vector<Eigen::VectorXd>& Goff,
                                std::vector<long long>& dof_of) const {
        dof_of.assign(total, -1);
        long long next = 0;
        // dofs: ordered all-interior tuples, sectors 1..n_max
        for (int n = 1; n <= n_max; ++n) {
            for (long long idx = 0; idx < offset[n + 1] - offset[n]; ++idx) {
                long long rem = idx;
                bool ok = true;
                for (int i = 0; i < n; ++i) {
                    if (node_class(rem % P) != 0) ok = false;
                    rem /= P;
                }
                if (ok) dof_of[offset[n] + idx] = next++;
            }
        }
        S = Eigen::MatrixXd::Zero(total, next);
        Goff.assign(d, Eigen::VectorXd::Zero(total));
        for (int n = 0; n <= n_max; ++n) {
            for (long long idx = 0; idx < offset[n + 1] - offset[n]; ++idx) {
                long long rem = idx;
                std::vector<long long> kept;
                Point g{{0, 0}};
                for (int i = 0; i < n; ++i) {
                    const long long s = rem % P;
                    rem /= P;
                    const int c = node_class(s);
                    if (c == 0) kept.push_back(s);
                    else if (c == 1) {
                        const Point pos = node_pos(s);
                        for (int a = 0; a < d; ++a) g[a] += pos[a];
                    }
                }
                long long tgt = 0;
                for (int i = static_cast<int>(kept.size()) - 1; i >= 0; --i) tgt = tgt * P + kept[i];
                const long long k = static_cast<long long>(kept.size());
                const long long dof = k > 0 ? dof_of[offset[k] + tgt] : -1;
                if (dof >= 0) S(offset[n] + idx, dof) = 1.0;
                for (int a = 0; a < d; ++a) Goff[a](offset[n] + idx) = g[a];
            }
        }
    }

    // nu(U, p): returns value and the full stacked minimizer
    std::pair<double, Eigen::VectorXd> solve_nu(const Point& p) const {
        Eigen::MatrixXd S;
        std::vector<Eigen::VectorXd> Goff;
        std::vector<long long> dof_of;
        dirichlet_substitution(S, Goff, dof_of);
        Eigen::VectorXd c = Eigen::VectorXd::Zero(total);
        for (int a = 0; a < d; ++a) c += p[a] * Goff[a];
        const Eigen::MatrixXd A = S.transpose() * K * S;
        const Eigen::VectorXd b = -S.transpose() * (K * c);
        const Eigen::VectorXd u = A.ldlt().solve(b);
        const Eigen::VectorXd v = S * u + c;
        return {0.5 * v.dot(K * v), v};
    }

    // nu*(U, q) on the free class (interior basis) or the full collar class
    std::pair<double, Eigen::VectorXd> solve_nu_star(const Point& q) const {
        // drop sector 0; min-norm solution of the singular system K v = L q
        const long long m = total - 1;
        Eigen::MatrixXd A(m, m);
        A = K.block(1, 1, m, m);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
        for (int a = 0; a < d; ++a) b += q[a] * L[a].segment(1, m);
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
        const Eigen::VectorXd u = cod.solve(b);
        Eigen::VectorXd v = Eigen::VectorXd::Zero(total);
        v.segment(1, m) = u;
        double lin = 0.0;
        for (int a = 0; a < d; ++a) lin += q[a] * L[a].dot(v);
        return {-0.5 * v.dot(K * v) + lin, v};
    }

    // expectation of a stacked full field under the truncated law (trapezoid)
    double expectation(const Eigen::VectorXd& v) const {
        double e = weights.weights[0] * v(0);
        for (int n = 1; n <= n_max; ++n) {
            double mean = 0.0;
            for (long long idx = 0; idx < offset[n + 1] - offset[n]; ++idx) {
                long long rem = idx;
                double w = 1.0;
                for (int i = 0; i < n; ++i) {
                    long long s = rem % P;
                    rem /= P;
                    for (int a = 0; a < d; ++a) {
                        const int ia = static_cast<int>(s % G);
                        s /= G;
                        w *= (ia == 0 || ia == G - 1) ? 0.5 : 1.0;
                    }
                }
                mean += w * v(offset[n] + idx);
            }
            mean *= std::pow(h, d * n) / std::pow(region.volume(), n);
            e += weights.weights[n] * mean;
        }
        return e;
    }
};

} // namespace oracle
