#pragma once

// Sparse symmetric CSR matrix, assembly builder with sorted rows, and a
// Jacobi-preconditioned conjugate gradient solver. Known-kernel directions
// (per-sector constants of Neumann-class problems) are projected out of the
// residual and the iterate inside the iteration; the projection is exact
// because the kernel is known analytically.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmglab {

struct CsrMatrix {
    std::int64_t rows = 0;
    std::vector<std::int64_t> row_ptr;
    std::vector<std::int32_t> col;
    std::vector<double> val;

    void multiply(const std::vector<double>& x, std::vector<double>& y) const {
        y.assign(rows, 0.0);
        for (std::int64_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) s += val[k] * x[col[k]];
            y[r] = s;
        }
    }

    std::vector<double> diagonal() const {
        std::vector<double> d(rows, 0.0);
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
                if (col[k] == r) d[r] = val[k];
        return d;
    }
};

class SparseBuilder {
  public:
    explicit SparseBuilder(std::int64_t rows) : rows_(rows), data_(rows) {}

    void add(std::int32_t r, std::int32_t c, double v) {
        auto& row = data_[r];
        auto it = std::lower_bound(row.begin(), row.end(), c,
                                   [](const Entry& e, std::int32_t cc) { return e.c < cc; });
        if (it != row.end() && it->c == c) {
            it->v += v;
        } else {
            row.insert(it, Entry{c, v});
        }
    }

    CsrMatrix finalize() const {
        CsrMatrix m;
        m.rows = rows_;
        m.row_ptr.resize(rows_ + 1, 0);
        std::int64_t nnz = 0;
        for (std::int64_t r = 0; r < rows_; ++r) {
            nnz += static_cast<std::int64_t>(data_[r].size());
            m.row_ptr[r + 1] = nnz;
        }
        m.col.reserve(nnz);
        m.val.reserve(nnz);
        for (const auto& row : data_) {
            for (const auto& e : row) {
                m.col.push_back(e.c);
                m.val.push_back(e.v);
            }
        }
        return m;
    }

  private:
    struct Entry {
        std::int32_t c;
        double v;
    };
    std::int64_t rows_;
    std::vector<std::vector<Entry>> data_;
};

struct SolveStats {
    int iterations = 0;
    double rel_residual = 0.0;
    double wall_seconds = 0.0;
    std::int64_t unknowns = 0;
    bool converged = false;
};

// Orthogonal projector onto the complement of a set of disjoint all-ones
// kernel vectors, given as [begin, end) dof ranges.
struct GaugeRanges {
    std::vector<std::pair<std::int64_t, std::int64_t>> ranges;

    void project(std::vector<double>& x) const {
        for (const auto& [b, e] : ranges) {
            if (e <= b) continue;
            double mean = 0.0;
            for (std::int64_t i = b; i < e; ++i) mean += x[i];
            mean /= static_cast<double>(e - b);
            for (std::int64_t i = b; i < e; ++i) x[i] -= mean;
        }
    }
};

struct CgOptions {
    double tol = 1e-10;
    int max_iterations = 200000;
};

inline SolveStats pcg_solve(const CsrMatrix& A, const std::vector<double>& b, std::vector<double>& x,
                            const GaugeRanges& gauge, const CgOptions& opt = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t N = A.rows;
    SolveStats st;
    st.unknowns = N;
    x.assign(N, 0.0);

    std::vector<double> r = b;
    gauge.project(r);
    double bnorm = 0.0;
    for (double v : r) bnorm += v * v;
    bnorm = std::sqrt(bnorm);
    if (bnorm == 0.0) {
        st.converged = true;
        return st;
    }

    std::vector<double> diag = A.diagonal();
    for (auto& dv : diag) dv = (std::fabs(dv) > 1e-300) ? 1.0 / dv : 1.0;

    std::vector<double> z(N), p(N), Ap(N);
    for (std::int64_t i = 0; i < N; ++i) z[i] = diag[i] * r[i];
    gauge.project(z);
    p = z;
    double rz = 0.0;
    for (std::int64_t i = 0; i < N; ++i) rz += r[i] * z[i];

    for (int it = 0; it < opt.max_iterations; ++it) {
        A.multiply(p, Ap);
        gauge.project(Ap);
        double pAp = 0.0;
        for (std::int64_t i = 0; i < N; ++i) pAp += p[i] * Ap[i];
        if (pAp <= 0.0) break;
        const double alpha = rz / pAp;
        for (std::int64_t i = 0; i < N; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
        }
        if ((it + 1) % 50 == 0) gauge.project(r);
        double rnorm = 0.0;
        for (double v : r) rnorm += v * v;
        rnorm = std::sqrt(rnorm);
        st.iterations = it + 1;
        st.rel_residual = rnorm / bnorm;
        if (st.rel_residual <= opt.tol) {
            st.converged = true;
            break;
        }
        for (std::int64_t i = 0; i < N; ++i) z[i] = diag[i] * r[i];
        gauge.project(z);
        double rz_next = 0.0;
        for (std::int64_t i = 0; i < N; ++i) rz_next += r[i] * z[i];
        const double beta = rz_next / rz;
        rz = rz_next;
        for (std::int64_t i = 0; i < N; ++i) p[i] = z[i] + beta * p[i];
    }
    gauge.project(x);
    st.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!st.converged)
        throw std::runtime_error("pcg_solve: no convergence in " + std::to_string(st.iterations) +
                                 " iterations (rel residual " + std::to_string(st.rel_residual) + ")");
    return st;
}

} // namespace hmglab
