#pragma once

// Symmetric tensor grids realizing the canonical projection: a function on
// configuration space restricted to n particles in a box is a permutation-
// invariant function on box^n, discretized with Q1 elements on a uniform
// grid. Permutation symmetry is exploited by storing one value per sorted
// n-tuple of per-particle grid nodes (multiset representatives).

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "hmglab/geometry.hpp"
#include "hmglab/sector_weights.hpp"

namespace hmglab {

inline constexpr int kMaxSector = 16;

using Tuple = std::array<std::int32_t, kMaxSector>;

// node classification relative to the physical domain U
enum class NodeClass : std::uint8_t { Interior = 0, Boundary = 1, Outside = 2 };

class SectorBasis {
  public:
    // region: the grid's spatial domain (U itself, or U expanded by the collar width)
    // domain:  the physical cube U (boundary flags and integral restrictions refer to it)
    SectorBasis(const TriadicCube& domain, double h, int n_max, double collar_width,
                std::int64_t node_budget = 8'000'000)
        : domain_(domain), h_(h), n_max_(n_max), collar_(collar_width) {
        if (collar_width != 0.0 && collar_width != 1.0)
            throw std::invalid_argument("SectorBasis: collar_width must be 0 or 1");
        region_ = domain.expanded(collar_width);
        dim_ = domain.dim;
        const double cells_f = region_.side / h;
        const auto cells = static_cast<std::int64_t>(std::llround(cells_f));
        if (std::fabs(cells * h - region_.side) > 1e-9 * region_.side)
            throw std::invalid_argument("SectorBasis: h must divide the region side evenly");
        G_ = static_cast<int>(cells) + 1;
        iU_lo_ = static_cast<int>(std::llround(collar_width / h));
        iU_hi_ = (G_ - 1) - iU_lo_;
        if (iU_lo_ > 0 && std::fabs(iU_lo_ * h - collar_width) > 1e-12)
            throw std::invalid_argument("SectorBasis: h must divide the collar width evenly");
        P_ = ipow_ll(G_, dim_);
        cells_per_axis_ = G_ - 1;
        PC_ = ipow_ll(cells_per_axis_, dim_);

        // binomial table for multiset ranking
        const int rows = static_cast<int>(P_ + n_max_ + 2);
        binom_.assign(static_cast<size_t>(rows) * (n_max_ + 2), 0);
        for (int a = 0; a < rows; ++a) {
            bin_at(a, 0) = 1;
            for (int b = 1; b <= n_max_ + 1; ++b) {
                if (b > a) { bin_at(a, b) = 0; continue; }
                const auto v = bin_at(a - 1, b - 1) + bin_at(a - 1, b);
                bin_at(a, b) = v;
            }
        }
        sector_nodes_.resize(n_max_ + 1);
        sector_elems_.resize(n_max_ + 1);
        for (int n = 0; n <= n_max_; ++n) {
            sector_nodes_[n] = multiset_count(P_, n);
            sector_elems_[n] = multiset_count(PC_, n);
            if (sector_nodes_[n] > node_budget || sector_nodes_[n] < 0)
                throw std::runtime_error("SectorBasis: sector " + std::to_string(n) +
                                         " exceeds the node budget");
        }

        node_class_.resize(P_);
        for (std::int64_t s = 0; s < P_; ++s) node_class_[s] = classify(s);
        cell_in_U_.resize(PC_);
        for (std::int64_t c = 0; c < PC_; ++c) cell_in_U_[c] = cell_inside(c, iU_lo_, iU_hi_);
    }

    int dim() const { return dim_; }
    int n_max() const { return n_max_; }
    double h() const { return h_; }
    int nodes_per_axis() const { return G_; }
    int cells_axis() const { return cells_per_axis_; }
    std::int64_t spatial_nodes() const { return P_; }
    std::int64_t spatial_cells() const { return PC_; }
    double collar_width() const { return collar_; }
    const TriadicCube& region() const { return region_; }
    const TriadicCube& domain() const { return domain_; }
    std::int64_t node_count(int n) const { return sector_nodes_[n]; }
    std::int64_t elem_count(int n) const { return sector_elems_[n]; }

    double axis_pos(int i) const { return region_.lo(0) + i * h_; }

    Point node_position(std::int64_t s) const {
        Point p{{0.0, 0.0}};
        for (int a = 0; a < dim_; ++a) {
            p[a] = region_.lo(a) + static_cast<double>(s % G_) * h_;
            s /= G_;
        }
        return p;
    }

    Point cell_midpoint(std::int64_t c) const {
        Point p{{0.0, 0.0}};
        for (int a = 0; a < dim_; ++a) {
            p[a] = region_.lo(a) + (static_cast<double>(c % cells_per_axis_) + 0.5) * h_;
            c /= cells_per_axis_;
        }
        return p;
    }

    NodeClass node_class(std::int64_t s) const { return node_class_[s]; }
    bool cell_in_domain(std::int64_t c) const { return cell_in_U_[c] != 0; }

    // does cell c lie entirely inside `box` (whose faces align with the grid)?
    bool cell_in_box(std::int64_t c, const TriadicCube& box) const {
        for (int a = 0; a < dim_; ++a) {
            const double lo = region_.lo(a) + static_cast<double>(c % cells_per_axis_) * h_;
            if (lo < box.lo(a) - 1e-9 || lo + h_ > box.hi(a) + 1e-9) return false;
            c /= cells_per_axis_;
        }
        return true;
    }

    // spatial node index of a cell corner; bit b of `corner` picks hi/lo per axis
    std::int64_t cell_corner(std::int64_t c, unsigned corner) const {
        std::int64_t s = 0, mul = 1;
        for (int a = 0; a < dim_; ++a) {
            const std::int64_t ca = c % cells_per_axis_;
            c /= cells_per_axis_;
            s += (ca + ((corner >> a) & 1u)) * mul;
            mul *= G_;
        }
        return s;
    }

    // rank of a sorted tuple among all multisets of size n over [0, P)
    std::int64_t node_rank(const Tuple& t, int n) const { return rank_impl(t, n, static_cast<int>(P_)); }
    std::int64_t elem_rank(const Tuple& t, int n) const { return rank_impl(t, n, static_cast<int>(PC_)); }

    // orbit size n! / prod(multiplicity!) of a sorted tuple
    static double orbit_size(const Tuple& t, int n) {
        double fact = 1.0;
        for (int i = 2; i <= n; ++i) fact *= i;
        int i = 0;
        while (i < n) {
            int j = i + 1;
            while (j < n && t[j] == t[i]) ++j;
            double rf = 1.0;
            for (int k = 2; k <= j - i; ++k) rf *= k;
            fact /= rf;
            i = j;
        }
        return fact;
    }

    // iterate sorted tuples of size n over [0, limit): callback(tuple)
    template <class F>
    void for_each_multiset(std::int64_t limit, int n, F&& f) const {
        if (n == 0) {
            Tuple t{};
            f(t);
            return;
        }
        Tuple t{};
        for (int i = 0; i < n; ++i) t[i] = 0;
        for (;;) {
            f(t);
            int j = n - 1;
            while (j >= 0 && t[j] == limit - 1) --j;
            if (j < 0) break;
            const std::int32_t v = t[j] + 1;
            for (int k = j; k < n; ++k) t[k] = v;
        }
    }

  private:
    std::int64_t& bin_at(int a, int b) { return binom_[static_cast<size_t>(a) * (n_max_ + 2) + b]; }
    std::int64_t bin_at(int a, int b) const { return binom_[static_cast<size_t>(a) * (n_max_ + 2) + b]; }

    std::int64_t multiset_count(std::int64_t base, int n) const {
        return bin_at(static_cast<int>(base) + n - 1, n);
    }

    std::int64_t rank_impl(const Tuple& t, int n, int base) const {
        // lexicographic rank among non-decreasing tuples over [0, base):
        // hockey-stick count of tuples preceding t at each position
        std::int64_t r = 0;
        for (int i = 0; i < n; ++i) {
            const int m = n - 1 - i;  // remaining positions after i
            const int lo = i == 0 ? 0 : t[i - 1];
            r += bin_at(base - lo + m, m + 1) - bin_at(base - t[i] + m, m + 1);
        }
        return r;
    }

    NodeClass classify(std::int64_t s) const {
        bool boundary = false;
        for (int a = 0; a < dim_; ++a) {
            const int i = static_cast<int>(s % G_);
            s /= G_;
            if (i < iU_lo_ || i > iU_hi_) return NodeClass::Outside;
            if (i == iU_lo_ || i == iU_hi_) boundary = true;
        }
        return boundary ? NodeClass::Boundary : NodeClass::Interior;
    }

    bool cell_inside(std::int64_t c, int lo, int hi) const {
        for (int a = 0; a < dim_; ++a) {
            const int i = static_cast<int>(c % cells_per_axis_);
            c /= cells_per_axis_;
            if (i < lo || i + 1 > hi) return false;
        }
        return true;
    }

    TriadicCube domain_;
    TriadicCube region_;
    double h_;
    int n_max_;
    double collar_;
    int dim_ = 1;
    int G_ = 2;
    int iU_lo_ = 0, iU_hi_ = 1;
    int cells_per_axis_ = 1;
    std::int64_t P_ = 2, PC_ = 1;
    std::vector<std::int64_t> binom_;
    std::vector<std::int64_t> sector_nodes_, sector_elems_;
    std::vector<NodeClass> node_class_;
    std::vector<std::uint8_t> cell_in_U_;
};

enum class FieldClass { DirichletAffine, Neumann, Free };

// Per-sector node values on a SectorBasis.
struct SectorField {
    const SectorBasis* basis = nullptr;
    std::vector<std::vector<double>> values;  // [sector][reduced node]
    FieldClass tag = FieldClass::Free;
    std::array<double, kMaxDim> slope{{0.0, 0.0}};  // dirichlet-affine slope p
    bool collar = false;
    // which normalizer produced "per unit mass" quantities on this field
    double normalizer = 0.0;

    static SectorField zeros(const SectorBasis& b, FieldClass tag = FieldClass::Free) {
        SectorField f;
        f.basis = &b;
        f.tag = tag;
        f.collar = b.collar_width() > 0.0;
        f.values.resize(b.n_max() + 1);
        for (int n = 0; n <= b.n_max(); ++n) f.values[n].assign(b.node_count(n), 0.0);
        return f;
    }

    double& at(int n, std::int64_t rank) { return values[n][rank]; }
    double at(int n, std::int64_t rank) const { return values[n][rank]; }

    // value at a full (unsorted) tuple of spatial nodes: sorts, then looks up
    double at_tuple(int n, Tuple t) const {
        std::sort(t.begin(), t.begin() + n);
        return values[n][basis->node_rank(t, n)];
    }

    // multilinear interpolation at an arbitrary configuration of n points
    // (all inside the region); also returns d/dx of particle `grad_i`, axis
    // `grad_axis` if grad_i >= 0.
    double evaluate(const std::vector<Point>& pos, int grad_i = -1, int grad_axis = 0,
                    double* grad_out = nullptr) const {
        const int n = static_cast<int>(pos.size());
        const int d = basis->dim();
        const int G = basis->nodes_per_axis();
        const double h = basis->h();
        std::array<std::array<int, kMaxDim>, kMaxSector> cell{};
        std::array<std::array<double, kMaxDim>, kMaxSector> w{};
        for (int i = 0; i < n; ++i) {
            for (int a = 0; a < d; ++a) {
                double t = (pos[i][a] - basis->region().lo(a)) / h;
                int c = static_cast<int>(std::floor(t));
                c = std::max(0, std::min(G - 2, c));
                cell[i][a] = c;
                w[i][a] = t - c;
            }
        }
        const int dn = d * n;
        double val = 0.0, grad = 0.0;
        Tuple t{};
        for (unsigned corner = 0; corner < (1u << dn); ++corner) {
            double weight = 1.0, gweight = 1.0;
            for (int i = 0; i < n; ++i) {
                std::int64_t s = 0, mul = 1;
                for (int a = 0; a < d; ++a) {
                    const int bit = (corner >> (i * d + a)) & 1u;
                    s += (cell[i][a] + bit) * mul;
                    mul *= G;
                    const double wa = bit ? w[i][a] : 1.0 - w[i][a];
                    weight *= wa;
                    if (grad_i == i && grad_axis == a)
                        gweight *= bit ? 1.0 / h : -1.0 / h;
                    else
                        gweight *= wa;
                }
                t[i] = static_cast<std::int32_t>(s);
            }
            const double v = at_tuple_fast(t, n);
            val += weight * v;
            if (grad_i >= 0) grad += gweight * v;
        }
        if (grad_out) *grad_out = grad;
        return val;
    }

  private:
    double at_tuple_fast(Tuple t, int n) const {
        std::sort(t.begin(), t.begin() + n);
        return values[n][basis->node_rank(t, n)];
    }
};

} // namespace hmglab
