#pragma once

// Axis-aligned cubes (triadic boxes Q_{3^m}), points, and the exact overlap
// |B_r(x) \ U| needed by exterior-conditional coefficient averages.

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace hmglab {

inline constexpr int kMaxDim = 2;

using Point = std::array<double, kMaxDim>;

inline double ipow(double b, int e) {
    if (e < 0) return 1.0 / ipow(b, -e);
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

inline long long ipow_ll(long long b, int e) {
    long long r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

struct TriadicCube {
    int dim = 1;
    double side = 1.0;
    Point center{{0.0, 0.0}};

    double volume() const { return ipow(side, dim); }
    double lo(int axis) const { return center[axis] - 0.5 * side; }
    double hi(int axis) const { return center[axis] + 0.5 * side; }
    double diameter() const { return side * std::sqrt(static_cast<double>(dim)); }

    bool contains(const Point& x) const {
        for (int a = 0; a < dim; ++a)
            if (x[a] < lo(a) || x[a] > hi(a)) return false;
        return true;
    }
    bool contains_strict(const Point& x) const {
        for (int a = 0; a < dim; ++a)
            if (x[a] <= lo(a) || x[a] >= hi(a)) return false;
        return true;
    }

    TriadicCube expanded(double w) const { return TriadicCube{dim, side + 2.0 * w, center}; }

    // The 3^d congruent children tiling this cube, in row-major order.
    std::vector<TriadicCube> children() const {
        const double s = side / 3.0;
        std::vector<TriadicCube> out;
        const int count = static_cast<int>(ipow_ll(3, dim));
        for (int c = 0; c < count; ++c) {
            TriadicCube child{dim, s, center};
            int rem = c;
            for (int a = 0; a < dim; ++a) {
                const int k = rem % 3;
                rem /= 3;
                child.center[a] = center[a] + (k - 1) * s;
            }
            out.push_back(child);
        }
        return out;
    }
};

// Q_{3^m} centered at `center`.
inline TriadicCube triadic_cube(int dim, int level, const Point& center = {{0.0, 0.0}}) {
    if (level < 0) throw std::invalid_argument("triadic_cube: negative level");
    if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("triadic_cube: dim must be 1 or 2");
    double s = 1.0;
    for (int i = 0; i < level; ++i) s *= 3.0;
    return TriadicCube{dim, s, center};
}

inline TriadicCube cube_of_side(int dim, double side, const Point& center = {{0.0, 0.0}}) {
    if (side <= 0.0) throw std::invalid_argument("cube_of_side: side must be positive");
    return TriadicCube{dim, side, center};
}

namespace detail {

// antiderivative of sqrt(r^2-u^2), normalized so F(-r) = 0
inline double circle_F(double t, double r) {
    t = std::fmax(-r, std::fmin(r, t));
    const double s = std::sqrt(std::fmax(0.0, r * r - t * t));
    return 0.5 * (t * s + r * r * (std::asin(t / r) + M_PI / 2.0));
}

// area of {u^2+v^2 <= r^2, u <= x, v <= y}
inline double disk_quarterplane_area(double x, double y, double r) {
    if (x <= -r || y <= -r) return 0.0;
    x = std::fmin(x, r);
    y = std::fmin(y, r);
    const double u0 = std::sqrt(std::fmax(0.0, r * r - y * y));
    double area = 0.0;
    if (y >= 0.0) {
        const double a = std::fmin(x, -u0);
        if (a > -r) area += 2.0 * circle_F(a, r);
        const double b = std::fmin(x, u0);
        if (b > -u0) area += y * (b + u0) + circle_F(b, r) - circle_F(-u0, r);
        if (x > u0) area += 2.0 * (circle_F(x, r) - circle_F(u0, r));
    } else {
        const double hi = std::fmin(x, u0);
        if (hi > -u0) area += y * (hi + u0) + circle_F(hi, r) - circle_F(-u0, r);
    }
    return area;
}

} // namespace detail

// Exact area/length of B_r(x) ∩ U for an axis-aligned box U.
inline double ball_box_overlap(const Point& x, double r, const TriadicCube& U) {
    if (U.dim == 1) {
        const double lo = std::fmax(x[0] - r, U.lo(0));
        const double hi = std::fmin(x[0] + r, U.hi(0));
        return std::fmax(0.0, hi - lo);
    }
    const double x1 = U.lo(0) - x[0], x2 = U.hi(0) - x[0];
    const double y1 = U.lo(1) - x[1], y2 = U.hi(1) - x[1];
    const double a = detail::disk_quarterplane_area(x2, y2, r) - detail::disk_quarterplane_area(x1, y2, r)
                     - detail::disk_quarterplane_area(x2, y1, r) + detail::disk_quarterplane_area(x1, y1, r);
    return std::fmax(0.0, a);
}

inline double ball_volume(int dim, double r) { return dim == 1 ? 2.0 * r : M_PI * r * r; }

// |B_r(x) \ U|
inline double ball_minus_box_volume(const Point& x, double r, const TriadicCube& U) {
    return std::fmax(0.0, ball_volume(U.dim, r) - ball_box_overlap(x, r, U));
}

inline double dist2(const Point& a, const Point& b, int dim) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace hmglab
