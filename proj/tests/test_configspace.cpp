#include <catch2/catch_amalgamated.hpp>

#include "hmglab/configuration.hpp"
#include "hmglab/geometry.hpp"
#include "hmglab/sector_grid.hpp"
#include "hmglab/sector_weights.hpp"

using namespace hmglab;

TEST_CASE("triadic cubes") {
    const auto q0 = triadic_cube(1, 0);
    CHECK(q0.side == 1.0);
    CHECK(q0.volume() == 1.0);

    const auto q2 = triadic_cube(1, 2);
    CHECK(q2.side == 9.0);
    auto kids = q2.children();
    REQUIRE(kids.size() == 3);
    for (const auto& k : kids) CHECK(k.side == 3.0);
    // children tile the parent: ordered lo-to-hi in d=1
    CHECK(kids[0].lo(0) == Catch::Approx(q2.lo(0)));
    CHECK(kids[2].hi(0) == Catch::Approx(q2.hi(0)));

    const auto q3 = triadic_cube(2, 3);
    auto kids2 = q3.children();
    REQUIRE(kids2.size() == 9);
    double vol = 0.0;
    for (const auto& k : kids2) {
        CHECK(k.side == Catch::Approx(9.0));
        vol += k.volume();
    }
    CHECK(vol == Catch::Approx(729.0));

    CHECK_THROWS(triadic_cube(1, -1));
}

TEST_CASE("ball-box overlap") {
    // d=1 interval arithmetic
    const auto U = cube_of_side(1, 1.0);
    CHECK(ball_minus_box_volume({{0.0, 0.0}}, 1.0, U) == Catch::Approx(1.0));
    // B_1(0.5) = [-0.5, 1.5], U = [-0.5, 0.5]: overlap 1, remainder 1
    CHECK(ball_minus_box_volume({{0.5, 0.0}}, 1.0, U) == Catch::Approx(1.0));
    CHECK(ball_minus_box_volume({{1.6, 0.0}}, 1.0, U) == Catch::Approx(2.0));
    CHECK(ball_minus_box_volume({{0.0, 0.0}}, 0.25, U) == Catch::Approx(0.0));
    // d=2 against Monte Carlo
    const auto U2 = cube_of_side(2, 2.0);
    RngStream rng(7);
    for (int it = 0; it < 5; ++it) {
        Point x{{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)}};
        int inside = 0;
        const int N = 200000;
        RngStream s = rng.child(it);
        for (int i = 0; i < N; ++i) {
            const double a = s.uniform(0.0, 2.0 * M_PI);
            const double r = std::sqrt(s.uniform());
            Point y{{x[0] + r * std::cos(a), x[1] + r * std::sin(a)}};
            if (U2.contains(y)) ++inside;
        }
        const double mc = M_PI * (1.0 - static_cast<double>(inside) / N);
        const double exact = ball_minus_box_volume(x, 1.0, U2);
        CHECK(std::fabs(mc - exact) < 4.0 * M_PI * std::sqrt(0.25 / N) + 0.01);
    }
}

TEST_CASE("sector weights") {
    // single sector
    const auto w0 = sector_weights(1.0, 5.0, 0);
    CHECK(w0.weights.size() == 1);
    CHECK(w0.weights[0] == 1.0);

    // rho*V = 1, n_max = 2: pmf e^{-1}(1, 1, 1/2), renormalized (.4, .4, .2)
    const auto w = sector_weights(1.0, 1.0, 2);
    REQUIRE(w.weights.size() == 3);
    CHECK(w.weights[0] == Catch::Approx(0.4).margin(1e-12));
    CHECK(w.weights[1] == Catch::Approx(0.4).margin(1e-12));
    CHECK(w.weights[2] == Catch::Approx(0.2).margin(1e-12));
    CHECK(w.truncated_mean == Catch::Approx(0.8).margin(1e-12));
    CHECK(w.truncated_mass == Catch::Approx(2.5 * std::exp(-1.0)).margin(1e-14));
    double sum = 0.0;
    for (double x : w.weights) sum += x;
    CHECK(sum == Catch::Approx(1.0).margin(1e-15));
    CHECK(w.warning);  // mass 0.9197 sits below the default 0.99 floor
    CHECK_FALSE(sector_weights(1.0, 1.0, 6).warning);

    // ratio property pi_{n+1}/pi_n = rho V/(n+1) before and after renormalizing
    const auto w2 = sector_weights(2.0, 3.0, 6);
    for (int n = 0; n < 6; ++n)
        CHECK(w2.weights[n + 1] / w2.weights[n] == Catch::Approx(6.0 / (n + 1)).margin(1e-12));

    // low-mass warning fires
    const auto w3 = sector_weights(1.0, 27.0, 3);
    CHECK(w3.warning);
    CHECK(w3.truncated_mass < 0.9);

    CHECK_THROWS(sector_weights(-1.0, 1.0, 2));
    CHECK_THROWS(sector_weights(1.0, 1.0, -2));
}

TEST_CASE("sector grid counts and flags") {
    // d=1 side 1, n=2, h=0.5, collar 0: 3 axis nodes, 6 orbit representatives
    SectorBasis b(cube_of_side(1, 1.0), 0.5, 2, 0.0);
    CHECK(b.nodes_per_axis() == 3);
    CHECK(b.node_count(2) == 6);  // C(4,2)
    CHECK(b.node_count(1) == 3);
    CHECK(b.node_count(0) == 1);

    // full tensor count = sum of orbit sizes
    double full = 0.0;
    b.for_each_multiset(b.spatial_nodes(), 2, [&](const Tuple& t) { full += SectorBasis::orbit_size(t, 2); });
    CHECK(full == 9.0);

    // collar grid: side 1, h=0.25, collar 1: axis [-1.5, 1.5], 13 nodes,
    // exactly 2 flagged on the U boundary
    SectorBasis c(cube_of_side(1, 1.0), 0.25, 1, 1.0);
    CHECK(c.nodes_per_axis() == 13);
    CHECK(c.region().lo(0) == Catch::Approx(-1.5));
    CHECK(c.region().hi(0) == Catch::Approx(1.5));
    int boundary = 0, outside = 0;
    for (std::int64_t s = 0; s < c.spatial_nodes(); ++s) {
        if (c.node_class(s) == NodeClass::Boundary) ++boundary;
        if (c.node_class(s) == NodeClass::Outside) ++outside;
    }
    CHECK(boundary == 2);
    CHECK(outside == 8);

    // n=0: the single empty-configuration node
    CHECK(b.node_count(0) == 1);

    // memory budget rejected
    CHECK_THROWS(SectorBasis(cube_of_side(1, 9.0), 0.25, 3, 0.0, 1000));
}

TEST_CASE("rank round trip and orbit symmetry") {
    SectorBasis b(cube_of_side(1, 3.0), 0.5, 3, 0.0);
    std::int64_t r = 0;
    b.for_each_multiset(b.spatial_nodes(), 3, [&](const Tuple& t) {
        CHECK(b.node_rank(t, 3) == r);
        ++r;
    });
    CHECK(r == b.node_count(3));

    // evaluating a field at a permuted tuple returns the identical value
    SectorField f = SectorField::zeros(b);
    RngStream rng(3);
    for (auto& v : f.values[3]) v = rng.normal();
    Tuple t{};
    t[0] = 5; t[1] = 2; t[2] = 5;
    Tuple t2{};
    t2[0] = 5; t2[1] = 5; t2[2] = 2;
    CHECK(f.at_tuple(3, t) == f.at_tuple(3, t2));
}

TEST_CASE("child grid nodes embed into the parent grid") {
    const auto parent = triadic_cube(1, 1);
    SectorBasis pb(parent, 0.5, 1, 0.0);
    for (const auto& child : parent.children()) {
        SectorBasis cb(child, 0.5, 1, 0.0);
        for (std::int64_t s = 0; s < cb.spatial_nodes(); ++s) {
            const Point x = cb.node_position(s);
            // position must coincide with a parent node
            const double t = (x[0] - pb.region().lo(0)) / pb.h();
            CHECK(std::fabs(t - std::llround(t)) < 1e-12);
        }
    }
}

TEST_CASE("poisson sampling") {
    const auto box = cube_of_side(1, 3.0);
    RngStream rng(42);
    const int N = 100000;
    double mean = 0.0;
    for (int i = 0; i < N; ++i) {
        RngStream s = rng.child(i);
        mean += sample_configuration(box, 1.0, s).count();
    }
    mean /= N;
    CHECK(std::fabs(mean - 3.0) < 3.0 * std::sqrt(3.0 / N));

    // determinism: identical stream, identical configuration
    RngStream a(99), b2(99);
    const auto c1 = sample_configuration(box, 1.0, a);
    const auto c2 = sample_configuration(box, 1.0, b2);
    CHECK(c1 == c2);

    // canonical ordering is sorted
    RngStream c(5);
    auto cfg = sample_configuration(box, 2.0, c);
    for (int i = 1; i < cfg.count(); ++i) CHECK(cfg.points[i - 1][0] <= cfg.points[i][0]);

    // rho -> 0: empty with probability -> 1
    RngStream dd(11);
    int empties = 0;
    for (int i = 0; i < 1000; ++i) {
        RngStream s = dd.child(i);
        if (sample_configuration(box, 1e-6, s).count() == 0) ++empties;
    }
    CHECK(empties >= 998);
}
