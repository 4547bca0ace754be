#include <catch2/catch_amalgamated.hpp>

#include "hmglab/coefficients.hpp"

using namespace hmglab;

namespace {
Configuration config_at(const std::vector<double>& xs) {
    Configuration c;
    c.region = cube_of_side(1, 100.0);
    for (double x : xs) c.points.push_back(Point{{x, 0.0}});
    return c;
}
} // namespace

TEST_CASE("crowding evaluate") {
    const auto model = CoefficientModel::crowding(1);
    // lone particle: Brownian motion with variance 2
    CHECK(evaluate(model, config_at({0.0}), {{0.0, 0.0}}).at(0, 0) == 2.0);
    // one additional particle within the unit ball: unit variance
    CHECK(evaluate(model, config_at({0.0, 0.7}), {{0.0, 0.0}}).at(0, 0) == 1.0);
    // particle beyond distance 1 does not count
    CHECK(evaluate(model, config_at({0.0, 1.5}), {{0.0, 0.0}}).at(0, 0) == 2.0);
}

TEST_CASE("constant evaluate") {
    const auto model = CoefficientModel::constant(1, 1.7);
    CHECK(evaluate(model, config_at({0.0, 0.1, 0.2}), {{0.0, 0.0}}).at(0, 0) == 1.7);
    CHECK(evaluate(model, config_at({}), {{3.0, 0.0}}).at(0, 0) == 1.7);
}

TEST_CASE("conditional coefficient closed form") {
    const auto model = CoefficientModel::crowding(1);
    const auto U = cube_of_side(1, 1.0);
    // center point, far from the boundary relative to range 1? here lambda=1
    // k=1, lambda=0.5 at the right spot: choose U of side 3 and x=1.0:
    // B_1(x) = [0, 2], U = [-1.5, 1.5] -> lambda = 0.5
    const auto U3 = cube_of_side(1, 3.0);
    Configuration inter = config_at({1.0});
    inter.region = U3;
    const double v1 = conditional_coefficient(model, inter, {{1.0, 0.0}}, U3, 1.0).at(0, 0);
    CHECK(v1 == Catch::Approx(1.0 + std::exp(-0.5)).margin(1e-14));  // 1.6065306597...
    Configuration empty;
    empty.region = U3;
    const double v0 = conditional_coefficient(model, empty, {{1.0, 0.0}}, U3, 1.0).at(0, 0);
    CHECK(v0 == Catch::Approx(1.0 + 0.5 * std::exp(-0.5)).margin(1e-14));  // 1.3032653298...

    // interior point at distance >= 1 from the boundary: no exterior overlap,
    // equals the plain evaluation
    const auto U9 = cube_of_side(1, 9.0);
    Configuration one = config_at({0.0});
    CHECK(conditional_coefficient(model, one, {{0.0, 0.0}}, U9, 1.0).at(0, 0) ==
          evaluate(model, one, {{0.0, 0.0}}).at(0, 0));
    (void)U;
}

TEST_CASE("conditional coefficient matches Monte Carlo") {
    const auto model = CoefficientModel::crowding(1);
    const auto U = cube_of_side(1, 1.0);
    Configuration inter = config_at({0.3});
    inter.region = U;
    const auto exact = conditional_coefficient(model, inter, {{0.3, 0.0}}, U, 1.0);
    RngStream rng(2024);
    const auto [mc, se] = mc_conditional_coefficient(model, inter, {{0.3, 0.0}}, U, 1.0, 40000, rng);
    CHECK(std::fabs(mc.at(0, 0) - exact.at(0, 0)) < 3.0 * se + 1e-6);
}

TEST_CASE("radial count closed form vs Monte Carlo") {
    const auto model = CoefficientModel::radial_count(1, {2, 4}, {3.0, 2.0, 1.0});
    const auto U = cube_of_side(1, 1.0);
    Configuration inter = config_at({0.1, -0.2});
    inter.region = U;
    const auto exact = conditional_coefficient(model, inter, {{0.1, 0.0}}, U, 1.0);
    RngStream rng(77);
    const auto [mc, se] = mc_conditional_coefficient(model, inter, {{0.1, 0.0}}, U, 1.0, 60000, rng);
    CHECK(std::fabs(mc.at(0, 0) - exact.at(0, 0)) < 3.0 * se + 1e-6);
}

TEST_CASE("validate model") {
    RngStream rng(1);
    const auto ok = validate_model(CoefficientModel::constant(1, 1.5), 200, rng);
    CHECK(ok.valid);
    CHECK(ok.min_eig == Catch::Approx(1.5));
    CHECK(ok.max_eig == Catch::Approx(1.5));
    CHECK(ok.range_ok);
    CHECK(ok.stationarity_ok);

    RngStream rng2(2);
    const auto cr = validate_model(CoefficientModel::crowding(1), 500, rng2);
    CHECK(cr.valid);
    CHECK(cr.min_eig >= 1.0);
    CHECK(cr.max_eig <= 2.0);

    // adversarial sub-elliptic model is blocked
    auto bad = CoefficientModel::constant(1, 0.5);
    RngStream rng3(3);
    const auto rep = validate_model(bad, 100, rng3);
    CHECK_FALSE(rep.valid);
}

TEST_CASE("d=2 conditional uses exact circle-box overlap") {
    const auto model = CoefficientModel::crowding(2);
    const auto U = cube_of_side(2, 3.0);
    Configuration inter;
    inter.region = U;
    inter.points.push_back(Point{{1.2, 0.8}});
    const double lam = ball_minus_box_volume({{1.2, 0.8}}, 1.0, U);
    CHECK(lam > 0.0);
    const double got = conditional_coefficient(model, inter, {{1.2, 0.8}}, U, 1.0).at(0, 0);
    CHECK(got == Catch::Approx(1.0 + std::exp(-lam)).margin(1e-14));  // k=1 branch
}
