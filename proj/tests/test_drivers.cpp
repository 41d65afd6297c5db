#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "bsdelab/drivers.hpp"
#include "bsdelab/rng.hpp"

using namespace bsdelab;

namespace {

double eval(const DriverSpec& f, double y, std::vector<double> z, double t = 0.0) {
    const double x = 0.0;
    return f(t, std::span<const double>(&x, 1), y, z);
}

}  // namespace

TEST_CASE("builtin drivers and their metadata") {
    const auto lin = make_builtin(builtin::Linear{-2.0, {0.5, -1.0}, 3.0}, 2);
    CHECK(eval(lin, 1.0, {2.0, 1.0}) == doctest::Approx(-2.0 + 1.0 - 1.0 + 3.0));
    CHECK(lin.metadata().B == 2.0);
    CHECK(lin.metadata().rho(7.0) == doctest::Approx(std::sqrt(1.25)));
    CHECK(lin.globally_lipschitz());

    const auto quad = make_builtin(builtin::Quadratic{0.25});
    CHECK(eval(quad, 5.0, {2.0}) == doctest::Approx(1.0));
    CHECK(quad.metadata().rho(3.0) == doctest::Approx(1.5));
    CHECK_FALSE(quad.globally_lipschitz());

    const auto cube = make_builtin(builtin::Power{1.0, 3.0});
    CHECK(eval(cube, 0.0, {-2.0}) == doctest::Approx(8.0));
    CHECK(cube.metadata().rho(2.0) == doctest::Approx(12.0));

    const auto root = make_builtin(builtin::Power{1.0, 0.5});
    CHECK(std::isinf(root.metadata().rho(0.0)));

    const auto k = make_builtin(builtin::Constant{0.3}, 3);
    CHECK(eval(k, 9.0, {1.0, 2.0, 3.0}) == 0.3);
    CHECK(k.z_dim() == 3);

    CHECK_THROWS_AS(make_builtin(builtin::Linear{1.0, {1.0}, 0.0}, 2), std::invalid_argument);
    CHECK_THROWS_AS(make_builtin(builtin::Power{1.0, -1.0}), std::invalid_argument);
}

TEST_CASE("z truncation projects onto the ball") {
    const auto quad = make_builtin(builtin::Quadratic{1.0}, 2);
    const auto t = truncate_z(quad, 1.0);
    CHECK(eval(t, 0.0, {0.3, 0.4}) == doctest::Approx(0.25));
    CHECK(eval(t, 0.0, {3.0, 4.0}) == doctest::Approx(1.0));
    CHECK(eval(t, 0.0, {0.6, 0.8}) == doctest::Approx(1.0));
    CHECK(t.metadata().z_radius == 1.0);
    CHECK(t.metadata().lipschitz_z == doctest::Approx(2.0));
    CHECK(t.metadata().rho(10.0) == doctest::Approx(2.0));
    CHECK(t.globally_lipschitz());
    CHECK_THROWS_AS(truncate_z(quad, -1.0), std::invalid_argument);
}

TEST_CASE("y and z truncation clamps y") {
    const auto lin = make_builtin(builtin::Linear{1.0, {}, 0.0});
    const auto t = truncate_yz(lin, 2.0, 1.0);
    CHECK(eval(t, 5.0, {0.0}) == 2.0);
    CHECK(eval(t, -5.0, {0.0}) == -2.0);
    CHECK(eval(t, 1.5, {0.0}) == 1.5);
    CHECK(t.metadata().y_radius == 2.0);
}

TEST_CASE("truncation is a no-op inside the ball") {
    const auto cube = make_builtin(builtin::Power{1.0, 3.0});
    const auto t = truncate_z(cube, 2.0);
    RandomStream rs(5, 0, RngChannel::user);
    for (int k = 0; k < 200; ++k) {
        const double z = 4.0 * rs.uniform() - 2.0;
        CHECK(eval(t, 0.0, {z}) == eval(cube, 0.0, {z}));
    }
}

TEST_CASE("mollification") {
    // linear drivers are reproduced exactly by a symmetric kernel
    const auto lin = make_builtin(builtin::Linear{-0.5, {2.0}, 1.0});
    const auto ml = mollify(lin, 3);
    for (double y : {-1.0, 0.0, 2.5}) {
        for (double z : {-1.0, 0.4}) CHECK(eval(ml, y, {z}) == doctest::Approx(eval(lin, y, {z})).epsilon(1e-12));
    }
    // |z| smoothed: error at most Lipschitz / m, and shrinking with m
    const auto absz = make_builtin(builtin::Power{1.0, 1.0});
    double prev = 1e9;
    for (int m : {1, 4, 16}) {
        const auto g = mollify(absz, m);
        const double err = std::abs(eval(g, 0.0, {0.0}) - 0.0);
        CHECK(err <= 1.0 / m + 1e-12);
        CHECK(err < prev);
        prev = err;
        CHECK(eval(g, 0.0, {0.3}) == doctest::Approx(eval(g, 0.0, {-0.3})).epsilon(1e-12));
    }
    CHECK(mollifier_normalizer(1) > 0.0);
    CHECK_THROWS_AS(mollify(make_builtin(builtin::Quadratic{1.0}), 2), std::invalid_argument);
}

TEST_CASE("mollifier normaliser inverts the bump integral") {
    double s = 0.0;
    const int n = 200000;
    for (int k = 0; k < n; ++k) {
        const double u = -1.0 + (k + 0.5) * 2.0 / n;
        s += std::exp(-1.0 / (1.0 - u * u)) * 2.0 / n;
    }
    // the order-8 rule resolves the bump to about 1e-3
    CHECK(mollifier_normalizer(1) * s == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("lipschitz probe confirms honest and catches false declarations") {
    ProbeRegion region;
    region.x = {{-1.0, 1.0}};
    region.z = {{-2.0, 2.0}};
    const auto quad = make_builtin(builtin::Quadratic{0.5});
    const auto ok = lipschitz_probe(quad, region, 500, 3);
    CHECK(ok.ok());
    CHECK(ok.rho <= 2.0 + 1e-9);
    CHECK(ok.rho > 1.5);

    DriverMetadata lie;
    lie.B = 0.0;
    lie.rho = [](double) { return 0.1; };
    lie.lipschitz_z = 0.1;
    const DriverSpec liar([](double, std::span<const double>, double y, std::span<const double> z) { return y + z[0] * z[0]; }, 1,
                          lie);
    const auto bad = lipschitz_probe(liar, region, 500, 3);
    CHECK_FALSE(bad.ok());
    CHECK(bad.violations.size() >= 2);
}

TEST_CASE("probe is reproducible for a fixed seed") {
    ProbeRegion region;
    region.x = {{-1.0, 1.0}};
    region.z = {{-1.0, 1.0}};
    const auto cube = make_builtin(builtin::Power{1.0, 3.0});
    const auto a = lipschitz_probe(cube, region, 300, 9);
    const auto b = lipschitz_probe(cube, region, 300, 9);
    CHECK(a.rho == b.rho);
    CHECK(a.samples == b.samples);
}
