#include "doctest.h"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "bsdelab/errors.hpp"
#include "bsdelab/pde.hpp"

using namespace bsdelab;

namespace {

// (1 / 2mu) log E exp(2 mu h(x + W_T)): the Cole–Hopf solution of
// u_t + u_xx / 2 + mu u_x^2 = 0, u(T) = h.
double cole_hopf(double mu, double T, double x, double (*h)(double)) {
    auto integrand = [&](double z) {
        return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI) * std::exp(2.0 * mu * h(x + std::sqrt(T) * z));
    };
    const double e = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, -12.0, 12.0, 10, 1e-14);
    return std::log(e) / (2.0 * mu);
}

double sine(double x) { return std::sin(x); }

}  // namespace

TEST_CASE("heat equation with sine data, one and two dimensions") {
    PdeProblem p;
    p.regime = PdeRegime::heat_initial;
    p.T = 0.5;
    p.h = [](std::span<const double> x) { return std::sin(x[0]); };
    p.lo = {-M_PI};
    p.hi = {M_PI};
    p.nx = 200;
    p.nt = 200;
    p.probe = {0.7};
    p.boundary_check = false;
    const auto s = solve_pde(p);
    CHECK(s.probe_time == 0.5);
    CHECK(s.probe_value == doctest::Approx(std::exp(-0.5) * std::sin(0.7)).epsilon(2e-4));

    PdeProblem q = p;
    q.dim = 2;
    q.noise_dim = 2;
    q.h = [](std::span<const double> x) { return std::sin(x[0]) * std::sin(x[1]); };
    q.lo = {-M_PI, -M_PI};
    q.hi = {M_PI, M_PI};
    q.nx = 80;
    q.nt = 100;
    q.probe = {0.7, 1.1};
    const auto s2 = solve_pde(q);
    CHECK(s2.probe_value == doctest::Approx(std::exp(-1.0) * std::sin(0.7) * std::sin(1.1)).epsilon(2e-3));
}

TEST_CASE("terminal problem with drift and quadratic data") {
    // u_t + 0.5 u_x + 0.5 * 0.64 u_xx = 0, u(T) = x^2
    PdeProblem p;
    p.T = 1.0;
    p.drift = [](double, std::span<const double>, std::span<double> out) { out[0] = 0.5; };
    p.sigma = [](double, std::span<double> out) { out[0] = 0.8; };
    p.h = [](std::span<const double> x) { return x[0] * x[0]; };
    p.lo = {-8.0};
    p.hi = {8.0};
    p.nx = 400;
    p.nt = 200;
    p.probe = {0.3};
    p.boundary_check = false;
    const auto s = solve_pde(p);
    CHECK(s.probe_value == doctest::Approx(std::pow(0.3 + 0.5, 2) + 0.64).epsilon(1e-3));
}

TEST_CASE("cole-hopf quadratic nonlinearity against quadrature") {
    PdeProblem p;
    p.T = 1.0;
    p.g = [](double, std::span<const double>, double, std::span<const double> z) { return 0.25 * z[0] * z[0]; };
    p.h = [](std::span<const double> x) { return std::sin(x[0]); };
    p.lo = {-6.0};
    p.hi = {6.0};
    p.nx = 240;
    p.nt = 200;
    for (double x : {0.0, 0.9}) {
        p.probe = {x};
        const auto s = solve_pde(p);
        CHECK(s.probe_value == doctest::Approx(cole_hopf(0.25, 1.0, x, sine)).epsilon(1e-3));
        CHECK(s.boundary_influence.value() < 1e-4);
    }
}

TEST_CASE("second-order convergence in space and time") {
    PdeProblem p;
    p.T = 1.0;
    p.g = [](double, std::span<const double>, double, std::span<const double> z) { return 0.25 * z[0] * z[0]; };
    p.h = [](std::span<const double> x) { return std::sin(x[0]); };
    p.lo = {-6.0};
    p.hi = {6.0};
    p.boundary_check = false;
    const double exact = cole_hopf(0.25, 1.0, 0.0, sine);
    double prev = 0.0;
    for (int l = 0; l < 3; ++l) {
        p.nx = 60 << l;
        p.nt = 25 << l;
        const double err = std::abs(solve_pde(p).probe_value - exact);
        if (l > 0) CHECK(prev / err > 3.0);
        prev = err;
    }
}

TEST_CASE("dirichlet problem against the eigenfunction series") {
    double series = 0.0;
    for (int j = 0; j < 2000; ++j) {
        const double k = 2 * j + 1;
        series += (j % 2 == 0 ? 1.0 : -1.0) * 4.0 / (k * M_PI) * 8.0 / (k * k * M_PI * M_PI) * (1.0 - std::exp(-k * k * M_PI * M_PI / 8.0));
    }
    PdeProblem p;
    p.regime = PdeRegime::dirichlet;
    p.h = [](std::span<const double> x) { return x[0] * x[0]; };
    p.lo = {-1.0};
    p.hi = {1.0};
    p.nx = 200;
    p.nt = 400;
    const auto s = solve_pde(p);
    CHECK(s.probe_value == doctest::Approx(series).epsilon(1e-4));
    CHECK(s.compatibility_residual.value() == doctest::Approx(1.0));
    CHECK_THROWS_AS(solve_dirichlet(PdeProblem{}), std::invalid_argument);
}

TEST_CASE("neumann problems") {
    PdeProblem p;
    p.regime = PdeRegime::neumann_1d;
    p.lo = {0.0};
    p.hi = {1.0};
    p.nx = 50;
    p.nt = 1000;
    p.h = [](std::span<const double>) { return 0.0; };
    p.g = [](double, std::span<const double>, double u, std::span<const double>) { return 1.0 + u; };
    const auto s = solve_pde(p);
    double err = 0.0;
    for (std::size_t k = 0; k < s.times.size(); ++k) {
        for (double v : s.u[k]) err = std::max(err, std::abs(v - std::expm1(s.times[k])));
    }
    CHECK(err < 1e-3);

    PdeProblem c = p;
    c.g = nullptr;
    c.h = [](std::span<const double> x) { return std::cos(M_PI * x[0]); };
    c.probe = {0.2};
    c.T = 0.1;
    c.nx = 100;
    c.nt = 200;
    const auto sc = solve_pde(c);
    CHECK(sc.probe_value == doctest::Approx(std::exp(-M_PI * M_PI * 0.1) * std::cos(M_PI * 0.2)).epsilon(1e-3));
}

TEST_CASE("upwinding, CFL and the boundary test") {
    PdeProblem p;
    p.T = 1.0;
    p.sigma = [](double, std::span<double> out) { out[0] = 0.05; };
    p.drift = [](double, std::span<const double>, std::span<double> out) { out[0] = 1.0; };
    p.h = [](std::span<const double> x) { return std::tanh(x[0]); };
    p.lo = {-4.0};
    p.hi = {4.0};
    p.nx = 200;
    p.nt = 100;
    p.boundary_check = false;
    const auto s = solve_pde(p);
    CHECK(s.upwind_switches > 0);
    CHECK(s.max_cfl <= 1.0);
    CHECK(s.probe_value == doctest::Approx(std::tanh(1.0)).epsilon(2e-2));

    p.nt = 5;
    CHECK_THROWS_AS(solve_pde(p), NumericalError);

    PdeProblem b;
    b.h = [](std::span<const double> x) { return std::sin(x[0]); };
    b.lo = {-0.5};
    b.hi = {0.5};
    b.g = [](double, std::span<const double>, double, std::span<const double> z) { return 0.25 * z[0] * z[0]; };
    CHECK_THROWS_AS(solve_pde(b), NumericalError);
}

TEST_CASE("ellipticity is checked when declared") {
    PdeProblem p;
    p.sigma = [](double, std::span<double> out) { out[0] = 0.1; };
    p.h = [](std::span<const double> x) { return x[0]; };
    p.lo = {-3.0};
    p.hi = {3.0};
    p.ellipticity = 0.5;
    CHECK_THROWS(solve_pde(p));
    p.ellipticity = 0.005;
    CHECK_NOTHROW(solve_pde(p));
}

TEST_CASE("gradient and value monitors") {
    PdeProblem p;
    p.T = 1.0;
    p.h = [](std::span<const double> x) { return std::sin(x[0]); };
    p.lo = {-6.0};
    p.hi = {6.0};
    p.nx = 120;
    p.nt = 50;
    p.gradient_profile = BoundProfile(ProfileKind::gradient_bound, [](double) { return 1.0; });
    p.value_profile = BoundProfile(ProfileKind::y_bound, [](double) { return 1.0; });
    const auto s = solve_pde(p);
    REQUIRE(s.gradient_certificate);
    CHECK(s.gradient_certificate->pass);
    CHECK(s.value_certificate->pass);
    const auto tight = gradient_monitor(s, BoundProfile(ProfileKind::gradient_bound, [](double) { return 0.5; }));
    CHECK_FALSE(tight.pass);
    // the heat semigroup contracts |u_x| by exp(-(T - t) / 2) at the origin's neighbourhood
    CHECK(s.gradient_max.front() <= 1.0 + s.dx);
    CHECK(s.gradient_max.back() == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("interpolation and csv output") {
    PdeProblem p;
    p.regime = PdeRegime::heat_initial;
    p.T = 0.1;
    p.h = [](std::span<const double> x) { return 2.0 * x[0] + 1.0; };
    p.lo = {-1.0};
    p.hi = {1.0};
    p.nx = 10;
    p.nt = 4;
    p.boundary_check = false;
    const auto s = solve_pde(p);
    const double x = 0.33;
    CHECK(s.interpolate(0, std::span<const double>(&x, 1)) == doctest::Approx(1.66).epsilon(1e-12));
    CHECK(s.slice_at(0.1) == s.times.size() - 1);
    std::ostringstream os;
    write_pde_csv(os, s);
    const std::string out = os.str();
    CHECK(out.rfind("# bsdelab", 0) == 0);
    CHECK(out.find("time,x,u\n") != std::string::npos);
    CHECK(out.find("# summary,probe_time=") != std::string::npos);
    CHECK(parse_pde_regime("neumann-1d") == PdeRegime::neumann_1d);
    CHECK(to_string(PdeRegime::heat_initial) == "heat");
}
