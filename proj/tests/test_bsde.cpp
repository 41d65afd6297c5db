#include "doctest.h"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "bsdelab/bsde.hpp"
#include "bsdelab/errors.hpp"
#include "bsdelab/regression.hpp"

using namespace bsdelab;

namespace {

PathEnsemble bm(int steps, std::size_t paths, std::uint64_t seed, double T = 1.0) {
    return simulate_paths(Dynamics::brownian(1), std::vector<double>{0.0}, TimeGrid::uniform(0.0, T, steps), paths, seed,
                          SimulationOptions{1});
}

TerminalSpec state(TerminalMap h, double A, std::optional<double> C = std::nullopt) { return TerminalSpec::of_state(std::move(h), A, C); }

BoundConstants consts(double A, double T = 1.0) {
    BoundConstants c;
    c.A = {A};
    c.T = T;
    c.rho = [](double) { return 0.0; };
    return c;
}

}  // namespace

TEST_CASE("regression recovers a polynomial exactly") {
    const std::size_t rows = 2000;
    std::vector<double> x(rows), y(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        x[r] = -2.0 + 4.0 * static_cast<double>(r) / rows;
        y[r] = 1.0 - 2.0 * x[r] + 0.5 * x[r] * x[r] * x[r];
    }
    RegressionProblem pr;
    pr.rows = rows;
    pr.state = [&](std::size_t r, std::span<double> out) { out[0] = x[r]; };
    pr.response = [&](std::size_t r, std::span<double> out) { out[0] = y[r]; };
    const LinearFit fit = fit_regression(pr);
    std::vector<double> phi(fit.basis_size());
    for (double v : {-1.5, 0.1, 1.9}) {
        fit.basis_values(std::span<const double>(&v, 1), phi);
        CHECK(fit.combine(phi, 0, 0) == doctest::Approx(1.0 - 2.0 * v + 0.5 * v * v * v).epsilon(1e-9));
    }
    for (const auto& name : {"constant", "hermite1", "hermite4", "monomial2", "hat8", "cells16"}) CHECK(has_basis(name));
    CHECK_FALSE(has_basis("hermite9"));
}

TEST_CASE("regression coefficients do not depend on the thread count") {
    const auto ens = bm(4, 20000, 1);
    auto fit_with = [&](int threads) {
        RegressionProblem pr;
        pr.rows = ens.paths;
        pr.state = [&](std::size_t r, std::span<double> out) { out[0] = ens.x(r, 2)[0]; };
        pr.response = [&](std::size_t r, std::span<double> out) { out[0] = std::sin(ens.x(r, 4)[0]); };
        pr.threads = threads;
        return fit_regression(pr);
    };
    const auto a = fit_with(1), b = fit_with(3);
    std::vector<double> pa(a.basis_size()), pb(b.basis_size());
    const double v = 0.37;
    a.basis_values(std::span<const double>(&v, 1), pa);
    b.basis_values(std::span<const double>(&v, 1), pb);
    CHECK(a.combine(pa, 0, 0) == b.combine(pb, 0, 0));
}

TEST_CASE("linear driver reproduces the explicit-scheme recursion") {
    const auto ens = bm(50, 2000, 2);
    const auto f = make_builtin(builtin::Linear{-1.0, {}, 0.0});
    const auto sol = solve_lsmc(f, state([](std::span<const double>) { return 1.0; }, 0.0), ens);
    CHECK(sol.Y0 == doctest::Approx(std::pow(1.0 - 0.02, 50)).epsilon(1e-12));
    for (int k = 0; k < 50; ++k) CHECK(sol.max_abs_z(k, 0) < 1e-10);
}

TEST_CASE("terminal consistency is bit-exact") {
    const auto ens = bm(20, 3000, 3);
    const auto term = state([](std::span<const double> x) { return std::sin(x[0]); }, 1.0, 1.0);
    const auto xi = term.sample(ens);
    const auto sol = solve_lsmc(make_builtin(builtin::Linear{0.5, {0.2}, 0.1}), term, ens);
    for (std::size_t p = 0; p < ens.paths; ++p) REQUIRE(sol.y(20, p) == xi[p]);
}

TEST_CASE("z drift driver: Y0 = b T for xi = W_T") {
    const auto ens = bm(20, 20000, 4);
    const auto sol = solve_lsmc(make_builtin(builtin::Linear{0.0, {0.7}, 0.0}), state([](std::span<const double> x) { return x[0]; }, 1.0),
                                ens);
    CHECK(std::abs(sol.Y0 - 0.7) < 5.0 * sol.Y0_stderr + 1e-3);
    for (int k = 0; k < 20; ++k) CHECK(sol.z(k, 7) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("cole-hopf quadratic driver at small scale") {
    const auto ens = bm(25, 20000, 5);
    const auto f = make_builtin(builtin::Quadratic{0.25});
    const auto sol = solve_truncated(f, state([](std::span<const double> x) { return x[0]; }, 1.0), consts(1.0), ens);
    CHECK(sol.Q == 1.0);
    CHECK(std::abs(sol.Y0 - 0.25) < 5.0 * sol.Y0_stderr + 1e-3);
    REQUIRE(sol.certificate);
    CHECK(sol.certificate->pass);
    CHECK(sol.certificate->z_tight);
    CHECK_THROWS_AS(solve_lsmc(f, state([](std::span<const double> x) { return x[0]; }, 1.0), ens), ConfigError);
}

TEST_CASE("comparison: ordered terminal values give ordered solutions") {
    const auto ens = bm(20, 5000, 6);
    const auto f = truncate_z(make_builtin(builtin::Quadratic{0.5}), 1.0);
    double prev = -1e9;
    for (double shift : {-0.2, 0.0, 0.1, 0.5}) {
        const auto sol = solve_lsmc(f, state([shift](std::span<const double> x) { return 0.5 * std::sin(x[0]) + shift; }, 0.5), ens);
        CHECK(sol.Y0 > prev);
        prev = sol.Y0;
        for (std::size_t p = 0; p < 50; ++p) CHECK(sol.y(20, p) >= 0.5 * std::sin(ens.x(p, 20)[0]) + shift - 1e-15);
    }
}

TEST_CASE("truncation is a no-op for a strictly interior solution") {
    const auto ens = bm(25, 20000, 7);
    const auto f = make_builtin(builtin::Quadratic{0.5});
    const auto term = state([](std::span<const double> x) { return 0.4 * std::sin(x[0]); }, 0.4, 0.4);
    const auto a = solve_truncated(f, term, consts(1.0), ens);
    const auto b = solve_truncated(f, term, consts(2.0), ens);
    CHECK(b.Q == 2.0 * *a.Q);
    CHECK(std::abs(a.Y0 - b.Y0) < a.Y0_stderr);
}

TEST_CASE("solutions do not depend on the thread count") {
    const auto ens = bm(20, 9000, 8);
    const auto f = truncate_z(make_builtin(builtin::Power{1.0, 3.0}), 1.0);
    const auto term = state([](std::span<const double> x) { return std::sin(x[0]); }, 1.0, 1.0);
    LsmcOptions o1, o4;
    o1.threads = 1;
    o4.threads = 4;
    const auto a = solve_lsmc(f, term, ens, o1);
    const auto b = solve_lsmc(f, term, ens, o4);
    CHECK(a.Y == b.Y);
    CHECK(a.Z == b.Z);
    CHECK(a.Y0_stderr == b.Y0_stderr);
}

TEST_CASE("picard and explicit schemes agree to first order") {
    const auto ens = bm(40, 5000, 9);
    const auto f = make_builtin(builtin::Linear{-1.0, {}, 0.0});
    LsmcOptions pic;
    pic.scheme = BsdeScheme::picard;
    pic.picard_iterations = 20;
    const auto sol = solve_lsmc(f, state([](std::span<const double>) { return 1.0; }, 0.0), ens, pic);
    // fixed point of y = ybar - dt y
    CHECK(sol.Y0 == doctest::Approx(std::pow(1.0 / 1.025, 40)).epsilon(1e-9));
    CHECK(std::abs(sol.Y0 - std::exp(-1.0)) < 0.01);
}

TEST_CASE("random terminal time: frozen after exit") {
    const auto grid = TimeGrid::uniform(0.0, 1.0, 40);
    ExitOptions eo;
    eo.bridge = true;
    const auto ens = exit_time(simulate_paths(Dynamics::brownian(1), std::vector<double>{0.0}, grid, 5000, 10),
                               DomainSpec::interval(-1.0, 1.0), eo);
    BoundConstants c = consts(2.0);
    c.C = 1.0;
    c.D = 0.0;
    const auto term = state([](std::span<const double> x) { return x[0] * x[0]; }, 2.0, 1.0);
    const auto sol = solve_random_terminal(make_builtin(builtin::Constant{0.0}), term, c, ens);
    std::size_t exited = 0;
    for (std::size_t p = 0; p < ens.paths; ++p) {
        const int tau = ens.tau[p];
        if (tau < 40) ++exited;
        for (int k = tau; k < 40; ++k) {
            REQUIRE(sol.z(k, p) == 0.0);
            REQUIRE(sol.y(k, p) == sol.y(40, p));
        }
        REQUIRE(sol.y(40, p) == ens.exit_point[p] * ens.exit_point[p]);
    }
    CHECK(exited > 1000);
    CHECK(sol.R == doctest::Approx(1.0));
    CHECK_THROWS_AS(solve_random_terminal(make_builtin(builtin::Constant{0.0}), term, c, bm(40, 100, 1)), std::invalid_argument);
}

TEST_CASE("continuation of the terminal value") {
    const auto grid = TimeGrid::uniform(0.0, 1.0, 100);
    std::vector<double> states(101, 0.0);
    const auto f = make_builtin(builtin::Linear{-1.0, {}, 0.0});
    CHECK(std::abs(hat_xi(f, grid, states, 1, 50, 1.0) - std::exp(0.5)) < 1e-6);
    CHECK(hat_xi(f, grid, states, 1, 100, 0.3) == 0.3);
    CHECK(hat_xi(make_builtin(builtin::Constant{2.0}), grid, states, 1, 0, 0.0) == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK_THROWS_AS(hat_xi(f, grid, states, 1, 101, 1.0), std::invalid_argument);
}

TEST_CASE("bound verification") {
    const auto ens = bm(10, 2000, 11);
    const auto sol = solve_lsmc(make_builtin(builtin::Linear{0.0, {}, 0.0}), state([](std::span<const double> x) { return x[0]; }, 1.0), ens);
    SampledProfile tight{ProfileKind::z_bound, 0, ens.grid.nodes(), std::vector<double>(11, 1.0)};
    const auto ok = verify_bounds(sol, {tight});
    CHECK(ok.pass);
    CHECK(ok.z_tight);
    SampledProfile low{ProfileKind::z_bound, 0, ens.grid.nodes(), std::vector<double>(11, 0.5)};
    const auto bad = verify_bounds(sol, {low});
    CHECK_FALSE(bad.pass);
    CHECK(bad.worst_excess == doctest::Approx(1.0).epsilon(1e-6));
    SampledProfile off{ProfileKind::z_bound, 0, std::vector<double>(11, 0.0), std::vector<double>(11, 1.0)};
    CHECK_THROWS_AS(verify_bounds(sol, {off}), std::invalid_argument);
    SlackPolicy s{2.0, 3.0};
    CHECK(s.value(0.01, 100) == doctest::Approx(0.5));
}

TEST_CASE("bsde csv") {
    const auto ens = bm(4, 500, 12);
    auto sol = solve_truncated(make_builtin(builtin::Quadratic{0.25}), state([](std::span<const double> x) { return x[0]; }, 1.0),
                               consts(1.0), ens);
    std::ostringstream os;
    write_bsde_csv(os, sol);
    const std::string s = os.str();
    CHECK(s.rfind("# bsdelab", 0) == 0);
    CHECK(s.find("time,component,max_abs_Z,bound,Y_mean,Y_max_abs,violation_flag\n") != std::string::npos);
    CHECK(s.find('\r') == std::string::npos);
}
