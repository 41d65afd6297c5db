#pragma once

// Finite-difference solvers for the semilinear parabolic problems tied to
// Markovian BSDEs: Cauchy (terminal value, or initial value for the heat
// form), Dirichlet on an interval and Neumann on an interval.
//
// Time stepping: theta-scheme for the diffusion (Crank–Nicolson after a
// short fully implicit start) with the Hamiltonian b.grad u + g treated
// explicitly by a Heun predictor-corrector. Gradients are centred and fall
// back to upwind differences where the centred scheme loses monotonicity.

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsdelab/bounds.hpp"
#include "bsdelab/forward.hpp"

namespace bsdelab {

enum class PdeRegime {
    cauchy_terminal,  ///< u_t + L u + g(t, x, u, grad u sigma) = 0, u(T) = h
    heat_initial,     ///< u_t = Laplace u + g(t, x, u, grad u), u(0) = h
    dirichlet,        ///< terminal problem on an interval, u = h on the boundary
    neumann_1d,       ///< u_t = u_xx + g(t, x, u, u_x), u_x = 0 at both ends, u(0) = h
};

std::string to_string(PdeRegime regime);
PdeRegime parse_pde_regime(const std::string& name);

using TerminalMap = std::function<double(std::span<const double> x)>;
using Nonlinearity = std::function<double(double t, std::span<const double> x, double y, std::span<const double> z)>;
/// sigma(t) as a dim x noise_dim row-major matrix.
using TimeMatrixFn = std::function<void(double t, std::span<double> out)>;

struct PdeCertificate {
    bool pass = true;
    double worst_excess = 0.0;
    int worst_slice = -1;
    std::vector<double> times;
    std::vector<double> observed;
    std::vector<double> bound;
    std::vector<double> slack;
};

struct PdeProblem {
    PdeRegime regime = PdeRegime::cauchy_terminal;
    int dim = 1;
    int noise_dim = 1;
    double T = 1.0;
    DriftFn drift;        ///< b(t, x); empty means zero (ignored for heat_initial and neumann_1d)
    TimeMatrixFn sigma;   ///< empty means the identity (ignored for heat_initial and neumann_1d)
    Nonlinearity g;       ///< empty means zero
    TerminalMap h;        ///< terminal, initial and lateral Dirichlet data
    std::vector<double> lo, hi;  ///< box; chosen automatically for Cauchy problems when empty
    int nx = 200;         ///< intervals per axis
    int nt = 200;         ///< time steps
    std::optional<double> ellipticity;
    std::vector<double> probe;   ///< defaults to the origin (Cauchy) or the midpoint
    bool boundary_check = true;  ///< doubling-box test for Cauchy problems
    double boundary_tolerance = 1e-4;
    int store_stride = 1;
    double theta = 0.5;
    int rannacher_steps = 2;
    std::optional<BoundProfile> gradient_profile;  ///< in the original time variable
    std::optional<BoundProfile> value_profile;
};

struct PdeSolution {
    PdeRegime regime = PdeRegime::cauchy_terminal;
    int dim = 1;
    std::vector<double> x, y;  ///< axes (y empty in 1D)
    double dx = 0.0, dt = 0.0;
    int nt = 0;
    std::vector<double> times;               ///< original time, ascending
    std::vector<std::vector<double>> u;      ///< per slice, x index fastest
    std::vector<double> gradient_max;        ///< per slice: max |grad u sigma| (|grad u| for forward regimes)
    std::vector<double> value_max;           ///< per slice: max |u|
    std::vector<double> probe;
    double probe_time = 0.0;                 ///< t0 for terminal regimes, T for forward regimes
    double probe_value = 0.0;
    std::size_t upwind_switches = 0;
    double max_cfl = 0.0;
    std::optional<double> boundary_influence;
    std::optional<double> compatibility_residual;
    std::optional<PdeCertificate> gradient_certificate;
    std::optional<PdeCertificate> value_certificate;

    /// Linear (bilinear in 2D) interpolation in slice s.
    double interpolate(std::size_t slice, std::span<const double> point) const;
    std::size_t slice_at(double t) const;
};

/// Cauchy regimes (cauchy_terminal, heat_initial), dim 1 or 2.
PdeSolution solve_cauchy(const PdeProblem& p);
/// 1D Dirichlet problem on [lo, hi].
PdeSolution solve_dirichlet(const PdeProblem& p);
/// 1D Neumann problem on [lo, hi].
PdeSolution solve_neumann_1d(const PdeProblem& p);
/// Dispatch on p.regime.
PdeSolution solve_pde(const PdeProblem& p);

/// Per-slice gradient maxima against a profile sampled at sol.times; slack dx * max(1, bound).
PdeCertificate gradient_monitor(const PdeSolution& sol, const SampledProfile& profile);
PdeCertificate gradient_monitor(const PdeSolution& sol, const BoundProfile& profile);
/// Per-slice max |u| against a profile sampled at sol.times.
PdeCertificate value_monitor(const PdeSolution& sol, const SampledProfile& profile);

/// CSV rows time, x[, y], u followed by a summary row.
void write_pde_csv(std::ostream& out, const PdeSolution& sol);

}  // namespace bsdelab
