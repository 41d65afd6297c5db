#pragma once

// Forward layer: time grids, Euler–Maruyama ensembles, reflected
// diffusions with local time, first exit times, finite-difference
// Malliavin derivatives and the Clark–Ocone check.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsdelab/domain.hpp"
#include "bsdelab/regression.hpp"

namespace bsdelab {

class TimeGrid {
public:
    TimeGrid() = default;
    static TimeGrid uniform(double t0, double T, int steps);
    /// Strictly increasing nodes; at least two.
    static TimeGrid from_nodes(std::vector<double> nodes);

    double t0() const { return nodes_.front(); }
    double T() const { return nodes_.back(); }
    int steps() const { return static_cast<int>(nodes_.size()) - 1; }
    const std::vector<double>& nodes() const { return nodes_; }
    double node(int k) const { return nodes_[static_cast<std::size_t>(k)]; }
    double dt(int k) const { return nodes_[static_cast<std::size_t>(k) + 1] - nodes_[static_cast<std::size_t>(k)]; }
    bool is_uniform() const { return uniform_; }
    /// Largest step.
    double max_dt() const;

private:
    std::vector<double> nodes_{0.0, 1.0};
    bool uniform_ = true;
};

using DriftFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
/// Writes sigma(t, x) as a state_dim x noise_dim row-major matrix.
using DiffusionFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;

struct Dynamics {
    int state_dim = 1;
    int noise_dim = 1;
    DriftFn drift;          ///< empty means zero drift
    DiffusionFn diffusion;  ///< empty means the identity (requires state_dim == noise_dim)
    bool state_dependent_diffusion = false;

    /// dX = scale dW in dim dimensions.
    static Dynamics brownian(int dim, double scale = 1.0);
    /// dX = b(X) dt + sigma dW with constant matrix sigma (row-major).
    static Dynamics constant_coefficients(int state_dim, int noise_dim, std::vector<double> b, std::vector<double> sigma);
};

/// Simulated paths. Layouts are path-major: dW[(p * steps + k) * n + i],
/// X[(p * (steps + 1) + k) * m + j], L[p * (steps + 1) + k].
struct PathEnsemble {
    TimeGrid grid;
    int state_dim = 1;
    int noise_dim = 1;
    std::size_t paths = 0;
    std::uint64_t seed = 0;
    bool reflected = false;
    std::vector<double> dW;
    std::vector<double> X;
    std::vector<double> L;           ///< empty unless reflected
    std::vector<int> tau;            ///< empty unless exit_time was run; node index of exit (steps if none)
    std::vector<double> exit_point;  ///< [p * m + j], filled with tau

    std::span<const double> dw(std::size_t p, int k) const {
        return {dW.data() + (p * static_cast<std::size_t>(grid.steps()) + static_cast<std::size_t>(k)) * static_cast<std::size_t>(noise_dim),
                static_cast<std::size_t>(noise_dim)};
    }
    std::span<const double> x(std::size_t p, int k) const {
        return {X.data() + (p * static_cast<std::size_t>(grid.steps() + 1) + static_cast<std::size_t>(k)) * static_cast<std::size_t>(state_dim),
                static_cast<std::size_t>(state_dim)};
    }
    /// All increments of path p (steps * noise_dim values).
    std::span<const double> dw_path(std::size_t p) const {
        const std::size_t len = static_cast<std::size_t>(grid.steps()) * static_cast<std::size_t>(noise_dim);
        return {dW.data() + p * len, len};
    }
    double local_time(std::size_t p, int k) const { return L[p * static_cast<std::size_t>(grid.steps() + 1) + static_cast<std::size_t>(k)]; }
    bool has_tau() const { return !tau.empty(); }
    bool has_local_time() const { return !L.empty(); }
};

struct SimulationOptions {
    int threads = 0;  ///< 0 = hardware concurrency
};

/// Euler–Maruyama. Path p uses the counter-based stream (seed, p), so
/// results do not depend on the number of paths or threads.
PathEnsemble simulate_paths(const Dynamics& dyn, std::span<const double> x0, const TimeGrid& grid, std::size_t paths,
                            std::uint64_t seed, const SimulationOptions& opt = {});

enum class ReflectionScheme {
    symmetric,   ///< mirror the Euler proposal through the boundary, projection if the mirror is outside
    projection,  ///< nearest point of the closed domain
};

struct ReflectionOptions {
    ReflectionScheme scheme = ReflectionScheme::symmetric;
    int threads = 0;
};

/// One reflected step applied to an Euler proposal y in place; returns the
/// local-time increment |Pi(y) - y|.
double reflect_step(const DomainSpec& domain, std::span<double> y, ReflectionScheme scheme);

PathEnsemble simulate_reflected(const DomainSpec& domain, const Dynamics& dyn, std::span<const double> x0,
                                const TimeGrid& grid, std::size_t paths, std::uint64_t seed,
                                const ReflectionOptions& opt = {});

struct ExitOptions {
    bool bridge = false;  ///< Brownian-bridge crossing probability between nodes
    /// Diffusion used by the bridge correction; defaults to the identity.
    DiffusionFn diffusion;
    int threads = 0;
};

/// Fills tau (first node outside the open domain, or steps) and exit_point
/// (the exit location projected onto the boundary when a projection exists,
/// X at the final node otherwise). A bridge exit inside the last step keeps
/// tau == steps with the exit point on the boundary.
PathEnsemble exit_time(PathEnsemble ens, const DomainSpec& domain, const ExitOptions& opt = {});

/// A Wiener functional evaluated from the increments of one path.
using PathFunctional = std::function<double(const TimeGrid& grid, std::span<const double> dW, int noise_dim)>;

struct MalliavinBump {
    int component = 0;
    double start = 0.0;
    double length = 0.0;
    double amplitude = 1e-4;
};

/// Per-path central differences (xi(W + eps eta) - xi(W - eps eta)) / (2 eps),
/// eta' = 1_[r, r+h] / h in the given component.
std::vector<double> malliavin_estimate(const PathFunctional& xi, const PathEnsemble& ens, const MalliavinBump& bump,
                                       int threads = 0);

std::vector<double> evaluate_functional(const PathFunctional& xi, const PathEnsemble& ens, int threads = 0);

namespace functionals {
/// phi(W^i_T); phi defaults to the identity.
PathFunctional brownian_terminal(int component = 0, std::function<double(double)> phi = {});
/// max over grid nodes of W^i.
PathFunctional running_max(int component = 0);
/// Integral sum_k h(t_k) dW_k.
PathFunctional wiener_integral(std::function<double(double)> h, int component = 0);
/// Component j of the Euler solution at T, rebuilt from the increments.
PathFunctional forward_terminal(Dynamics dyn, std::vector<double> x0, int component = 0);
/// Component j of the reflected solution at T, rebuilt from the increments.
PathFunctional reflected_terminal(DomainSpec domain, Dynamics dyn, std::vector<double> x0, int component = 0,
                                  ReflectionScheme scheme = ReflectionScheme::symmetric);
}  // namespace functionals

struct ClarkOconeResult {
    /// integrand[(k * paths + p) * n + i] estimates E[D^i_{t_k} xi | F_{t_k}] on path p
    std::vector<double> integrand;
    std::vector<double> reconstruction;  ///< mean(xi) + sum integrand . dW
    double mean = 0.0;
    double l2_error = 0.0;
    std::size_t paths = 0;
    int steps = 0;
    int noise_dim = 1;
    double at(int k, std::size_t p, int i = 0) const {
        return integrand[(static_cast<std::size_t>(k) * paths + p) * static_cast<std::size_t>(noise_dim) + static_cast<std::size_t>(i)];
    }
};

/// Regresses per-step Malliavin estimates of xi on basis(X_{t_k}) and
/// rebuilds xi from the fitted integrand.
ClarkOconeResult clark_ocone_decompose(const PathFunctional& xi, const PathEnsemble& ens,
                                       const std::string& basis = kDefaultBasis, double amplitude = 1e-4,
                                       int threads = 0);

/// The bounded-Malliavin-derivative functional that is not Lipschitz in W.
struct Example33 {
    int depth = 0;  ///< h vanishes after 1 - 2^{-depth}

    explicit Example33(int depth);
    /// Depth ceil(log2(1 / dt)) for the given grid spacing.
    static Example33 for_spacing(double dt);

    double g(double t) const;
    double h(double t) const;
    /// int_0^1 h^2 of the truncated function.
    double h_square_integral() const;
    PathFunctional functional() const;
    /// sum_k h(t_k) dW_k per path; requires a 1D ensemble on [0, 1].
    std::vector<double> samples(const PathEnsemble& ens) const;
};

/// Binary ensemble container: magic "BSDEENS1", little-endian header
/// (u32 version, u32 state_dim, u32 noise_dim, u32 flags, u64 paths,
/// u64 seed, u64 node count, nodes as f64) followed by dW, X and the
/// optional L / tau / exit_point blocks.
void write_ensemble(std::ostream& out, const PathEnsemble& ens);
PathEnsemble read_ensemble(std::istream& in);
void save_ensemble(const std::string& path, const PathEnsemble& ens);
PathEnsemble load_ensemble(const std::string& path);

}  // namespace bsdelab
