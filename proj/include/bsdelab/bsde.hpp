#pragma once

// Backward solvers: least-squares Monte Carlo with explicit or Picard
// steps, the truncation pipeline with a-posteriori bound certification,
// random terminal times and the continuation of the terminal value.

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsdelab/bounds.hpp"
#include "bsdelab/drivers.hpp"
#include "bsdelab/forward.hpp"

namespace bsdelab {

using TerminalMap = std::function<double(std::span<const double> x)>;
using StoppedMap = std::function<double(std::span<const double> x, double tau_time)>;

struct TerminalSpec {
    enum class Kind { state, stopped, path_functional };

    Kind kind = Kind::state;
    TerminalMap h;
    StoppedMap h_stopped;
    PathFunctional functional;
    double A = 0.0;            ///< declared Lipschitz constant (max-norm)
    std::optional<double> C;   ///< declared bound on |h|

    static TerminalSpec of_state(TerminalMap h, double A, std::optional<double> C = std::nullopt);
    static TerminalSpec of_stopped(StoppedMap h, double A, std::optional<double> C = std::nullopt);
    static TerminalSpec of_functional(PathFunctional xi, double A, std::optional<double> C = std::nullopt);

    /// Terminal samples. State maps read X at the final node, or the exit
    /// point when `stopped` is set and the ensemble carries exit times.
    /// Throws NumericalError on non-finite values and ConfigError when a
    /// sample exceeds the declared C.
    std::vector<double> sample(const PathEnsemble& ens, bool stopped = false) const;
};

/// slack(dt, paths) = kappa1 sqrt(dt) + kappa2 / sqrt(paths)
struct SlackPolicy {
    double kappa1 = 1.0;
    double kappa2 = 1.0;
    double value(double dt, std::size_t paths) const;
};

struct BoundCheck {
    int node = 0;
    double time = 0.0;
    int component = -1;  ///< Z component, or -1 for |Y|
    double observed = 0.0;
    double bound = 0.0;
    double excess = 0.0;  ///< (observed - bound) / bound, or observed - bound when bound == 0
    bool within = true;
};

struct BoundCertificate {
    bool pass = true;
    double slack = 0.0;
    double worst_excess = 0.0;
    int worst_node = -1;
    int worst_component = -1;
    /// max over Z checks of observed / bound; 1 means the Z-bound is attained
    double z_tightness = 0.0;
    bool z_tight = false;  ///< |z_tightness - 1| <= slack
    std::vector<BoundCheck> checks;
};

struct BsdeSolution {
    TimeGrid grid;
    std::size_t paths = 0;
    int noise_dim = 1;
    std::vector<double> Y;  ///< Y[k * paths + p], nodes 0..steps
    std::vector<double> Z;  ///< Z[(k * paths + p) * n + i], steps 0..steps-1 (Z on [t_k, t_{k+1}))
    double Y0 = 0.0;
    double Y0_stderr = 0.0;
    std::optional<double> Q;
    std::optional<double> R;
    std::string driver;
    std::optional<BoundCertificate> certificate;

    double y(int k, std::size_t p) const { return Y[static_cast<std::size_t>(k) * paths + p]; }
    double z(int k, std::size_t p, int i = 0) const {
        return Z[(static_cast<std::size_t>(k) * paths + p) * static_cast<std::size_t>(noise_dim) + static_cast<std::size_t>(i)];
    }
    double max_abs_z(int k, int i) const;
    double max_abs_y(int k) const;
    double mean_y(int k) const;
};

enum class BsdeScheme { explicit_step, picard };

struct LsmcOptions {
    BsdeScheme scheme = BsdeScheme::explicit_step;
    int picard_iterations = 3;
    std::string basis = kDefaultBasis;
    std::string z_basis;  ///< basis for the Z block of the joint regression; empty means `basis`
    int threads = 0;
    SlackPolicy slack;
};

/// Backward recursion: joint regression of Y_{k+1} on basis(X_k) times
/// (1, dW_k / sqrt(dt)) gives E[Y_{k+1} | F_k] and Z_k; then
/// Y_k = E[Y_{k+1} | F_k] + f(t_k, X_k, y, Z_k) dt with y the conditional
/// mean (explicit) or the Picard fixed point.
BsdeSolution solve_lsmc(const DriverSpec& f, const TerminalSpec& terminal, const PathEnsemble& ens,
                        const LsmcOptions& opt = {});

/// Q (and R when C, D are declared) from the constants, truncation, LSMC
/// and certification against the Z- and Y-bound profiles.
BsdeSolution solve_truncated(const DriverSpec& f, const TerminalSpec& terminal, const BoundConstants& consts,
                             const PathEnsemble& ens, const LsmcOptions& opt = {});

/// Random terminal time: regression only over paths still alive at each
/// node, Y frozen at h(X_tau) and Z = 0 from tau on. Truncation uses the
/// radius (C+1) e^{2DT} - 1, certification the profile (C+1) e^{D(T-t)} - 1.
BsdeSolution solve_random_terminal(const DriverSpec& f, const TerminalSpec& terminal, const BoundConstants& consts,
                                   const PathEnsemble& ens, const LsmcOptions& opt = {});

/// y' = -f(t, X_t, y, 0) from y(t_tau) = xi to T by RK4 on the grid (X
/// linearly interpolated between nodes). `states` holds steps + 1 nodes of
/// dimension m. Throws NumericalError on blow-up or when the declared
/// linear growth D is violated.
double hat_xi(const DriverSpec& f, const TimeGrid& grid, std::span<const double> states, int m, int tau, double xi);
/// Same for path p of an ensemble with exit times, xi = h(exit point).
double hat_xi(const DriverSpec& f, const PathEnsemble& ens, std::size_t p, const TerminalMap& h);

/// Per-node maxima against sampled profiles. Throws std::invalid_argument
/// when a profile is not sampled on the solution grid.
BoundCertificate verify_bounds(const BsdeSolution& sol, const std::vector<SampledProfile>& profiles,
                               const SlackPolicy& slack = {});

/// CSV: time, component, max_abs_Z, bound, Y_mean, Y_max_abs, violation_flag
void write_bsde_csv(std::ostream& out, const BsdeSolution& sol);

}  // namespace bsdelab
