#pragma once

// A-priori bound arithmetic for BSDEs with terminal conditions of bounded
// Malliavin derivative: Z-bound profiles, truncation radii, Y-bound
// profiles, forward Malliavin bounds and PDE gradient bounds.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bsdelab {

/// Absolute tolerance used for every profile integral.
inline constexpr double kBoundQuadratureTolerance = 1e-10;

/// A nonnegative function on [0, T] with finite square integral, used for
/// the bounds q_i on the Malliavin derivative of the driver.
class IntegrableFunction {
public:
    enum class Kind { constant, exponential, table, callable };

    IntegrableFunction() = default;

    static IntegrableFunction constant(double value);
    /// scale * exp(rate * t)
    static IntegrableFunction exponential(double scale, double rate);
    /// Piecewise-linear interpolation of (times, values); constant outside.
    static IntegrableFunction table(std::vector<double> times, std::vector<double> values);
    /// Arbitrary function; its square integral is computed by quadrature on validation.
    static IntegrableFunction callable(std::function<double(double)> fn);

    double operator()(double t) const;
    Kind kind() const { return kind_; }

    /// \int_a^b q(s) e^{-B (T - s)} ds, closed form for constant and exponential kinds.
    double discounted_integral(double a, double b, double B, double T) const;
    /// \int_a^b q(s)^2 ds
    double square_integral(double a, double b) const;

private:
    Kind kind_ = Kind::constant;
    double scale_ = 0.0;
    double rate_ = 0.0;
    std::vector<double> times_;
    std::vector<double> values_;
    std::function<double(double)> fn_;
};

/// Metadata attached to a domain that has no computational role.
struct DomainMetadata {
    std::optional<double> exterior_sphere_radius;
    std::optional<double> cone_delta;
    std::optional<double> cone_epsilon;
};

/// The constant alphabet of the a-priori estimates.
struct BoundConstants {
    std::vector<double> A;                  ///< per-component Malliavin bound of the terminal condition
    double B = 0.0;                         ///< Lipschitz constant of the driver in y
    std::function<double(double)> rho;      ///< nondecreasing local modulus in z
    std::optional<double> C;                ///< bound on |xi|
    std::optional<double> D;                ///< linear-growth constant of the driver
    std::optional<double> E;                ///< entrywise bound on sigma
    std::optional<double> F;                ///< drift Lipschitz constant
    std::optional<double> G;                ///< spatial Lipschitz constant of g
    std::optional<double> H;                ///< mixed-difference constant of g
    std::optional<double> M;                ///< Malliavin bound of the reflected forward process
    std::optional<double> ellipticity;      ///< epsilon with sigma sigma^T >= epsilon Id
    std::vector<IntegrableFunction> q;      ///< empty means q_i == 0
    double T = 1.0;
    int n = 1;
    int m = 1;
    DomainMetadata domain;

    /// Throws std::invalid_argument on negative constants, T <= 0, bad sizes,
    /// a q_i with non-finite square integral or a decreasing rho on [0, rho_range].
    void validate(double rho_range = 100.0) const;

    /// Scalar Lipschitz constant of h used by the Markovian regimes (max_i A_i).
    double lipschitz_A() const;
    /// q_i, or the zero function when none is declared.
    const IntegrableFunction& q_of(int i) const;
};

enum class ProfileKind { z_bound, y_bound, gradient_bound };

/// A profile sampled on a grid, as consumed by the certificate checks.
struct SampledProfile {
    ProfileKind kind = ProfileKind::z_bound;
    std::optional<int> component;
    std::vector<double> times;
    std::vector<double> values;
};

/// A time-dependent bound, callable and sampleable.
class BoundProfile {
public:
    BoundProfile(ProfileKind kind, std::function<double(double)> fn,
                 std::optional<int> component = std::nullopt);

    double operator()(double t) const { return fn_(t); }
    ProfileKind kind() const { return kind_; }
    std::optional<int> component() const { return component_; }

    SampledProfile sample(std::span<const double> times) const;
    /// t -> profile(T - t); maps backward-time bounds to forward-time PDEs.
    BoundProfile reversed(double T) const;

private:
    ProfileKind kind_;
    std::function<double(double)> fn_;
    std::optional<int> component_;
};

/// (1 - e^{-B tau}) / B with the removable singularity at B = 0 resolved.
double discount_factor(double B, double tau);

/// a_i(t) = (A_i + \int_t^T q_i(s) e^{-B(T-s)} ds) e^{B(T-t)}
BoundProfile z_bound_profile(const BoundConstants& c, int i);

/// Q = |(A_i + \int_0^T q_i e^{-B(T-t)} dt)_i| e^{BT}
double q_radius(const BoundConstants& c);

struct YBound {
    BoundProfile profile;  ///< t -> (C+1) e^{D(T-t)} - 1
    double radius;         ///< R = (C+1) e^{DT} - 1, or (C+1) e^{2DT} - 1 for random terminal times
};

YBound y_bound_profile(const BoundConstants& c, bool random_terminal = false);

enum class MarkovRegime { cauchy, dirichlet, reflected };

/// Truncation radius N of the Markovian regimes.
double markov_radius(const BoundConstants& c, MarkovRegime regime);

/// Re-expresses Markovian constants in terms of the general (A_i, q_i)
/// alphabet seen from start time t0, so that q_radius reproduces
/// markov_radius and z_bound_profile reproduces the Markovian Z-bounds.
BoundConstants markovian_constants(const BoundConstants& c, MarkovRegime regime, double t0 = 0.0);

/// Bound on |D_r X^{t,x}_s|. Defaults to E e^{F(s-t)}; with
/// `horizon_form` returns the supremum over s, E e^{F(T-t)}.
double forward_malliavin_bound(const BoundConstants& c, double t, double s,
                               bool horizon_form = false);

enum class GradientRegime { cauchy, heat, dirichlet, neumann_1d };

/// Gradient bound of the associated PDE at time t. heat and neumann_1d use
/// forward time, cauchy and dirichlet backward (terminal-value) time.
double pde_gradient_bound(const BoundConstants& c, GradientRegime regime, double t);
BoundProfile gradient_bound_profile(const BoundConstants& c, GradientRegime regime);

std::string to_string(MarkovRegime regime);
std::string to_string(GradientRegime regime);
MarkovRegime parse_markov_regime(const std::string& name);
GradientRegime parse_gradient_regime(const std::string& name);

}  // namespace bsdelab
