#pragma once

// BSDE drivers f(t, x, y, z): construction, truncation to a Lipschitz
// driver, mollification and empirical probing of declared constants.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace bsdelab {

using DriverFn = std::function<double(double t, std::span<const double> x, double y, std::span<const double> z)>;

enum class DriverKind { user, linear, quadratic, power, constant, truncated, mollified };

std::string to_string(DriverKind kind);

/// Declared regularity of a driver. Every slot is a declaration, never
/// checked symbolically; lipschitz_probe checks them empirically.
struct DriverMetadata {
    std::optional<double> B;                ///< Lipschitz constant in y
    std::function<double(double)> rho;      ///< local Lipschitz modulus in z
    std::optional<double> lipschitz_z;      ///< global Lipschitz constant in z, if one exists
    std::optional<double> G;                ///< Lipschitz constant in x (max-norm)
    std::optional<double> H;                ///< mixed-difference constant
    std::optional<double> D;                ///< linear-growth constant
    std::optional<double> y_radius;         ///< set by truncate_yz
    std::optional<double> z_radius;         ///< set by truncate_z / truncate_yz
};

/// An immutable, evaluatable driver. z has `z_dim` components.
class DriverSpec {
public:
    DriverSpec(DriverFn eval, int z_dim, DriverMetadata metadata, DriverKind kind = DriverKind::user,
               std::string name = "user");

    double operator()(double t, std::span<const double> x, double y, std::span<const double> z) const {
        return eval_(t, x, y, z);
    }

    int z_dim() const { return z_dim_; }
    const DriverMetadata& metadata() const { return metadata_; }
    DriverKind kind() const { return kind_; }
    const std::string& name() const { return name_; }

    /// True when the driver is declared globally Lipschitz in (y, z).
    bool globally_lipschitz() const { return metadata_.B.has_value() && metadata_.lipschitz_z.has_value(); }

private:
    DriverFn eval_;
    int z_dim_;
    DriverMetadata metadata_;
    DriverKind kind_;
    std::string name_;
};

/// f(t, x, y, Q z/|z|) for |z| > Q, f unchanged inside the ball.
DriverSpec truncate_z(const DriverSpec& f, double Q);

/// f(t, x, clamp(y, -R, R), radial projection of z onto the Q-ball).
DriverSpec truncate_yz(const DriverSpec& f, double R, double Q);

/// Convolution of f in (y, z) with the bump m^{n+1} beta(m .), evaluated
/// by tensor Gauss–Legendre quadrature of order 8 per axis. Requires a
/// globally Lipschitz driver and z_dim + 1 <= 4.
DriverSpec mollify(const DriverSpec& f, int m);

/// Normalising constant lambda of the unit bump in `dim` dimensions, as
/// computed by the same tensor rule mollify uses.
double mollifier_normalizer(int dim);

namespace builtin {
struct Linear {
    double a = 0.0;              ///< coefficient of y
    std::vector<double> b;       ///< coefficients of z (empty means zero)
    double c = 0.0;
};
struct Quadratic {
    double mu = 0.0;
};
struct Power {
    double mu = 0.0;
    double p = 1.0;
};
struct Constant {
    double k = 0.0;
};
}  // namespace builtin

using BuiltinDriver = std::variant<builtin::Linear, builtin::Quadratic, builtin::Power, builtin::Constant>;

/// Closed-form drivers with exact metadata:
///   linear    a y + b.z + c   B = |a|, rho == |b|
///   quadratic mu |z|^2        B = 0, rho(r) = 2|mu| r
///   power     mu |z|^p        rho(r) = |mu| p r^{p-1} for p >= 1; for p < 1 the
///                             driver is not locally Lipschitz at z = 0 and
///                             rho is declared as +infinity
///   constant  k               all moduli zero
DriverSpec make_builtin(const BuiltinDriver& kind, int z_dim = 1);

/// A box in (t, x, y, z)-space.
struct ProbeRegion {
    std::pair<double, double> t{0.0, 1.0};
    std::vector<std::pair<double, double>> x;
    std::pair<double, double> y{-1.0, 1.0};
    std::vector<std::pair<double, double>> z;
};

struct ProbeReport {
    double B = 0.0;              ///< max |f(y) - f(y')| / |y - y'|
    double rho = 0.0;            ///< max |f(z) - f(z')| / |z - z'|
    double rho_declared = 0.0;   ///< declared rho at the largest |z| in the region
    double G = 0.0;              ///< max |f(x) - f(x')| / |x - x'|_inf
    double H = 0.0;              ///< max mixed-difference quotient
    std::size_t samples = 0;
    std::vector<std::string> violations;  ///< declared constants exceeded by an observed quotient
    bool ok() const { return violations.empty(); }
};

/// Random difference quotients over `region`; each quotient is compared
/// with the declared constant (rho is compared pairwise with rho(|z| v |z'|)).
ProbeReport lipschitz_probe(const DriverSpec& f, const ProbeRegion& region, std::size_t samples,
                            std::uint64_t seed);

}  // namespace bsdelab
