#include "bsdelab/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bsdelab/quadrature.hpp"

namespace bsdelab {

// ---------------------------------------------------------------------------
// IntegrableFunction

IntegrableFunction IntegrableFunction::constant(double value) {
    IntegrableFunction f;
    f.kind_ = Kind::constant;
    f.scale_ = value;
    return f;
}

IntegrableFunction IntegrableFunction::exponential(double scale, double rate) {
    IntegrableFunction f;
    f.kind_ = Kind::exponential;
    f.scale_ = scale;
    f.rate_ = rate;
    return f;
}

IntegrableFunction IntegrableFunction::table(std::vector<double> times, std::vector<double> values) {
    if (times.empty() || times.size() != values.size()) {
        throw std::invalid_argument("IntegrableFunction::table: times and values must be non-empty and equal length");
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (!(times[k] > times[k - 1])) {
            throw std::invalid_argument("IntegrableFunction::table: times must be strictly increasing");
        }
    }
    IntegrableFunction f;
    f.kind_ = Kind::table;
    f.times_ = std::move(times);
    f.values_ = std::move(values);
    return f;
}

IntegrableFunction IntegrableFunction::callable(std::function<double(double)> fn) {
    if (!fn) throw std::invalid_argument("IntegrableFunction::callable: empty function");
    IntegrableFunction f;
    f.kind_ = Kind::callable;
    f.fn_ = std::move(fn);
    return f;
}

double IntegrableFunction::operator()(double t) const {
    switch (kind_) {
        case Kind::constant:
            return scale_;
        case Kind::exponential:
            return scale_ * std::exp(rate_ * t);
        case Kind::table: {
            if (t <= times_.front()) return values_.front();
            if (t >= times_.back()) return values_.back();
            const auto it = std::upper_bound(times_.begin(), times_.end(), t);
            const std::size_t k = static_cast<std::size_t>(it - times_.begin());
            const double w = (t - times_[k - 1]) / (times_[k] - times_[k - 1]);
            return (1.0 - w) * values_[k - 1] + w * values_[k];
        }
        case Kind::callable:
            return fn_(t);
    }
    return 0.0;
}

namespace {

// Integrates fn over [a, b] panel by panel between table breakpoints so the
// adaptive rule never straddles a kink.
double integrate_with_breaks(const std::function<double(double)>& fn, double a, double b,
                             const std::vector<double>& breaks) {
    double total = 0.0;
    double lo = a;
    for (double br : breaks) {
        if (br <= lo || br >= b) continue;
        total += adaptive_simpson(fn, lo, br, kBoundQuadratureTolerance);
        lo = br;
    }
    total += adaptive_simpson(fn, lo, b, kBoundQuadratureTolerance);
    return total;
}

}  // namespace

double IntegrableFunction::discounted_integral(double a, double b, double B, double T) const {
    if (b <= a) return 0.0;
    switch (kind_) {
        case Kind::constant:
            return scale_ * std::exp(-B * (T - b)) * discount_factor(B, b - a);
        case Kind::exponential: {
            const double k = rate_ + B;
            return scale_ * std::exp(-B * T + k * b) * discount_factor(k, b - a);
        }
        case Kind::table:
        case Kind::callable: {
            const auto integrand = [&](double s) { return (*this)(s) * std::exp(-B * (T - s)); };
            return integrate_with_breaks(integrand, a, b, times_);
        }
    }
    return 0.0;
}

double IntegrableFunction::square_integral(double a, double b) const {
    if (b <= a) return 0.0;
    switch (kind_) {
        case Kind::constant:
            return scale_ * scale_ * (b - a);
        case Kind::exponential: {
            const double k = 2.0 * rate_;
            return scale_ * scale_ * std::exp(k * b) * discount_factor(k, b - a);
        }
        case Kind::table:
        case Kind::callable: {
            const auto integrand = [&](double s) {
                const double v = (*this)(s);
                return v * v;
            };
            return integrate_with_breaks(integrand, a, b, times_);
        }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// BoundConstants

namespace {

void require_nonnegative(const std::optional<double>& v, const char* name) {
    if (v && !(*v >= 0.0 && std::isfinite(*v))) {
        throw std::invalid_argument(std::string("BoundConstants: ") + name + " must be finite and nonnegative");
    }
}

const IntegrableFunction& zero_function() {
    static const IntegrableFunction zero = IntegrableFunction::constant(0.0);
    return zero;
}

}  // namespace

void BoundConstants::validate(double rho_range) const {
    if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("BoundConstants: T must be positive");
    if (n < 1 || m < 1) throw std::invalid_argument("BoundConstants: n and m must be >= 1");
    if (static_cast<int>(A.size()) != n) {
        throw std::invalid_argument("BoundConstants: A must have n components");
    }
    for (double a : A) {
        if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("BoundConstants: A_i must be finite and nonnegative");
    }
    if (!(B >= 0.0) || !std::isfinite(B)) throw std::invalid_argument("BoundConstants: B must be finite and nonnegative");
    require_nonnegative(C, "C");
    require_nonnegative(D, "D");
    require_nonnegative(E, "E");
    require_nonnegative(F, "F");
    require_nonnegative(G, "G");
    require_nonnegative(H, "H");
    require_nonnegative(M, "M");
    if (ellipticity) require_nonnegative(ellipticity, "ellipticity");
    if (!q.empty() && static_cast<int>(q.size()) != n) {
        throw std::invalid_argument("BoundConstants: q must be empty or have n components");
    }
    for (const auto& qi : q) {
        double l2 = 0.0;
        try {
            l2 = qi.square_integral(0.0, T);
        } catch (const std::exception&) {
            l2 = std::numeric_limits<double>::infinity();
        }
        if (!std::isfinite(l2)) throw std::invalid_argument("BoundConstants: q_i is not square integrable on [0, T]");
    }
    if (rho) {
        constexpr int kSamples = 64;
        double prev = rho(0.0);
        for (int k = 1; k <= kSamples; ++k) {
            const double r = rho_range * k / kSamples;
            const double v = rho(r);
            if (v < prev) throw std::invalid_argument("BoundConstants: rho must be nondecreasing");
            prev = v;
        }
    }
}

double BoundConstants::lipschitz_A() const {
    if (A.empty()) throw std::invalid_argument("BoundConstants: A is empty");
    return *std::max_element(A.begin(), A.end());
}

const IntegrableFunction& BoundConstants::q_of(int i) const {
    if (q.empty()) return zero_function();
    return q.at(static_cast<std::size_t>(i));
}

// ---------------------------------------------------------------------------
// BoundProfile

BoundProfile::BoundProfile(ProfileKind kind, std::function<double(double)> fn,
                           std::optional<int> component)
    : kind_(kind), fn_(std::move(fn)), component_(component) {}

SampledProfile BoundProfile::sample(std::span<const double> times) const {
    SampledProfile out;
    out.kind = kind_;
    out.component = component_;
    out.times.assign(times.begin(), times.end());
    out.values.reserve(times.size());
    for (double t : times) out.values.push_back(fn_(t));
    return out;
}

BoundProfile BoundProfile::reversed(double T) const {
    auto fn = fn_;
    return BoundProfile(kind_, [fn, T](double t) { return fn(T - t); }, component_);
}

// ---------------------------------------------------------------------------
// Formulas

double discount_factor(double B, double tau) {
    const double x = B * tau;
    if (B == 0.0) return tau;
    if (std::abs(x) < 1e-6) return tau * (1.0 - 0.5 * x + x * x / 6.0);
    return -std::expm1(-x) / B;
}

BoundProfile z_bound_profile(const BoundConstants& c, int i) {
    c.validate();
    if (i < 0 || i >= c.n) throw std::invalid_argument("z_bound_profile: component index out of range");
    const double Ai = c.A[static_cast<std::size_t>(i)];
    const IntegrableFunction qi = c.q_of(i);
    const double B = c.B;
    const double T = c.T;
    auto fn = [Ai, qi, B, T](double t) {
        return (Ai + qi.discounted_integral(t, T, B, T)) * std::exp(B * (T - t));
    };
    return BoundProfile(ProfileKind::z_bound, fn, i);
}

double q_radius(const BoundConstants& c) {
    c.validate();
    double sum = 0.0;
    for (int i = 0; i < c.n; ++i) {
        const double a = c.A[static_cast<std::size_t>(i)] + c.q_of(i).discounted_integral(0.0, c.T, c.B, c.T);
        sum += a * a;
    }
    return std::sqrt(sum) * std::exp(c.B * c.T);
}

YBound y_bound_profile(const BoundConstants& c, bool random_terminal) {
    c.validate();
    if (!c.C || !c.D) throw std::invalid_argument("y_bound_profile: C and D must be declared");
    const double C = *c.C;
    const double D = *c.D;
    const double T = c.T;
    BoundProfile profile(ProfileKind::y_bound, [C, D, T](double t) { return (C + 1.0) * std::exp(D * (T - t)) - 1.0; });
    const double horizon = random_terminal ? 2.0 * T : T;
    return YBound{std::move(profile), (C + 1.0) * std::exp(D * horizon) - 1.0};
}

namespace {

double require(const std::optional<double>& v, const char* name, const char* where) {
    if (!v) throw std::invalid_argument(std::string(where) + ": constant " + name + " must be declared");
    return *v;
}

}  // namespace

double markov_radius(const BoundConstants& c, MarkovRegime regime) {
    c.validate();
    const double G = c.G.value_or(0.0);
    const double phi = discount_factor(c.B, c.T);
    const double sqrt_n = std::sqrt(static_cast<double>(c.n));
    switch (regime) {
        case MarkovRegime::cauchy: {
            const double E = require(c.E, "E", "markov_radius");
            const double F = require(c.F, "F", "markov_radius");
            return sqrt_n * (c.lipschitz_A() + phi * G) * E * std::exp((c.B + F) * c.T);
        }
        case MarkovRegime::dirichlet: {
            const double E = require(c.E, "E", "markov_radius");
            const double F = require(c.F, "F", "markov_radius");
            const double shift = G * E * std::exp(F * c.T) * phi;
            double sum = 0.0;
            for (double a : c.A) sum += (a + shift) * (a + shift);
            return std::sqrt(sum) * std::exp(c.B * c.T);
        }
        case MarkovRegime::reflected: {
            const double M = require(c.M, "M", "markov_radius");
            return sqrt_n * (c.lipschitz_A() + phi * G) * M * std::exp(c.B * c.T);
        }
    }
    throw std::invalid_argument("markov_radius: unknown regime");
}

BoundConstants markovian_constants(const BoundConstants& c, MarkovRegime regime, double t0) {
    c.validate();
    BoundConstants out = c;
    const double G = c.G.value_or(0.0);
    double scale = 1.0;
    switch (regime) {
        case MarkovRegime::cauchy:
            scale = require(c.E, "E", "markovian_constants") *
                    std::exp(require(c.F, "F", "markovian_constants") * (c.T - t0));
            out.A.assign(static_cast<std::size_t>(c.n), c.lipschitz_A() * scale);
            break;
        case MarkovRegime::dirichlet:
            scale = require(c.E, "E", "markovian_constants") *
                    std::exp(require(c.F, "F", "markovian_constants") * (c.T - t0));
            break;
        case MarkovRegime::reflected:
            scale = require(c.M, "M", "markovian_constants");
            out.A.assign(static_cast<std::size_t>(c.n), c.lipschitz_A() * scale);
            break;
    }
    out.q.assign(static_cast<std::size_t>(c.n), IntegrableFunction::constant(G * scale));
    return out;
}

double forward_malliavin_bound(const BoundConstants& c, double t, double s, bool horizon_form) {
    if (t > s) throw std::invalid_argument("forward_malliavin_bound: requires t <= s");
    const double E = require(c.E, "E", "forward_malliavin_bound");
    const double F = require(c.F, "F", "forward_malliavin_bound");
    if (E < 0.0 || F < 0.0) throw std::invalid_argument("forward_malliavin_bound: negative constants");
    return E * std::exp(F * ((horizon_form ? c.T : s) - t));
}

double pde_gradient_bound(const BoundConstants& c, GradientRegime regime, double t) {
    c.validate();
    const double sqrt_n = std::sqrt(static_cast<double>(c.n));
    const double G = c.G.value_or(0.0);
    switch (regime) {
        case GradientRegime::cauchy: {
            const double E = require(c.E, "E", "pde_gradient_bound");
            const double F = require(c.F, "F", "pde_gradient_bound");
            const double tau = c.T - t;
            return sqrt_n * (c.lipschitz_A() + discount_factor(c.B, tau) * G) * E * std::exp((c.B + F) * tau);
        }
        case GradientRegime::heat:
            return sqrt_n * c.lipschitz_A() * std::exp(c.B * t);
        case GradientRegime::dirichlet: {
            if (!c.ellipticity || !(*c.ellipticity > 0.0)) {
                throw std::invalid_argument("pde_gradient_bound: dirichlet regime needs ellipticity > 0");
            }
            const double E = require(c.E, "E", "pde_gradient_bound");
            const double F = require(c.F, "F", "pde_gradient_bound");
            const double tau = c.T - t;
            const double shift = G * E * std::exp(F * tau) * discount_factor(c.B, tau);
            double sum = 0.0;
            for (double a : c.A) sum += (a + shift) * (a + shift);
            return std::sqrt(sum) * std::exp(c.B * tau) / std::sqrt(*c.ellipticity);
        }
        case GradientRegime::neumann_1d:
            return 3.0 * c.lipschitz_A() * std::exp(c.B * t);
    }
    throw std::invalid_argument("pde_gradient_bound: unknown regime");
}

BoundProfile gradient_bound_profile(const BoundConstants& c, GradientRegime regime) {
    pde_gradient_bound(c, regime, c.T);  // surfaces missing constants eagerly
    BoundConstants copy = c;
    return BoundProfile(ProfileKind::gradient_bound,
                        [copy, regime](double t) { return pde_gradient_bound(copy, regime, t); });
}

std::string to_string(MarkovRegime regime) {
    switch (regime) {
        case MarkovRegime::cauchy: return "cauchy";
        case MarkovRegime::dirichlet: return "dirichlet";
        case MarkovRegime::reflected: return "reflected";
    }
    return "unknown";
}

std::string to_string(GradientRegime regime) {
    switch (regime) {
        case GradientRegime::cauchy: return "cauchy";
        case GradientRegime::heat: return "heat";
        case GradientRegime::dirichlet: return "dirichlet";
        case GradientRegime::neumann_1d: return "neumann-1d";
    }
    return "unknown";
}

MarkovRegime parse_markov_regime(const std::string& name) {
    if (name == "cauchy") return MarkovRegime::cauchy;
    if (name == "dirichlet") return MarkovRegime::dirichlet;
    if (name == "reflected" || name == "neumann") return MarkovRegime::reflected;
    throw std::invalid_argument("unknown Markov regime: " + name);
}

GradientRegime parse_gradient_regime(const std::string& name) {
    if (name == "cauchy") return GradientRegime::cauchy;
    if (name == "heat") return GradientRegime::heat;
    if (name == "dirichlet") return GradientRegime::dirichlet;
    if (name == "neumann-1d" || name == "neumann") return GradientRegime::neumann_1d;
    throw std::invalid_argument("unknown gradient regime: " + name);
}

}  // namespace bsdelab
