#include "bsdelab/drivers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "bsdelab/quadrature.hpp"
#include "bsdelab/rng.hpp"

namespace bsdelab {

std::string to_string(DriverKind kind) {
    switch (kind) {
        case DriverKind::user: return "user";
        case DriverKind::linear: return "linear";
        case DriverKind::quadratic: return "quadratic";
        case DriverKind::power: return "power";
        case DriverKind::constant: return "constant";
        case DriverKind::truncated: return "truncated";
        case DriverKind::mollified: return "mollified";
    }
    return "unknown";
}

DriverSpec::DriverSpec(DriverFn eval, int z_dim, DriverMetadata metadata, DriverKind kind, std::string name)
    : eval_(std::move(eval)), z_dim_(z_dim), metadata_(std::move(metadata)), kind_(kind), name_(std::move(name)) {
    if (!eval_) throw std::invalid_argument("DriverSpec: empty evaluation function");
    if (z_dim_ < 1) throw std::invalid_argument("DriverSpec: z dimension must be >= 1");
}

namespace {

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
}

// Evaluates f with z replaced by its projection onto the closed Q-ball.
// At |z| == Q both branches coincide, so the comparison needs no tie-break.
template <std::size_t N>
double eval_projected(const DriverFn& f, double t, std::span<const double> x, double y,
                      std::span<const double> z, double Q) {
    const double r = norm(z);
    if (r <= Q) return f(t, x, y, z);
    const double s = Q / r;
    if (z.size() <= N) {
        std::array<double, N> buf{};
        for (std::size_t i = 0; i < z.size(); ++i) buf[i] = z[i] * s;
        return f(t, x, y, std::span<const double>(buf.data(), z.size()));
    }
    std::vector<double> buf(z.begin(), z.end());
    for (double& e : buf) e *= s;
    return f(t, x, y, buf);
}

}  // namespace

DriverSpec truncate_z(const DriverSpec& f, double Q) {
    if (!(Q >= 0.0) || !std::isfinite(Q)) throw std::invalid_argument("truncate_z: Q must be nonnegative");
    DriverMetadata meta = f.metadata();
    auto inner_rho = meta.rho;
    if (inner_rho) {
        meta.lipschitz_z = inner_rho(Q);
        meta.rho = [inner_rho, Q](double r) { return inner_rho(std::min(r, Q)); };
    }
    meta.z_radius = Q;
    DriverFn inner = [f](double t, std::span<const double> x, double y, std::span<const double> z) {
        return f(t, x, y, z);
    };
    DriverFn eval = [inner, Q](double t, std::span<const double> x, double y, std::span<const double> z) {
        return eval_projected<8>(inner, t, x, y, z, Q);
    };
    return DriverSpec(std::move(eval), f.z_dim(), std::move(meta), DriverKind::truncated, "truncate_z(" + f.name() + ")");
}

DriverSpec truncate_yz(const DriverSpec& f, double R, double Q) {
    if (!(R >= 0.0) || !std::isfinite(R)) throw std::invalid_argument("truncate_yz: R must be nonnegative");
    if (!(Q >= 0.0) || !std::isfinite(Q)) throw std::invalid_argument("truncate_yz: Q must be nonnegative");
    DriverMetadata meta = f.metadata();
    auto inner_rho = meta.rho;
    if (inner_rho) {
        meta.lipschitz_z = inner_rho(Q);
        meta.rho = [inner_rho, Q](double r) { return inner_rho(std::min(r, Q)); };
    }
    meta.z_radius = Q;
    meta.y_radius = R;
    DriverFn inner = [f](double t, std::span<const double> x, double y, std::span<const double> z) {
        return f(t, x, y, z);
    };
    DriverFn eval = [inner, R, Q](double t, std::span<const double> x, double y, std::span<const double> z) {
        return eval_projected<8>(inner, t, x, std::clamp(y, -R, R), z, Q);
    };
    return DriverSpec(std::move(eval), f.z_dim(), std::move(meta), DriverKind::truncated, "truncate_yz(" + f.name() + ")");
}

namespace {

constexpr int kMollifierOrder = 8;

double unit_bump(double r2) { return r2 < 1.0 ? std::exp(-1.0 / (1.0 - r2)) : 0.0; }

// Tensor Gauss–Legendre nodes on [-1, 1]^dim restricted to the unit ball.
struct BumpRule {
    int dim = 0;
    std::vector<double> offsets;  // flattened, dim per node
    std::vector<double> weights;  // quadrature weight times bump, normalised to sum 1
    double lambda = 0.0;
};

BumpRule make_bump_rule(int dim) {
    const GaussLegendreRule gl = gauss_legendre(kMollifierOrder);
    BumpRule rule;
    rule.dim = dim;
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    double total = 0.0;
    while (true) {
        double r2 = 0.0;
        double w = 1.0;
        for (int d = 0; d < dim; ++d) {
            const double u = gl.nodes[static_cast<std::size_t>(idx[d])];
            r2 += u * u;
            w *= gl.weights[static_cast<std::size_t>(idx[d])];
        }
        const double bw = w * unit_bump(r2);
        if (bw > 0.0) {
            for (int d = 0; d < dim; ++d) rule.offsets.push_back(gl.nodes[static_cast<std::size_t>(idx[d])]);
            rule.weights.push_back(bw);
            total += bw;
        }
        int d = 0;
        while (d < dim && ++idx[d] == kMollifierOrder) idx[d++] = 0;
        if (d == dim) break;
    }
    for (double& w : rule.weights) w /= total;
    rule.lambda = 1.0 / total;
    return rule;
}

}  // namespace

double mollifier_normalizer(int dim) {
    if (dim < 1 || dim > 4) throw std::invalid_argument("mollifier_normalizer: dimension must be in [1, 4]");
    return make_bump_rule(dim).lambda;
}

DriverSpec mollify(const DriverSpec& f, int m) {
    if (m < 1) throw std::invalid_argument("mollify: m must be >= 1");
    if (!f.globally_lipschitz()) {
        throw std::invalid_argument("mollify: driver is not declared globally Lipschitz in (y, z); truncate it first");
    }
    const int dim = f.z_dim() + 1;
    if (dim > 4) throw std::invalid_argument("mollify: z dimension + 1 must be <= 4");
    auto rule = std::make_shared<const BumpRule>(make_bump_rule(dim));
    const double h = 1.0 / m;
    DriverFn inner = [f](double t, std::span<const double> x, double y, std::span<const double> z) {
        return f(t, x, y, z);
    };
    DriverFn eval = [inner, rule, h](double t, std::span<const double> x, double y, std::span<const double> z) {
        const int d = rule->dim;
        std::array<double, 3> zs{};
        double acc = 0.0;
        for (std::size_t k = 0; k < rule->weights.size(); ++k) {
            const double* u = rule->offsets.data() + k * static_cast<std::size_t>(d);
            for (int i = 1; i < d; ++i) zs[static_cast<std::size_t>(i - 1)] = z[static_cast<std::size_t>(i - 1)] - h * u[i];
            acc += rule->weights[k] * inner(t, x, y - h * u[0], std::span<const double>(zs.data(), z.size()));
        }
        return acc;
    };
    DriverMetadata meta = f.metadata();
    return DriverSpec(std::move(eval), f.z_dim(), std::move(meta), DriverKind::mollified,
                      "mollify(" + f.name() + ", " + std::to_string(m) + ")");
}

DriverSpec make_builtin(const BuiltinDriver& kind, int z_dim) {
    if (z_dim < 1) throw std::invalid_argument("make_builtin: z dimension must be >= 1");
    return std::visit(
        [z_dim](const auto& k) -> DriverSpec {
            using K = std::decay_t<decltype(k)>;
            DriverMetadata meta;
            meta.G = 0.0;
            meta.H = 0.0;
            if constexpr (std::is_same_v<K, builtin::Linear>) {
                std::vector<double> b = k.b.empty() ? std::vector<double>(static_cast<std::size_t>(z_dim), 0.0) : k.b;
                if (static_cast<int>(b.size()) != z_dim) throw std::invalid_argument("make_builtin: linear b has wrong dimension");
                if (!std::isfinite(k.a) || !std::isfinite(k.c)) throw std::invalid_argument("make_builtin: non-finite linear coefficients");
                const double bn = norm(b);
                meta.B = std::abs(k.a);
                meta.rho = [bn](double) { return bn; };
                meta.lipschitz_z = bn;
                meta.D = std::max(std::abs(k.a), std::abs(k.c));
                const double a = k.a;
                const double c = k.c;
                return DriverSpec(
                    [a, b, c](double, std::span<const double>, double y, std::span<const double> z) {
                        double s = a * y + c;
                        for (std::size_t i = 0; i < b.size(); ++i) s += b[i] * z[i];
                        return s;
                    },
                    z_dim, meta, DriverKind::linear, "linear");
            } else if constexpr (std::is_same_v<K, builtin::Quadratic>) {
                if (!std::isfinite(k.mu)) throw std::invalid_argument("make_builtin: non-finite mu");
                const double mu = k.mu;
                meta.B = 0.0;
                meta.rho = [mu](double r) { return 2.0 * std::abs(mu) * r; };
                meta.D = 0.0;
                return DriverSpec(
                    [mu](double, std::span<const double>, double, std::span<const double> z) {
                        double s = 0.0;
                        for (double e : z) s += e * e;
                        return mu * s;
                    },
                    z_dim, meta, DriverKind::quadratic, "quadratic");
            } else if constexpr (std::is_same_v<K, builtin::Power>) {
                if (!(k.p > 0.0) || !std::isfinite(k.p) || !std::isfinite(k.mu)) {
                    throw std::invalid_argument("make_builtin: power driver needs p > 0 and finite mu");
                }
                const double mu = k.mu;
                const double p = k.p;
                meta.B = 0.0;
                if (p >= 1.0) {
                    meta.rho = [mu, p](double r) { return std::abs(mu) * p * std::pow(r, p - 1.0); };
                    meta.D = 0.0;
                    if (p == 1.0) meta.lipschitz_z = std::abs(mu);
                } else {
                    meta.rho = [](double) { return std::numeric_limits<double>::infinity(); };
                    meta.D = std::abs(mu);
                }
                return DriverSpec(
                    [mu, p](double, std::span<const double>, double, std::span<const double> z) {
                        return mu * std::pow(norm(z), p);
                    },
                    z_dim, meta, DriverKind::power, "power");
            } else {
                if (!std::isfinite(k.k)) throw std::invalid_argument("make_builtin: non-finite constant");
                const double value = k.k;
                meta.B = 0.0;
                meta.rho = [](double) { return 0.0; };
                meta.lipschitz_z = 0.0;
                meta.D = std::abs(value);
                return DriverSpec([value](double, std::span<const double>, double, std::span<const double>) { return value; },
                                  z_dim, meta, DriverKind::constant, "constant");
            }
        },
        kind);
}

// ---------------------------------------------------------------------------
// lipschitz_probe

namespace {

void check_interval(const std::pair<double, double>& iv, const char* name) {
    if (!(iv.first <= iv.second) || !std::isfinite(iv.first) || !std::isfinite(iv.second)) {
        throw std::invalid_argument(std::string("lipschitz_probe: empty or unbounded region in ") + name);
    }
}

double draw(RandomStream& rng, const std::pair<double, double>& iv) {
    return iv.first + (iv.second - iv.first) * rng.uniform();
}

bool exceeds(double observed, double declared) { return observed > declared * (1.0 + 1e-9) + 1e-12; }

}  // namespace

ProbeReport lipschitz_probe(const DriverSpec& f, const ProbeRegion& region, std::size_t samples, std::uint64_t seed) {
    if (samples < 2) throw std::invalid_argument("lipschitz_probe: samples must be >= 2");
    check_interval(region.t, "t");
    check_interval(region.y, "y");
    for (const auto& iv : region.x) check_interval(iv, "x");
    for (const auto& iv : region.z) check_interval(iv, "z");
    if (static_cast<int>(region.z.size()) != f.z_dim()) {
        throw std::invalid_argument("lipschitz_probe: z box dimension does not match the driver");
    }

    const DriverMetadata& meta = f.metadata();
    ProbeReport report;
    report.samples = samples;
    double z_corner = 0.0;
    for (const auto& iv : region.z) {
        const double e = std::max(std::abs(iv.first), std::abs(iv.second));
        z_corner += e * e;
    }
    z_corner = std::sqrt(z_corner);
    report.rho_declared = meta.rho ? meta.rho(z_corner) : std::numeric_limits<double>::quiet_NaN();

    bool flagged_B = false, flagged_rho = false, flagged_G = false, flagged_H = false;
    const std::size_t nx = region.x.size();
    const std::size_t nz = region.z.size();
    std::vector<double> x(nx), x2(nx), z(nz), z2(nz);
    RandomStream rng(seed, 0, RngChannel::probe);

    for (std::size_t s = 0; s < samples; ++s) {
        const double t = draw(rng, region.t);
        const double y = draw(rng, region.y);
        const double y2 = draw(rng, region.y);
        for (std::size_t i = 0; i < nx; ++i) {
            x[i] = draw(rng, region.x[i]);
            x2[i] = draw(rng, region.x[i]);
        }
        for (std::size_t i = 0; i < nz; ++i) {
            z[i] = draw(rng, region.z[i]);
            z2[i] = draw(rng, region.z[i]);
        }
        const double f0 = f(t, x, y, z);

        const double dy = std::abs(y - y2);
        if (dy > 0.0) {
            const double qB = std::abs(f0 - f(t, x, y2, z)) / dy;
            report.B = std::max(report.B, qB);
            if (meta.B && !flagged_B && exceeds(qB, *meta.B)) {
                report.violations.push_back("B: observed quotient " + std::to_string(qB) + " exceeds declared " +
                                            std::to_string(*meta.B));
                flagged_B = true;
            }
        }

        double dz = 0.0;
        for (std::size_t i = 0; i < nz; ++i) dz += (z[i] - z2[i]) * (z[i] - z2[i]);
        dz = std::sqrt(dz);
        if (dz > 0.0) {
            const double qz = std::abs(f0 - f(t, x, y, z2)) / dz;
            report.rho = std::max(report.rho, qz);
            if (meta.rho && !flagged_rho) {
                const double declared = meta.rho(std::max(norm(z), norm(z2)));
                if (exceeds(qz, declared)) {
                    report.violations.push_back("rho: observed quotient " + std::to_string(qz) + " exceeds declared " +
                                                std::to_string(declared));
                    flagged_rho = true;
                }
            }
        }

        if (nx > 0) {
            double dx = 0.0;
            for (std::size_t i = 0; i < nx; ++i) dx = std::max(dx, std::abs(x[i] - x2[i]));
            if (dx > 0.0) {
                const double fx2 = f(t, x2, y, z);
                const double qG = std::abs(f0 - fx2) / dx;
                report.G = std::max(report.G, qG);
                if (meta.G && !flagged_G && exceeds(qG, *meta.G)) {
                    report.violations.push_back("G: observed quotient " + std::to_string(qG) + " exceeds declared " +
                                                std::to_string(*meta.G));
                    flagged_G = true;
                }
                const double dyz = dy + dz;
                if (dyz > 0.0) {
                    const double mixed = f0 - fx2 - f(t, x, y2, z2) + f(t, x2, y2, z2);
                    const double qH = std::abs(mixed) / (dx * dyz);
                    report.H = std::max(report.H, qH);
                    if (meta.H && !flagged_H && exceeds(qH, *meta.H)) {
                        report.violations.push_back("H: observed quotient " + std::to_string(qH) +
                                                    " exceeds declared " + std::to_string(*meta.H));
                        flagged_H = true;
                    }
                }
            }
        }
    }
    return report;
}

}  // namespace bsdelab
