#include "bsdelab/forward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bsdelab/errors.hpp"
#include "bsdelab/parallel.hpp"
#include "bsdelab/rng.hpp"

namespace bsdelab {

TimeGrid TimeGrid::uniform(double t0, double T, int steps) {
    if (steps < 1) throw std::invalid_argument("TimeGrid: steps must be >= 1");
    if (!(T > t0) || !std::isfinite(t0) || !std::isfinite(T)) throw std::invalid_argument("TimeGrid: need finite t0 < T");
    TimeGrid g;
    g.nodes_.resize(static_cast<std::size_t>(steps) + 1);
    const double h = (T - t0) / steps;
    for (int k = 0; k <= steps; ++k) g.nodes_[static_cast<std::size_t>(k)] = t0 + k * h;
    g.nodes_.back() = T;
    g.uniform_ = true;
    return g;
}

TimeGrid TimeGrid::from_nodes(std::vector<double> nodes) {
    if (nodes.size() < 2) throw std::invalid_argument("TimeGrid: need at least two nodes");
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
        if (!(nodes[k + 1] > nodes[k]) || !std::isfinite(nodes[k + 1])) {
            throw std::invalid_argument("TimeGrid: nodes must be finite and strictly increasing");
        }
    }
    TimeGrid g;
    g.nodes_ = std::move(nodes);
    const double h = (g.nodes_.back() - g.nodes_.front()) / static_cast<double>(g.nodes_.size() - 1);
    g.uniform_ = true;
    for (std::size_t k = 0; k + 1 < g.nodes_.size(); ++k) {
        if (std::abs((g.nodes_[k + 1] - g.nodes_[k]) - h) > 1e-12 * std::max(1.0, std::abs(h))) g.uniform_ = false;
    }
    return g;
}

double TimeGrid::max_dt() const {
    double m = 0.0;
    for (int k = 0; k < steps(); ++k) m = std::max(m, dt(k));
    return m;
}

Dynamics Dynamics::brownian(int dim, double scale) {
    if (dim < 1) throw std::invalid_argument("Dynamics: dimension must be >= 1");
    Dynamics d;
    d.state_dim = dim;
    d.noise_dim = dim;
    if (scale != 1.0) {
        d.diffusion = [dim, scale](double, std::span<const double>, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
            for (int i = 0; i < dim; ++i) out[static_cast<std::size_t>(i * dim + i)] = scale;
        };
    }
    return d;
}

Dynamics Dynamics::constant_coefficients(int state_dim, int noise_dim, std::vector<double> b, std::vector<double> sigma) {
    if (state_dim < 1 || noise_dim < 1) throw std::invalid_argument("Dynamics: dimensions must be >= 1");
    if (b.size() != static_cast<std::size_t>(state_dim)) throw std::invalid_argument("Dynamics: drift has wrong size");
    if (sigma.size() != static_cast<std::size_t>(state_dim * noise_dim)) throw std::invalid_argument("Dynamics: sigma has wrong size");
    Dynamics d;
    d.state_dim = state_dim;
    d.noise_dim = noise_dim;
    d.drift = [b](double, std::span<const double>, std::span<double> out) { std::copy(b.begin(), b.end(), out.begin()); };
    d.diffusion = [sigma](double, std::span<const double>, std::span<double> out) {
        std::copy(sigma.begin(), sigma.end(), out.begin());
    };
    return d;
}

namespace {

void check_dynamics(const Dynamics& dyn) {
    if (dyn.state_dim < 1 || dyn.noise_dim < 1) throw std::invalid_argument("dynamics: dimensions must be >= 1");
    if (!dyn.diffusion && dyn.state_dim != dyn.noise_dim) {
        throw std::invalid_argument("dynamics: identity diffusion needs state_dim == noise_dim");
    }
}

// Scratch space for one Euler step.
struct EulerWork {
    std::vector<double> drift, sigma;
    explicit EulerWork(const Dynamics& d)
        : drift(static_cast<std::size_t>(d.state_dim)), sigma(static_cast<std::size_t>(d.state_dim * d.noise_dim)) {}
};

// x_next = x + b dt + sigma dw
void euler_step(const Dynamics& dyn, double t, double dt, std::span<const double> x, std::span<const double> dw,
                std::span<double> x_next, EulerWork& w) {
    const std::size_t m = static_cast<std::size_t>(dyn.state_dim);
    const std::size_t n = static_cast<std::size_t>(dyn.noise_dim);
    if (dyn.drift) {
        dyn.drift(t, x, w.drift);
    } else {
        std::fill(w.drift.begin(), w.drift.end(), 0.0);
    }
    if (dyn.diffusion) {
        dyn.diffusion(t, x, w.sigma);
        for (std::size_t j = 0; j < m; ++j) {
            double s = x[j] + w.drift[j] * dt;
            for (std::size_t i = 0; i < n; ++i) s += w.sigma[j * n + i] * dw[i];
            x_next[j] = s;
        }
    } else {
        for (std::size_t j = 0; j < m; ++j) x_next[j] = x[j] + w.drift[j] * dt + dw[j];
    }
    for (std::size_t j = 0; j < m; ++j) {
        if (!std::isfinite(x_next[j])) throw NumericalError("simulation: non-finite state (drift or diffusion blew up)");
    }
}

void draw_increments(const TimeGrid& grid, int n, std::uint64_t seed, std::size_t p, std::span<double> out) {
    RandomStream rng(seed, p, RngChannel::increments);
    std::size_t idx = 0;
    for (int k = 0; k < grid.steps(); ++k) {
        const double sq = std::sqrt(grid.dt(k));
        for (int i = 0; i < n; ++i) out[idx++] = sq * rng.normal();
    }
}

PathEnsemble make_ensemble(const Dynamics& dyn, const TimeGrid& grid, std::size_t paths, std::uint64_t seed) {
    PathEnsemble ens;
    ens.grid = grid;
    ens.state_dim = dyn.state_dim;
    ens.noise_dim = dyn.noise_dim;
    ens.paths = paths;
    ens.seed = seed;
    const std::size_t steps = static_cast<std::size_t>(grid.steps());
    ens.dW.resize(paths * steps * static_cast<std::size_t>(dyn.noise_dim));
    ens.X.resize(paths * (steps + 1) * static_cast<std::size_t>(dyn.state_dim));
    return ens;
}

}  // namespace

PathEnsemble simulate_paths(const Dynamics& dyn, std::span<const double> x0, const TimeGrid& grid, std::size_t paths,
                            std::uint64_t seed, const SimulationOptions& opt) {
    check_dynamics(dyn);
    if (paths < 1) throw std::invalid_argument("simulate_paths: paths must be >= 1");
    if (x0.size() != static_cast<std::size_t>(dyn.state_dim)) throw std::invalid_argument("simulate_paths: x0 has wrong dimension");
    for (double v : x0) {
        if (!std::isfinite(v)) throw std::invalid_argument("simulate_paths: non-finite x0");
    }
    PathEnsemble ens = make_ensemble(dyn, grid, paths, seed);
    const int steps = grid.steps();
    const std::size_t m = static_cast<std::size_t>(dyn.state_dim);
    const std::size_t n = static_cast<std::size_t>(dyn.noise_dim);
    parallel_for_chunks(paths, 256, opt.threads, [&](std::size_t b, std::size_t e, std::size_t) {
        EulerWork w(dyn);
        for (std::size_t p = b; p < e; ++p) {
            double* dw = ens.dW.data() + p * static_cast<std::size_t>(steps) * n;
            draw_increments(grid, dyn.noise_dim, seed, p, std::span<double>(dw, static_cast<std::size_t>(steps) * n));
            double* X = ens.X.data() + p * static_cast<std::size_t>(steps + 1) * m;
            std::copy(x0.begin(), x0.end(), X);
            for (int k = 0; k < steps; ++k) {
                euler_step(dyn, grid.node(k), grid.dt(k), std::span<const double>(X + k * m, m),
                           std::span<const double>(dw + k * n, n), std::span<double>(X + (k + 1) * m, m), w);
            }
        }
    });
    return ens;
}

double reflect_step(const DomainSpec& domain, std::span<double> y, ReflectionScheme scheme) {
    if (domain.contains_closed(y, 0.0)) return 0.0;
    double proj[8];
    const std::size_t m = y.size();
    std::copy(y.begin(), y.end(), proj);
    domain.project(std::span<double>(proj, m));
    double inc = 0.0;
    for (std::size_t j = 0; j < m; ++j) inc += (proj[j] - y[j]) * (proj[j] - y[j]);
    inc = std::sqrt(inc);
    if (scheme == ReflectionScheme::symmetric) {
        double mirror[8];
        for (std::size_t j = 0; j < m; ++j) mirror[j] = 2.0 * proj[j] - y[j];
        if (domain.contains_closed(std::span<const double>(mirror, m), 1e-12)) {
            std::copy(mirror, mirror + m, y.begin());
            return inc;
        }
    }
    std::copy(proj, proj + m, y.begin());
    return inc;
}

PathEnsemble simulate_reflected(const DomainSpec& domain, const Dynamics& dyn, std::span<const double> x0,
                                const TimeGrid& grid, std::size_t paths, std::uint64_t seed,
                                const ReflectionOptions& opt) {
    check_dynamics(dyn);
    if (domain.kind() != DomainSpec::Kind::polyhedron && domain.kind() != DomainSpec::Kind::smooth) {
        throw ConfigError("simulate_reflected: domain must be a convex polyhedron or a smooth domain with w");
    }
    if (domain.dim() != dyn.state_dim) throw ConfigError("simulate_reflected: domain dimension differs from the state");
    if (dyn.state_dim > 8) throw ConfigError("simulate_reflected: state dimension must be <= 8");
    if (paths < 1) throw std::invalid_argument("simulate_reflected: paths must be >= 1");
    if (x0.size() != static_cast<std::size_t>(dyn.state_dim)) throw std::invalid_argument("simulate_reflected: x0 has wrong dimension");
    if (!domain.contains_closed(x0, 1e-12)) throw ConfigError("simulate_reflected: x0 is outside the closed domain");

    PathEnsemble ens = make_ensemble(dyn, grid, paths, seed);
    ens.reflected = true;
    const int steps = grid.steps();
    const std::size_t m = static_cast<std::size_t>(dyn.state_dim);
    const std::size_t n = static_cast<std::size_t>(dyn.noise_dim);
    ens.L.assign(paths * static_cast<std::size_t>(steps + 1), 0.0);
    parallel_for_chunks(paths, 256, opt.threads, [&](std::size_t b, std::size_t e, std::size_t) {
        EulerWork w(dyn);
        for (std::size_t p = b; p < e; ++p) {
            double* dw = ens.dW.data() + p * static_cast<std::size_t>(steps) * n;
            draw_increments(grid, dyn.noise_dim, seed, p, std::span<double>(dw, static_cast<std::size_t>(steps) * n));
            double* X = ens.X.data() + p * static_cast<std::size_t>(steps + 1) * m;
            double* L = ens.L.data() + p * static_cast<std::size_t>(steps + 1);
            std::copy(x0.begin(), x0.end(), X);
            for (int k = 0; k < steps; ++k) {
                std::span<double> next(X + (k + 1) * m, m);
                euler_step(dyn, grid.node(k), grid.dt(k), std::span<const double>(X + k * m, m),
                           std::span<const double>(dw + k * n, n), next, w);
                L[k + 1] = L[k] + reflect_step(domain, next, opt.scheme);
            }
        }
    });
    return ens;
}

PathEnsemble exit_time(PathEnsemble ens, const DomainSpec& domain, const ExitOptions& opt) {
    if (ens.reflected) throw std::invalid_argument("exit_time: reflected ensembles have no exit time");
    if (domain.dim() != ens.state_dim) throw std::invalid_argument("exit_time: domain dimension differs from the state");
    if (ens.state_dim > 8) throw std::invalid_argument("exit_time: state dimension must be <= 8");
    const bool bridge = opt.bridge && domain.face_count() > 0;
    if (opt.bridge && domain.kind() == DomainSpec::Kind::open_set) {
        throw ConfigError("exit_time: the bridge correction needs a polyhedral or smooth domain");
    }
    const int steps = ens.grid.steps();
    const std::size_t m = static_cast<std::size_t>(ens.state_dim);
    const std::size_t n = static_cast<std::size_t>(ens.noise_dim);
    if (!opt.diffusion && m != n && bridge) throw std::invalid_argument("exit_time: bridge correction needs a diffusion when m != n");
    ens.tau.assign(ens.paths, steps);
    ens.exit_point.assign(ens.paths * m, 0.0);
    const bool can_project = domain.kind() == DomainSpec::Kind::polyhedron || domain.kind() == DomainSpec::Kind::smooth;

    parallel_for_chunks(ens.paths, 256, opt.threads, [&](std::size_t b, std::size_t e, std::size_t) {
        std::vector<double> sigma(m * n), normal(m), normal1(m), xs(m);
        for (std::size_t p = b; p < e; ++p) {
            int tau = steps;
            bool bridge_exit = false;
            std::size_t bridge_face = 0;
            double bridge_d1 = 0.0;
            if (!domain.contains(ens.x(p, 0))) {
                tau = 0;
            } else {
                RandomStream rng(ens.seed, p, RngChannel::bridge);
                for (int k = 0; k < steps; ++k) {
                    auto x1 = ens.x(p, k + 1);
                    if (!domain.contains(x1)) {
                        tau = k + 1;
                        break;
                    }
                    if (!bridge) continue;
                    auto x0 = ens.x(p, k);
                    const double dt = ens.grid.dt(k);
                    if (opt.diffusion) opt.diffusion(ens.grid.node(k), x0, sigma);
                    double survive = 1.0;
                    double best_p = -1.0;
                    std::size_t best_face = 0;
                    double best_d1 = 0.0;
                    for (std::size_t j = 0; j < domain.face_count(); ++j) {
                        const double d0 = domain.face_margin(j, x0, normal);
                        const double d1 = domain.face_margin(j, x1, normal1);
                        double s2 = 0.0;
                        for (std::size_t i = 0; i < n; ++i) {
                            double v = 0.0;
                            if (opt.diffusion) {
                                for (std::size_t r = 0; r < m; ++r) v += normal[r] * sigma[r * n + i];
                            } else {
                                v = normal[i];
                            }
                            s2 += v * v;
                        }
                        if (!(s2 > 0.0) || d0 <= 0.0 || d1 <= 0.0) continue;
                        const double pj = std::exp(-2.0 * d0 * d1 / (s2 * dt));
                        survive *= 1.0 - pj;
                        if (pj > best_p) {
                            best_p = pj;
                            best_face = j;
                            best_d1 = d1;
                        }
                    }
                    const double u = rng.uniform();
                    if (u > survive) {
                        tau = k + 1;
                        bridge_exit = true;
                        bridge_face = best_face;
                        bridge_d1 = best_d1;
                        break;
                    }
                }
            }
            ens.tau[p] = tau;
            auto xt = ens.x(p, tau);
            std::copy(xt.begin(), xt.end(), xs.begin());
            if (tau < steps || bridge_exit || !domain.contains(xt)) {
                if (bridge_exit) {
                    domain.face_margin(bridge_face, xt, normal);
                    for (std::size_t j = 0; j < m; ++j) xs[j] += bridge_d1 * normal[j];
                    if (can_project) domain.project(xs);
                } else if (can_project) {
                    domain.project(xs);
                }
            }
            std::copy(xs.begin(), xs.end(), ens.exit_point.begin() + static_cast<std::ptrdiff_t>(p * m));
        }
    });
    return ens;
}

}  // namespace bsdelab
