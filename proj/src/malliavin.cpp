#include "bsdelab/forward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bsdelab/errors.hpp"
#include "bsdelab/parallel.hpp"

namespace bsdelab {

namespace {

// Cameron–Martin increments of eta over each step, for eta' = 1_[r, r+h] / h.
std::vector<double> bump_increments(const TimeGrid& grid, double r, double h) {
    std::vector<double> out(static_cast<std::size_t>(grid.steps()), 0.0);
    for (int k = 0; k < grid.steps(); ++k) {
        const double a = std::max(grid.node(k), r);
        const double b = std::min(grid.node(k + 1), r + h);
        if (b > a) out[static_cast<std::size_t>(k)] = (b - a) / h;
    }
    return out;
}

}  // namespace

std::vector<double> evaluate_functional(const PathFunctional& xi, const PathEnsemble& ens, int threads) {
    if (!xi) throw std::invalid_argument("evaluate_functional: empty functional");
    std::vector<double> out(ens.paths);
    parallel_for_chunks(ens.paths, 256, threads, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t p = b; p < e; ++p) out[p] = xi(ens.grid, ens.dw_path(p), ens.noise_dim);
    });
    return out;
}

std::vector<double> malliavin_estimate(const PathFunctional& xi, const PathEnsemble& ens, const MalliavinBump& bump,
                                       int threads) {
    if (!xi) throw std::invalid_argument("malliavin_estimate: empty functional");
    if (bump.component < 0 || bump.component >= ens.noise_dim) throw std::invalid_argument("malliavin_estimate: bad component");
    if (!(bump.amplitude > 0.0)) throw std::invalid_argument("malliavin_estimate: amplitude must be positive");
    if (!(bump.length > 0.0)) throw std::invalid_argument("malliavin_estimate: bump length must be positive");
    const double tol = 1e-12 * std::max(1.0, std::abs(ens.grid.T()));
    if (bump.start < ens.grid.t0() - tol || bump.start + bump.length > ens.grid.T() + tol) {
        throw std::invalid_argument("malliavin_estimate: bump interval lies outside the horizon");
    }
    const std::vector<double> eta = bump_increments(ens.grid, bump.start, bump.length);
    const std::size_t n = static_cast<std::size_t>(ens.noise_dim);
    const std::size_t i = static_cast<std::size_t>(bump.component);
    const double eps = bump.amplitude;
    std::vector<double> out(ens.paths);
    parallel_for_chunks(ens.paths, 256, threads, [&](std::size_t b, std::size_t e, std::size_t) {
        std::vector<double> plus, minus;
        for (std::size_t p = b; p < e; ++p) {
            auto base = ens.dw_path(p);
            plus.assign(base.begin(), base.end());
            minus.assign(base.begin(), base.end());
            for (std::size_t k = 0; k < eta.size(); ++k) {
                plus[k * n + i] += eps * eta[k];
                minus[k * n + i] -= eps * eta[k];
            }
            const double fp = xi(ens.grid, plus, ens.noise_dim);
            const double fm = xi(ens.grid, minus, ens.noise_dim);
            out[p] = (fp - fm) / (2.0 * eps);
        }
    });
    return out;
}

namespace functionals {

PathFunctional brownian_terminal(int component, std::function<double(double)> phi) {
    return [component, phi](const TimeGrid& grid, std::span<const double> dW, int n) {
        double w = 0.0;
        for (int k = 0; k < grid.steps(); ++k) w += dW[static_cast<std::size_t>(k * n + component)];
        return phi ? phi(w) : w;
    };
}

PathFunctional running_max(int component) {
    return [component](const TimeGrid& grid, std::span<const double> dW, int n) {
        double w = 0.0;
        double m = 0.0;
        for (int k = 0; k < grid.steps(); ++k) {
            w += dW[static_cast<std::size_t>(k * n + component)];
            m = std::max(m, w);
        }
        return m;
    };
}

PathFunctional wiener_integral(std::function<double(double)> h, int component) {
    if (!h) throw std::invalid_argument("wiener_integral: empty integrand");
    return [h, component](const TimeGrid& grid, std::span<const double> dW, int n) {
        double s = 0.0;
        for (int k = 0; k < grid.steps(); ++k) s += h(grid.node(k)) * dW[static_cast<std::size_t>(k * n + component)];
        return s;
    };
}

PathFunctional forward_terminal(Dynamics dyn, std::vector<double> x0, int component) {
    if (x0.size() != static_cast<std::size_t>(dyn.state_dim)) throw std::invalid_argument("forward_terminal: x0 has wrong dimension");
    if (component < 0 || component >= dyn.state_dim) throw std::invalid_argument("forward_terminal: bad component");
    return [dyn, x0, component](const TimeGrid& grid, std::span<const double> dW, int n) {
        const std::size_t m = x0.size();
        std::vector<double> x = x0, next(m), b(m), s(m * static_cast<std::size_t>(n));
        for (int k = 0; k < grid.steps(); ++k) {
            const double dt = grid.dt(k);
            if (dyn.drift) dyn.drift(grid.node(k), x, b); else std::fill(b.begin(), b.end(), 0.0);
            if (dyn.diffusion) dyn.diffusion(grid.node(k), x, s);
            for (std::size_t j = 0; j < m; ++j) {
                double v = x[j] + b[j] * dt;
                for (int i = 0; i < n; ++i) {
                    const double dw = dW[static_cast<std::size_t>(k * n + i)];
                    v += dyn.diffusion ? s[j * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)] * dw
                                       : (static_cast<std::size_t>(i) == j ? dw : 0.0);
                }
                next[j] = v;
            }
            x.swap(next);
        }
        return x[static_cast<std::size_t>(component)];
    };
}

PathFunctional reflected_terminal(DomainSpec domain, Dynamics dyn, std::vector<double> x0, int component,
                                  ReflectionScheme scheme) {
    if (x0.size() != static_cast<std::size_t>(dyn.state_dim)) throw std::invalid_argument("reflected_terminal: x0 has wrong dimension");
    if (component < 0 || component >= dyn.state_dim) throw std::invalid_argument("reflected_terminal: bad component");
    if (!domain.contains_closed(x0, 1e-12)) throw ConfigError("reflected_terminal: x0 is outside the closed domain");
    return [domain, dyn, x0, component, scheme](const TimeGrid& grid, std::span<const double> dW, int n) {
        const std::size_t m = x0.size();
        std::vector<double> x = x0, next(m), b(m), s(m * static_cast<std::size_t>(n));
        for (int k = 0; k < grid.steps(); ++k) {
            const double dt = grid.dt(k);
            if (dyn.drift) dyn.drift(grid.node(k), x, b); else std::fill(b.begin(), b.end(), 0.0);
            if (dyn.diffusion) dyn.diffusion(grid.node(k), x, s);
            for (std::size_t j = 0; j < m; ++j) {
                double v = x[j] + b[j] * dt;
                for (int i = 0; i < n; ++i) {
                    const double dw = dW[static_cast<std::size_t>(k * n + i)];
                    v += dyn.diffusion ? s[j * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)] * dw
                                       : (static_cast<std::size_t>(i) == j ? dw : 0.0);
                }
                next[j] = v;
            }
            reflect_step(domain, next, scheme);
            x.swap(next);
        }
        return x[static_cast<std::size_t>(component)];
    };
}

}  // namespace functionals

ClarkOconeResult clark_ocone_decompose(const PathFunctional& xi, const PathEnsemble& ens, const std::string& basis,
                                       double amplitude, int threads) {
    const int steps = ens.grid.steps();
    const int n = ens.noise_dim;
    ClarkOconeResult res;
    res.paths = ens.paths;
    res.steps = steps;
    res.noise_dim = n;
    res.integrand.assign(static_cast<std::size_t>(steps) * ens.paths * static_cast<std::size_t>(n), 0.0);

    const std::vector<double> values = evaluate_functional(xi, ens, threads);
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(ens.paths);
    res.mean = mean;

    std::vector<std::vector<double>> estimates(static_cast<std::size_t>(n));
    for (int k = 0; k < steps; ++k) {
        for (int i = 0; i < n; ++i) {
            estimates[static_cast<std::size_t>(i)] =
                malliavin_estimate(xi, ens, MalliavinBump{i, ens.grid.node(k), ens.grid.dt(k), amplitude}, threads);
        }
        RegressionProblem pr;
        pr.rows = ens.paths;
        pr.state_dim = ens.state_dim;
        pr.state = [&](std::size_t r, std::span<double> out) {
            auto x = ens.x(r, k);
            std::copy(x.begin(), x.end(), out.begin());
        };
        pr.response_dim = n;
        pr.response = [&](std::size_t r, std::span<double> out) {
            for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = estimates[static_cast<std::size_t>(i)][r];
        };
        pr.basis = basis;
        pr.threads = threads;
        const LinearFit fit = fit_regression(pr);
        std::vector<double> phi(fit.basis_size());
        for (std::size_t p = 0; p < ens.paths; ++p) {
            fit.basis_values(ens.x(p, k), phi);
            for (int i = 0; i < n; ++i) {
                res.integrand[(static_cast<std::size_t>(k) * ens.paths + p) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)] =
                    fit.combine(phi, 0, i);
            }
        }
    }

    res.reconstruction.assign(ens.paths, mean);
    double err = 0.0;
    for (std::size_t p = 0; p < ens.paths; ++p) {
        double s = mean;
        for (int k = 0; k < steps; ++k) {
            auto dw = ens.dw(p, k);
            for (int i = 0; i < n; ++i) s += res.at(k, p, i) * dw[static_cast<std::size_t>(i)];
        }
        res.reconstruction[p] = s;
        err += (values[p] - s) * (values[p] - s);
    }
    res.l2_error = std::sqrt(err / static_cast<double>(ens.paths));
    return res;
}

Example33::Example33(int d) : depth(d) {
    if (d < 1 || d > 60) throw std::invalid_argument("Example33: depth must be in [1, 60]");
}

Example33 Example33::for_spacing(double dt) {
    if (!(dt > 0.0) || dt > 1.0) throw std::invalid_argument("Example33: spacing must be in (0, 1]");
    const int k = static_cast<int>(std::ceil(std::log2(1.0 / dt) - 1e-12));
    return Example33(std::clamp(k, 1, 60));
}

double Example33::g(double t) const {
    if (t <= 0.0 || t > 1.0) return 0.0;
    for (int k = 1; k <= depth; ++k) {
        const double lo = 1.0 - std::ldexp(1.0, 1 - k);
        const double hi = 1.0 - std::ldexp(1.0, -k);
        if (t > lo && t <= hi) return (k % 2 == 1 ? 1.0 : -1.0) * std::ldexp(1.0, k);
    }
    return 0.0;
}

double Example33::h(double t) const {
    if (t <= 0.0) return 0.0;
    for (int k = 1; k <= depth; ++k) {
        const double lo = 1.0 - std::ldexp(1.0, 1 - k);
        const double hi = 1.0 - std::ldexp(1.0, -k);
        if (t > lo && t <= hi) {
            const double start = (k % 2 == 1) ? 0.0 : 1.0;
            const double slope = (k % 2 == 1 ? 1.0 : -1.0) * std::ldexp(1.0, k);
            return std::clamp(start + slope * (t - lo), 0.0, 1.0);
        }
    }
    return 0.0;
}

double Example33::h_square_integral() const { return (1.0 - std::ldexp(1.0, -depth)) / 3.0; }

PathFunctional Example33::functional() const {
    const Example33 self = *this;
    return functionals::wiener_integral([self](double t) { return self.h(t); }, 0);
}

std::vector<double> Example33::samples(const PathEnsemble& ens) const {
    if (ens.noise_dim != 1) throw std::invalid_argument("Example33: needs a one-dimensional Brownian motion");
    if (std::abs(ens.grid.t0()) > 1e-12 || std::abs(ens.grid.T() - 1.0) > 1e-12) {
        throw std::invalid_argument("Example33: needs the horizon [0, 1]");
    }
    return evaluate_functional(functional(), ens);
}

}  // namespace bsdelab
