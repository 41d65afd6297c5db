#include "bsdelab/bsde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "bsdelab/csv.hpp"
#include "bsdelab/errors.hpp"
#include "bsdelab/parallel.hpp"

namespace bsdelab {

TerminalSpec TerminalSpec::of_state(TerminalMap h, double A, std::optional<double> C) {
    if (!h) throw ConfigError("terminal: empty map");
    if (!(A >= 0.0)) throw ConfigError("terminal: A must be nonnegative");
    if (C && !(*C >= 0.0)) throw ConfigError("terminal: C must be nonnegative");
    TerminalSpec t;
    t.kind = Kind::state;
    t.h = std::move(h);
    t.A = A;
    t.C = C;
    return t;
}

TerminalSpec TerminalSpec::of_stopped(StoppedMap h, double A, std::optional<double> C) {
    if (!h) throw ConfigError("terminal: empty map");
    if (!(A >= 0.0)) throw ConfigError("terminal: A must be nonnegative");
    if (C && !(*C >= 0.0)) throw ConfigError("terminal: C must be nonnegative");
    TerminalSpec t;
    t.kind = Kind::stopped;
    t.h_stopped = std::move(h);
    t.A = A;
    t.C = C;
    return t;
}

TerminalSpec TerminalSpec::of_functional(PathFunctional xi, double A, std::optional<double> C) {
    if (!xi) throw ConfigError("terminal: empty functional");
    if (!(A >= 0.0)) throw ConfigError("terminal: A must be nonnegative");
    if (C && !(*C >= 0.0)) throw ConfigError("terminal: C must be nonnegative");
    TerminalSpec t;
    t.kind = Kind::path_functional;
    t.functional = std::move(xi);
    t.A = A;
    t.C = C;
    return t;
}

std::vector<double> TerminalSpec::sample(const PathEnsemble& ens, bool stopped) const {
    std::vector<double> out(ens.paths);
    const int steps = ens.grid.steps();
    const std::size_t m = static_cast<std::size_t>(ens.state_dim);
    for (std::size_t p = 0; p < ens.paths; ++p) {
        double v = 0.0;
        switch (kind) {
            case Kind::state:
                if (stopped && ens.has_tau()) {
                    v = h(std::span<const double>(ens.exit_point.data() + p * m, m));
                } else {
                    v = h(ens.x(p, steps));
                }
                break;
            case Kind::stopped:
                if (ens.has_tau()) {
                    v = h_stopped(std::span<const double>(ens.exit_point.data() + p * m, m), ens.grid.node(ens.tau[p]));
                } else {
                    v = h_stopped(ens.x(p, steps), ens.grid.T());
                }
                break;
            case Kind::path_functional:
                v = functional(ens.grid, ens.dw_path(p), ens.noise_dim);
                break;
        }
        if (!std::isfinite(v)) throw NumericalError("terminal: non-finite terminal value on path " + std::to_string(p));
        if (C && std::abs(v) > *C * (1.0 + 1e-12) + 1e-300) {
            throw ConfigError("terminal: sampled |h| = " + fmt(std::abs(v)) + " exceeds the declared C = " + fmt(*C));
        }
        out[p] = v;
    }
    return out;
}

double SlackPolicy::value(double dt, std::size_t paths) const {
    return kappa1 * std::sqrt(dt) + kappa2 / std::sqrt(static_cast<double>(std::max<std::size_t>(paths, 1)));
}

double BsdeSolution::max_abs_z(int k, int i) const {
    double m = 0.0;
    for (std::size_t p = 0; p < paths; ++p) m = std::max(m, std::abs(z(k, p, i)));
    return m;
}

double BsdeSolution::max_abs_y(int k) const {
    double m = 0.0;
    for (std::size_t p = 0; p < paths; ++p) m = std::max(m, std::abs(y(k, p)));
    return m;
}

double BsdeSolution::mean_y(int k) const {
    double s = 0.0;
    for (std::size_t p = 0; p < paths; ++p) s += y(k, p);
    return s / static_cast<double>(paths);
}

namespace {

// Rows with fewer samples than this multiple of the feature count fall back
// to the constant basis.
constexpr std::size_t kMinRowsPerFeature = 10;

BsdeSolution backward_sweep(const DriverSpec& f, const std::vector<double>& xi, const PathEnsemble& ens,
                            const LsmcOptions& opt, bool use_tau) {
    const int steps = ens.grid.steps();
    const std::size_t P = ens.paths;
    const int n = ens.noise_dim;
    const std::size_t nn = static_cast<std::size_t>(n);
    if (f.z_dim() != n) throw ConfigError("solve: driver z dimension differs from the Brownian dimension");
    if (opt.scheme == BsdeScheme::picard) {
        if (opt.picard_iterations < 1) throw ConfigError("solve: Picard iterations must be >= 1");
        const double B = f.metadata().B.value_or(0.0);
        if (!(B * ens.grid.max_dt() < 1.0)) throw ConfigError("solve: Picard step needs B dt < 1");
    }
    if (!has_basis(opt.basis)) throw ConfigError("unknown regression basis '" + opt.basis + "'");
    if (!opt.z_basis.empty() && !has_basis(opt.z_basis)) throw ConfigError("unknown regression basis '" + opt.z_basis + "'");

    BsdeSolution sol;
    sol.grid = ens.grid;
    sol.paths = P;
    sol.noise_dim = n;
    sol.driver = f.name();
    sol.Y.assign(static_cast<std::size_t>(steps + 1) * P, 0.0);
    sol.Z.assign(static_cast<std::size_t>(steps) * P * nn, 0.0);
    std::copy(xi.begin(), xi.end(), sol.Y.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(steps) * P));
    std::vector<double> pathwise(xi.begin(), xi.end());

    std::vector<std::size_t> rows;
    rows.reserve(P);
    for (int k = steps - 1; k >= 0; --k) {
        const double t = ens.grid.node(k);
        const double dt = ens.grid.dt(k);
        const double sdt = std::sqrt(dt);
        const double* ynext = sol.Y.data() + static_cast<std::size_t>(k + 1) * P;
        double* ycur = sol.Y.data() + static_cast<std::size_t>(k) * P;
        double* zcur = sol.Z.data() + static_cast<std::size_t>(k) * P * nn;

        rows.clear();
        for (std::size_t p = 0; p < P; ++p) {
            if (!use_tau || k < ens.tau[p]) rows.push_back(p);
        }
        for (std::size_t p = 0; p < P; ++p) {
            if (use_tau && k >= ens.tau[p]) ycur[p] = ynext[p];
        }
        if (rows.empty()) continue;

        RegressionProblem pr;
        pr.rows = rows.size();
        pr.state_dim = ens.state_dim;
        pr.state = [&](std::size_t r, std::span<double> out) {
            auto x = ens.x(rows[r], k);
            std::copy(x.begin(), x.end(), out.begin());
        };
        pr.extra_dim = n;
        pr.extras = [&](std::size_t r, std::span<double> out) {
            auto dw = ens.dw(rows[r], k);
            for (std::size_t i = 0; i < nn; ++i) out[i] = dw[i] / sdt;
        };
        pr.response_dim = 1;
        pr.response = [&](std::size_t r, std::span<double> out) { out[0] = ynext[rows[r]]; };
        pr.threads = opt.threads;
        pr.basis = opt.basis;
        pr.extra_basis = opt.z_basis;
        {
            const std::size_t zsize = make_basis(opt.z_basis.empty() ? opt.basis : opt.z_basis, ens.state_dim).size;
            const std::size_t full = make_basis(opt.basis, ens.state_dim).size + zsize * nn;
            if (rows.size() < kMinRowsPerFeature * full) {
                pr.basis = "constant";
                pr.extra_basis.clear();
            }
        }
        const LinearFit fit = fit_regression(pr);

        parallel_for_chunks(rows.size(), kDefaultChunk, opt.threads, [&](std::size_t b, std::size_t e, std::size_t) {
            std::vector<double> phi(fit.basis_size()), zv(nn);
            for (std::size_t r = b; r < e; ++r) {
                const std::size_t p = rows[r];
                auto x = ens.x(p, k);
                fit.basis_values(x, phi);
                const double ybar = fit.combine(phi, 0, 0);
                for (std::size_t i = 0; i < nn; ++i) zv[i] = fit.combine(phi, static_cast<int>(i) + 1, 0) / sdt;
                double y = ybar;
                double fv = f(t, x, y, zv);
                if (opt.scheme == BsdeScheme::picard) {
                    for (int it = 0; it < opt.picard_iterations; ++it) {
                        y = ybar + dt * fv;
                        fv = f(t, x, y, zv);
                    }
                }
                const double ynew = ybar + dt * fv;
                if (!std::isfinite(ynew)) throw NumericalError("solve: non-finite Y at node " + std::to_string(k));
                ycur[p] = ynew;
                for (std::size_t i = 0; i < nn; ++i) zcur[p * nn + i] = zv[i];
                pathwise[p] += dt * fv;
            }
        });
    }

    double mean = 0.0;
    for (std::size_t p = 0; p < P; ++p) mean += sol.Y[p];
    sol.Y0 = mean / static_cast<double>(P);
    double pm = 0.0;
    for (double v : pathwise) pm += v;
    pm /= static_cast<double>(P);
    double var = 0.0;
    for (double v : pathwise) var += (v - pm) * (v - pm);
    var /= static_cast<double>(P > 1 ? P - 1 : 1);
    sol.Y0_stderr = std::sqrt(var / static_cast<double>(P));
    return sol;
}

std::vector<SampledProfile> certification_profiles(const BoundConstants& consts, const TimeGrid& grid, bool with_y) {
    std::vector<SampledProfile> profiles;
    for (int i = 0; i < consts.n; ++i) profiles.push_back(z_bound_profile(consts, i).sample(grid.nodes()));
    if (with_y) profiles.push_back(y_bound_profile(consts, false).profile.sample(grid.nodes()));
    return profiles;
}

void check_consts_match(const BoundConstants& consts, const PathEnsemble& ens) {
    consts.validate();
    if (consts.n != ens.noise_dim) throw ConfigError("constants: n differs from the Brownian dimension of the ensemble");
    if (std::abs(consts.T - ens.grid.T()) > 1e-12 * std::max(1.0, consts.T)) {
        throw ConfigError("constants: T differs from the ensemble horizon");
    }
}

}  // namespace

BsdeSolution solve_lsmc(const DriverSpec& f, const TerminalSpec& terminal, const PathEnsemble& ens,
                        const LsmcOptions& opt) {
    if (!f.globally_lipschitz()) {
        throw ConfigError("solve_lsmc: driver '" + f.name() + "' is not declared globally Lipschitz; truncate it first");
    }
    const std::vector<double> xi = terminal.sample(ens, false);
    return backward_sweep(f, xi, ens, opt, false);
}

BsdeSolution solve_truncated(const DriverSpec& f, const TerminalSpec& terminal, const BoundConstants& consts,
                             const PathEnsemble& ens, const LsmcOptions& opt) {
    check_consts_match(consts, ens);
    const double Q = q_radius(consts);
    const bool with_y = consts.C.has_value() && consts.D.has_value();
    std::optional<double> R;
    DriverSpec fhat = f;
    if (with_y) {
        R = y_bound_profile(consts, false).radius;
        fhat = truncate_yz(f, std::max(*R, 1e-300), std::max(Q, 1e-300));
    } else {
        fhat = truncate_z(f, std::max(Q, 1e-300));
    }
    if (!fhat.globally_lipschitz()) {
        throw ConfigError("solve_truncated: driver needs declared B and rho to be Lipschitz after truncation");
    }
    BsdeSolution sol = solve_lsmc(fhat, terminal, ens, opt);
    sol.Q = Q;
    sol.R = R;
    sol.certificate = verify_bounds(sol, certification_profiles(consts, ens.grid, with_y), opt.slack);
    return sol;
}

BsdeSolution solve_random_terminal(const DriverSpec& f, const TerminalSpec& terminal, const BoundConstants& consts,
                                   const PathEnsemble& ens, const LsmcOptions& opt) {
    if (!ens.has_tau()) throw std::invalid_argument("solve_random_terminal: ensemble has no exit times");
    check_consts_match(consts, ens);
    const double Q = q_radius(consts);
    const bool with_y = consts.C.has_value() && consts.D.has_value();
    std::optional<double> R;
    DriverSpec fhat = f;
    if (with_y) {
        R = y_bound_profile(consts, true).radius;
        fhat = truncate_yz(f, std::max(*R, 1e-300), std::max(Q, 1e-300));
    } else {
        fhat = truncate_z(f, std::max(Q, 1e-300));
    }
    if (!fhat.globally_lipschitz()) {
        throw ConfigError("solve_random_terminal: driver needs declared B and rho to be Lipschitz after truncation");
    }
    const std::vector<double> xi = terminal.sample(ens, true);
    BsdeSolution sol = backward_sweep(fhat, xi, ens, opt, true);
    sol.Q = Q;
    sol.R = R;
    sol.certificate = verify_bounds(sol, certification_profiles(consts, ens.grid, with_y), opt.slack);
    return sol;
}

double hat_xi(const DriverSpec& f, const TimeGrid& grid, std::span<const double> states, int m, int tau, double xi) {
    const int steps = grid.steps();
    if (tau < 0 || tau > steps) throw std::invalid_argument("hat_xi: tau must be a node index in [0, steps]");
    if (m < 1 || states.size() != static_cast<std::size_t>(steps + 1) * static_cast<std::size_t>(m)) {
        throw std::invalid_argument("hat_xi: path has the wrong number of states");
    }
    if (!std::isfinite(xi)) throw NumericalError("hat_xi: non-finite terminal value");
    const std::size_t mm = static_cast<std::size_t>(m);
    std::vector<double> zero(static_cast<std::size_t>(f.z_dim()), 0.0);
    std::vector<double> mid(mm);
    const std::optional<double> D = f.metadata().D;
    double y = xi;
    const double y_tau = std::abs(xi);
    for (int k = tau; k < steps; ++k) {
        const double t0 = grid.node(k);
        const double h = grid.dt(k);
        auto x0 = states.subspan(static_cast<std::size_t>(k) * mm, mm);
        auto x1 = states.subspan(static_cast<std::size_t>(k + 1) * mm, mm);
        for (std::size_t j = 0; j < mm; ++j) mid[j] = 0.5 * (x0[j] + x1[j]);
        auto rhs = [&](double t, std::span<const double> x, double yy) { return -f(t, x, yy, zero); };
        const double k1 = rhs(t0, x0, y);
        const double k2 = rhs(t0 + 0.5 * h, mid, y + 0.5 * h * k1);
        const double k3 = rhs(t0 + 0.5 * h, mid, y + 0.5 * h * k2);
        const double k4 = rhs(t0 + h, x1, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!std::isfinite(y) || std::abs(y) > 1e150) throw NumericalError("hat_xi: continuation ODE blew up");
        if (D) {
            // |f(t, y, 0)| <= D (1 + |y|) gives 1 + |y_t| <= (1 + |y_tau|) e^{D (t - tau)}.
            const double cap = (1.0 + y_tau) * std::exp(*D * (grid.node(k + 1) - grid.node(tau)));
            if (1.0 + std::abs(y) > cap * (1.0 + 1e-6) + 1e-9) {
                throw NumericalError("hat_xi: continuation exceeds the growth allowed by the declared D");
            }
        }
    }
    return y;
}

double hat_xi(const DriverSpec& f, const PathEnsemble& ens, std::size_t p, const TerminalMap& h) {
    if (!ens.has_tau()) throw std::invalid_argument("hat_xi: ensemble has no exit times");
    if (p >= ens.paths) throw std::invalid_argument("hat_xi: path index out of range");
    const std::size_t m = static_cast<std::size_t>(ens.state_dim);
    const double xi = h(std::span<const double>(ens.exit_point.data() + p * m, m));
    const std::size_t len = static_cast<std::size_t>(ens.grid.steps() + 1) * m;
    return hat_xi(f, ens.grid, std::span<const double>(ens.X.data() + p * len, len), ens.state_dim, ens.tau[p], xi);
}

BoundCertificate verify_bounds(const BsdeSolution& sol, const std::vector<SampledProfile>& profiles,
                               const SlackPolicy& slack) {
    const int steps = sol.grid.steps();
    const auto& nodes = sol.grid.nodes();
    BoundCertificate cert;
    cert.slack = slack.value(sol.grid.max_dt(), sol.paths);
    cert.worst_excess = -std::numeric_limits<double>::infinity();
    for (const auto& prof : profiles) {
        if (prof.times.size() != nodes.size() || prof.values.size() != nodes.size()) {
            throw std::invalid_argument("verify_bounds: profile is not sampled on the solution grid");
        }
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (std::abs(prof.times[k] - nodes[k]) > 1e-12 * std::max(1.0, std::abs(nodes[k]))) {
                throw std::invalid_argument("verify_bounds: profile times differ from the solution grid");
            }
        }
        const bool is_z = prof.kind == ProfileKind::z_bound;
        const int comp = is_z ? prof.component.value_or(0) : -1;
        if (is_z && (comp < 0 || comp >= sol.noise_dim)) throw std::invalid_argument("verify_bounds: bad profile component");
        const int last = is_z ? steps - 1 : steps;
        for (int k = 0; k <= last; ++k) {
            BoundCheck c;
            c.node = k;
            c.time = nodes[static_cast<std::size_t>(k)];
            c.component = comp;
            c.observed = is_z ? sol.max_abs_z(k, comp) : sol.max_abs_y(k);
            c.bound = prof.values[static_cast<std::size_t>(k)];
            c.excess = c.bound > 0.0 ? (c.observed - c.bound) / c.bound : c.observed - c.bound;
            c.within = c.excess <= cert.slack;
            if (!c.within) cert.pass = false;
            if (c.excess > cert.worst_excess) {
                cert.worst_excess = c.excess;
                cert.worst_node = k;
                cert.worst_component = comp;
            }
            if (is_z && c.bound > 0.0) cert.z_tightness = std::max(cert.z_tightness, c.observed / c.bound);
            cert.checks.push_back(c);
        }
    }
    if (cert.checks.empty()) cert.worst_excess = 0.0;
    cert.z_tight = std::abs(cert.z_tightness - 1.0) <= cert.slack;
    return cert;
}

void write_bsde_csv(std::ostream& out, const BsdeSolution& sol) {
    out << kCsvVersionLine << '\n';
    out << "time,component,max_abs_Z,bound,Y_mean,Y_max_abs,violation_flag\n";
    const int steps = sol.grid.steps();
    for (int k = 0; k <= steps; ++k) {
        const double ymean = sol.mean_y(k);
        const double ymax = sol.max_abs_y(k);
        bool y_violation = false;
        if (sol.certificate) {
            for (const auto& c : sol.certificate->checks) {
                if (c.component == -1 && c.node == k && !c.within) y_violation = true;
            }
        }
        for (int i = 0; i < sol.noise_dim; ++i) {
            std::string zmax, bound;
            bool violation = y_violation;
            if (k < steps) zmax = fmt(sol.max_abs_z(k, i));
            if (sol.certificate) {
                for (const auto& c : sol.certificate->checks) {
                    if (c.component == i && c.node == k) {
                        bound = fmt(c.bound);
                        if (!c.within) violation = true;
                    }
                }
            }
            out << fmt(sol.grid.node(k)) << ',' << i << ',' << zmax << ',' << bound << ',' << fmt(ymean) << ','
                << fmt(ymax) << ',' << (violation ? 1 : 0) << '\n';
        }
    }
}

}  // namespace bsdelab
