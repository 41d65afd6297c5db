#include "bsdelab/pde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "bsdelab/csv.hpp"
#include "bsdelab/errors.hpp"

namespace bsdelab {

std::string to_string(PdeRegime regime) {
    switch (regime) {
        case PdeRegime::cauchy_terminal: return "cauchy";
        case PdeRegime::heat_initial: return "heat";
        case PdeRegime::dirichlet: return "dirichlet";
        case PdeRegime::neumann_1d: return "neumann";
    }
    return "unknown";
}

PdeRegime parse_pde_regime(const std::string& name) {
    if (name == "cauchy" || name == "cauchy-terminal") return PdeRegime::cauchy_terminal;
    if (name == "heat" || name == "heat-initial") return PdeRegime::heat_initial;
    if (name == "dirichlet") return PdeRegime::dirichlet;
    if (name == "neumann" || name == "neumann-1d") return PdeRegime::neumann_1d;
    throw ConfigError("unknown PDE regime '" + name + "'");
}

namespace {

enum class Lateral { extrapolate, dirichlet, neumann };

struct TimeCoeffs {
    double t = 0.0;
    double a[2][2] = {{0.0, 0.0}, {0.0, 0.0}};  // (1/2) sigma sigma^T, or Id for forward forms
    std::vector<double> sigma;                   // dim x n row-major
};

// The problem after mapping to the marching variable s (s = T - t for
// terminal data, s = t for initial data): u_s = A(s) u + H(s, x, u, grad u).
struct Model {
    int dim = 1;
    int n = 1;
    double T = 1.0;
    bool terminal = true;
    bool forward_form = false;  // a = Id, z = grad u, no drift
    DriftFn drift;
    TimeMatrixFn sigma;
    Nonlinearity g;
    TerminalMap h;
    Lateral lateral = Lateral::extrapolate;

    double time_of(double s) const { return terminal ? T - s : s; }

    TimeCoeffs coeffs(double t) const {
        TimeCoeffs c;
        c.t = t;
        const std::size_t d = static_cast<std::size_t>(dim);
        if (forward_form) {
            for (std::size_t i = 0; i < d; ++i) c.a[i][i] = 1.0;
            return c;
        }
        c.sigma.assign(d * static_cast<std::size_t>(n), 0.0);
        if (sigma) {
            sigma(t, c.sigma);
        } else {
            for (std::size_t i = 0; i < std::min<std::size_t>(d, static_cast<std::size_t>(n)); ++i) c.sigma[i * static_cast<std::size_t>(n) + i] = 1.0;
        }
        for (double v : c.sigma) {
            if (!std::isfinite(v)) throw NumericalError("pde: non-finite sigma");
        }
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) s += c.sigma[i * static_cast<std::size_t>(n) + k] * c.sigma[j * static_cast<std::size_t>(n) + k];
                c.a[i][j] = 0.5 * s;
            }
        }
        return c;
    }

    // z = grad u sigma (or grad u for forward forms); returns |z|.
    double zvec(const TimeCoeffs& c, const double* p, double* z) const {
        double norm = 0.0;
        if (forward_form) {
            for (int i = 0; i < dim; ++i) {
                z[i] = p[i];
                norm += p[i] * p[i];
            }
            return std::sqrt(norm);
        }
        for (int k = 0; k < n; ++k) {
            double s = 0.0;
            for (int i = 0; i < dim; ++i) s += p[i] * c.sigma[static_cast<std::size_t>(i * n + k)];
            z[k] = s;
            norm += s * s;
        }
        return std::sqrt(norm);
    }

    double H(const TimeCoeffs& c, const double* x, double u, const double* p) const {
        double z[8];
        zvec(c, p, z);
        double v = 0.0;
        if (!forward_form && drift) {
            double b[2];
            drift(c.t, std::span<const double>(x, static_cast<std::size_t>(dim)), std::span<double>(b, static_cast<std::size_t>(dim)));
            for (int i = 0; i < dim; ++i) v += b[i] * p[i];
        }
        if (g) v += g(c.t, std::span<const double>(x, static_cast<std::size_t>(dim)), u,
                      std::span<const double>(z, static_cast<std::size_t>(forward_form ? dim : n)));
        if (!std::isfinite(v)) throw NumericalError("pde: non-finite nonlinearity");
        return v;
    }

    double dHdp(const TimeCoeffs& c, const double* x, double u, const double* p, int i) const {
        double q[2] = {0.0, 0.0};
        for (int k = 0; k < dim; ++k) q[k] = p[k];
        const double d = 1e-6 * (1.0 + std::abs(p[i]));
        q[i] = p[i] + d;
        const double hp = H(c, x, u, q);
        q[i] = p[i] - d;
        const double hm = H(c, x, u, q);
        return (hp - hm) / (2.0 * d);
    }
};

struct StepStats {
    std::size_t switches = 0;
    double max_speed = 0.0;
};

// Solves tridiagonal (sub, diag, sup) x = rhs in place of rhs.
void thomas(std::vector<double>& sub, std::vector<double>& diag, std::vector<double>& sup, std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
}

// ---------------------------------------------------------------------------
// 1D

struct Solver1D {
    const Model& model;
    std::vector<double> x;
    double dx;

    std::size_t N() const { return x.size() - 1; }

    void hamiltonian(const TimeCoeffs& c, const std::vector<double>& u, std::vector<double>& out, StepStats& st) const {
        const std::size_t n = N();
        std::fill(out.begin(), out.end(), 0.0);
        const double a = c.a[0][0];
        const std::size_t lo = model.lateral == Lateral::neumann ? 0 : 1;
        const std::size_t hi = model.lateral == Lateral::neumann ? n : n - 1;
        for (std::size_t j = lo; j <= hi; ++j) {
            double p;
            bool edge = false;
            if (j == 0 || j == n) {
                p = 0.0;  // Neumann ends
                edge = true;
            } else {
                p = (u[j + 1] - u[j - 1]) / (2.0 * dx);
            }
            const double v = model.dHdp(c, &x[j], u[j], &p, 0);
            st.max_speed = std::max(st.max_speed, std::abs(v));
            if (!edge && std::abs(v) * dx > 2.0 * a) {
                p = v > 0.0 ? (u[j + 1] - u[j]) / dx : (u[j] - u[j - 1]) / dx;
                ++st.switches;
            }
            out[j] = model.H(c, &x[j], u[j], &p);
        }
    }

    // (L u)_j on evolving rows
    void apply_diffusion(double a, const std::vector<double>& u, std::vector<double>& out) const {
        const std::size_t n = N();
        std::fill(out.begin(), out.end(), 0.0);
        const double k = a / (dx * dx);
        for (std::size_t j = 1; j < n; ++j) out[j] = k * (u[j + 1] - 2.0 * u[j] + u[j - 1]);
        if (model.lateral == Lateral::neumann) {
            out[0] = 2.0 * k * (u[1] - u[0]);
            out[n] = 2.0 * k * (u[n - 1] - u[n]);
        }
    }

    // Solves (I - lambda_scale L) u = rhs with the lateral condition; fills all nodes.
    void implicit_solve(double a, double scale, const std::vector<double>& rhs, double t_new, std::vector<double>& u) const {
        const std::size_t n = N();
        const double lam = scale * a / (dx * dx);
        if (model.lateral == Lateral::neumann) {
            std::vector<double> sub(n + 1, -lam), diag(n + 1, 1.0 + 2.0 * lam), sup(n + 1, -lam), r(rhs);
            sup[0] = -2.0 * lam;
            sub[n] = -2.0 * lam;
            thomas(sub, diag, sup, r);
            u = r;
            return;
        }
        const std::size_t m = n - 1;  // unknowns 1..n-1
        std::vector<double> sub(m, -lam), diag(m, 1.0 + 2.0 * lam), sup(m, -lam), r(m);
        for (std::size_t i = 0; i < m; ++i) r[i] = rhs[i + 1];
        double left = 0.0, right = 0.0;
        if (model.lateral == Lateral::dirichlet) {
            left = model.h(std::span<const double>(&x[0], 1));
            right = model.h(std::span<const double>(&x[n], 1));
            r[0] += lam * left;
            r[m - 1] += lam * right;
        } else {
            // u_0 = 2 u_1 - u_2 folded into the first and last rows
            diag[0] = 1.0;
            sup[0] = 0.0;
            diag[m - 1] = 1.0;
            sub[m - 1] = 0.0;
        }
        thomas(sub, diag, sup, r);
        u.assign(n + 1, 0.0);
        for (std::size_t i = 0; i < m; ++i) u[i + 1] = r[i];
        if (model.lateral == Lateral::dirichlet) {
            u[0] = left;
            u[n] = right;
        } else {
            u[0] = 2.0 * u[1] - u[2];
            u[n] = 2.0 * u[n - 1] - u[n - 2];
        }
        (void)t_new;
    }

    void step(double s, double ds, double theta, std::vector<double>& u, StepStats& st) const {
        const double t0 = model.time_of(s);
        const double t1 = model.time_of(s + ds);
        const TimeCoeffs c0 = model.coeffs(t0);
        const TimeCoeffs c1 = model.coeffs(t1);
        const TimeCoeffs cm = model.coeffs(model.time_of(s + 0.5 * ds));
        const double a = cm.a[0][0];
        const std::size_t sz = u.size();
        std::vector<double> Lu(sz), E(sz), H0(sz), H1(sz), rhs(sz), ustar;
        apply_diffusion(a, u, Lu);
        for (std::size_t j = 0; j < sz; ++j) E[j] = u[j] + (1.0 - theta) * ds * Lu[j];
        hamiltonian(c0, u, H0, st);
        for (std::size_t j = 0; j < sz; ++j) rhs[j] = E[j] + ds * H0[j];
        implicit_solve(a, theta * ds, rhs, t1, ustar);
        hamiltonian(c1, ustar, H1, st);
        for (std::size_t j = 0; j < sz; ++j) rhs[j] = E[j] + 0.5 * ds * (H0[j] + H1[j]);
        implicit_solve(a, theta * ds, rhs, t1, u);
        for (double v : u) {
            if (!std::isfinite(v)) throw NumericalError("pde: solution became non-finite");
        }
    }

    double gradient_max(const TimeCoeffs& c, const std::vector<double>& u) const {
        double m = 0.0;
        double z[8];
        for (std::size_t j = 1; j < N(); ++j) {
            const double p = (u[j + 1] - u[j - 1]) / (2.0 * dx);
            m = std::max(m, model.zvec(c, &p, z));
        }
        return m;
    }
};

// ---------------------------------------------------------------------------
// 2D (Cauchy only, linear extrapolation on every edge)

struct Solver2D {
    const Model& model;
    std::vector<double> x, y;
    double dx, dy;

    std::size_t NX() const { return x.size() - 1; }
    std::size_t NY() const { return y.size() - 1; }
    std::size_t id(std::size_t j, std::size_t l) const { return l * (NX() + 1) + j; }

    void extrapolate(std::vector<double>& u) const {
        const std::size_t nx = NX(), ny = NY();
        for (std::size_t l = 1; l < ny; ++l) {
            u[id(0, l)] = 2.0 * u[id(1, l)] - u[id(2, l)];
            u[id(nx, l)] = 2.0 * u[id(nx - 1, l)] - u[id(nx - 2, l)];
        }
        for (std::size_t j = 0; j <= nx; ++j) {
            u[id(j, 0)] = 2.0 * u[id(j, 1)] - u[id(j, 2)];
            u[id(j, ny)] = 2.0 * u[id(j, ny - 1)] - u[id(j, ny - 2)];
        }
    }

    void gradient(const std::vector<double>& u, std::size_t j, std::size_t l, double* p) const {
        p[0] = (u[id(j + 1, l)] - u[id(j - 1, l)]) / (2.0 * dx);
        p[1] = (u[id(j, l + 1)] - u[id(j, l - 1)]) / (2.0 * dy);
    }

    void hamiltonian(const TimeCoeffs& c, const std::vector<double>& u, std::vector<double>& out, StepStats& st) const {
        std::fill(out.begin(), out.end(), 0.0);
        const double h[2] = {dx, dy};
        for (std::size_t l = 1; l < NY(); ++l) {
            for (std::size_t j = 1; j < NX(); ++j) {
                double p[2];
                gradient(u, j, l, p);
                const double xy[2] = {x[j], y[l]};
                const double uc = u[id(j, l)];
                double v[2];
                for (int i = 0; i < 2; ++i) v[i] = model.dHdp(c, xy, uc, p, i);
                for (int i = 0; i < 2; ++i) {
                    st.max_speed = std::max(st.max_speed, std::abs(v[i]) * (i == 0 ? 1.0 : dx / dy));
                    if (std::abs(v[i]) * h[i] > 2.0 * c.a[i][i]) {
                        if (i == 0) {
                            p[0] = v[0] > 0.0 ? (u[id(j + 1, l)] - uc) / dx : (uc - u[id(j - 1, l)]) / dx;
                        } else {
                            p[1] = v[1] > 0.0 ? (u[id(j, l + 1)] - uc) / dy : (uc - u[id(j, l - 1)]) / dy;
                        }
                        ++st.switches;
                    }
                }
                out[id(j, l)] = model.H(c, xy, uc, p);
            }
        }
    }

    // A u on interior nodes, split into axis parts and the explicit cross term.
    void apply(const TimeCoeffs& c, const std::vector<double>& u, std::vector<double>& A1, std::vector<double>& A2,
               std::vector<double>& A12) const {
        std::fill(A1.begin(), A1.end(), 0.0);
        std::fill(A2.begin(), A2.end(), 0.0);
        std::fill(A12.begin(), A12.end(), 0.0);
        const double kx = c.a[0][0] / (dx * dx), ky = c.a[1][1] / (dy * dy), kxy = 2.0 * c.a[0][1] / (4.0 * dx * dy);
        for (std::size_t l = 1; l < NY(); ++l) {
            for (std::size_t j = 1; j < NX(); ++j) {
                const double uc = u[id(j, l)];
                A1[id(j, l)] = kx * (u[id(j + 1, l)] - 2.0 * uc + u[id(j - 1, l)]);
                A2[id(j, l)] = ky * (u[id(j, l + 1)] - 2.0 * uc + u[id(j, l - 1)]);
                A12[id(j, l)] = kxy * (u[id(j + 1, l + 1)] - u[id(j + 1, l - 1)] - u[id(j - 1, l + 1)] + u[id(j - 1, l - 1)]);
            }
        }
    }

    // (I - scale k D2) v = rhs along one axis, extrapolated ends folded in.
    static void line_solve(double lam, std::vector<double>& r) {
        const std::size_t m = r.size();
        std::vector<double> sub(m, -lam), diag(m, 1.0 + 2.0 * lam), sup(m, -lam);
        diag[0] = 1.0;
        sup[0] = 0.0;
        diag[m - 1] = 1.0;
        sub[m - 1] = 0.0;
        thomas(sub, diag, sup, r);
    }

    void douglas(const TimeCoeffs& cm, double ds, double theta, const std::vector<double>& u, const std::vector<double>& A1,
                 const std::vector<double>& A2, const std::vector<double>& A12, const std::vector<double>& Hbar,
                 std::vector<double>& out) const {
        const std::size_t nx = NX(), ny = NY();
        std::vector<double> Y(u.size(), 0.0);
        for (std::size_t l = 1; l < ny; ++l) {
            for (std::size_t j = 1; j < nx; ++j) {
                const std::size_t k = id(j, l);
                Y[k] = u[k] + ds * (A1[k] + A2[k] + A12[k] + Hbar[k]) - theta * ds * A1[k];
            }
        }
        const double lx = theta * ds * cm.a[0][0] / (dx * dx);
        const double ly = theta * ds * cm.a[1][1] / (dy * dy);
        std::vector<double> line;
        for (std::size_t l = 1; l < ny; ++l) {
            line.assign(nx - 1, 0.0);
            for (std::size_t j = 1; j < nx; ++j) line[j - 1] = Y[id(j, l)];
            line_solve(lx, line);
            for (std::size_t j = 1; j < nx; ++j) Y[id(j, l)] = line[j - 1] - theta * ds * A2[id(j, l)];
        }
        out.assign(u.size(), 0.0);
        for (std::size_t j = 1; j < nx; ++j) {
            line.assign(ny - 1, 0.0);
            for (std::size_t l = 1; l < ny; ++l) line[l - 1] = Y[id(j, l)];
            line_solve(ly, line);
            for (std::size_t l = 1; l < ny; ++l) out[id(j, l)] = line[l - 1];
        }
        extrapolate(out);
    }

    void step(double s, double ds, double theta, std::vector<double>& u, StepStats& st) const {
        const TimeCoeffs c0 = model.coeffs(model.time_of(s));
        const TimeCoeffs c1 = model.coeffs(model.time_of(s + ds));
        const TimeCoeffs cm = model.coeffs(model.time_of(s + 0.5 * ds));
        const std::size_t sz = u.size();
        std::vector<double> A1(sz), A2(sz), A12(sz), H0(sz), H1(sz), Hb(sz), ustar;
        apply(cm, u, A1, A2, A12);
        hamiltonian(c0, u, H0, st);
        douglas(cm, ds, theta, u, A1, A2, A12, H0, ustar);
        hamiltonian(c1, ustar, H1, st);
        for (std::size_t k = 0; k < sz; ++k) Hb[k] = 0.5 * (H0[k] + H1[k]);
        douglas(cm, ds, theta, u, A1, A2, A12, Hb, u);
        for (double v : u) {
            if (!std::isfinite(v)) throw NumericalError("pde: solution became non-finite");
        }
    }

    double gradient_max(const TimeCoeffs& c, const std::vector<double>& u) const {
        double m = 0.0;
        double z[8];
        for (std::size_t l = 1; l < NY(); ++l) {
            for (std::size_t j = 1; j < NX(); ++j) {
                double p[2];
                gradient(u, j, l, p);
                m = std::max(m, model.zvec(c, p, z));
            }
        }
        return m;
    }
};

std::vector<double> axis(double lo, double hi, int n) {
    std::vector<double> v(static_cast<std::size_t>(n) + 1);
    for (int j = 0; j <= n; ++j) v[static_cast<std::size_t>(j)] = lo + (hi - lo) * j / n;
    v.back() = hi;
    return v;
}

void validate(const PdeProblem& p) {
    if (p.dim < 1 || p.dim > 2) throw ConfigError("pde: dimension must be 1 or 2");
    if (p.noise_dim < 1 || p.noise_dim > 8) throw ConfigError("pde: noise dimension must be in [1, 8]");
    if (!(p.T > 0.0) || !std::isfinite(p.T)) throw ConfigError("pde: T must be positive");
    if (p.nx < 4) throw ConfigError("pde: nx must be >= 4");
    if (p.nt < 1) throw ConfigError("pde: nt must be >= 1");
    if (!p.h) throw ConfigError("pde: missing data h");
    if (!(p.theta >= 0.5 && p.theta <= 1.0)) throw ConfigError("pde: theta must be in [1/2, 1]");
    if (p.rannacher_steps < 0) throw ConfigError("pde: rannacher_steps must be >= 0");
    if (p.store_stride < 1) throw ConfigError("pde: store_stride must be >= 1");
    if (!p.lo.empty() || !p.hi.empty()) {
        if (p.lo.size() != static_cast<std::size_t>(p.dim) || p.hi.size() != static_cast<std::size_t>(p.dim)) {
            throw ConfigError("pde: box bounds must match the dimension");
        }
        for (int i = 0; i < p.dim; ++i) {
            if (!(p.lo[static_cast<std::size_t>(i)] < p.hi[static_cast<std::size_t>(i)])) throw ConfigError("pde: box needs lo < hi");
        }
    }
    if (!p.probe.empty() && p.probe.size() != static_cast<std::size_t>(p.dim)) throw ConfigError("pde: probe has wrong dimension");
}

Model make_model(const PdeProblem& p, Lateral lateral) {
    Model m;
    m.dim = p.dim;
    m.n = p.noise_dim;
    m.T = p.T;
    m.terminal = p.regime == PdeRegime::cauchy_terminal || p.regime == PdeRegime::dirichlet;
    m.forward_form = p.regime == PdeRegime::heat_initial || p.regime == PdeRegime::neumann_1d;
    if (m.forward_form) m.n = p.dim;
    m.drift = p.drift;
    m.sigma = p.sigma;
    m.g = p.g;
    m.h = p.h;
    m.lateral = lateral;
    if (!m.forward_form && !m.sigma && m.n != m.dim) throw ConfigError("pde: identity sigma needs noise_dim == dim");
    return m;
}

void check_ellipticity(const PdeProblem& p, const Model& m) {
    if (!p.ellipticity) return;
    if (!(*p.ellipticity > 0.0)) throw ConfigError("pde: ellipticity constant must be positive");
    for (double t : {0.0, 0.5 * p.T, p.T}) {
        const TimeCoeffs c = m.coeffs(t);
        // smallest eigenvalue of sigma sigma^T = 2a
        double lam;
        if (p.dim == 1) {
            lam = 2.0 * c.a[0][0];
        } else {
            const double tr = c.a[0][0] + c.a[1][1];
            const double det = c.a[0][0] * c.a[1][1] - c.a[0][1] * c.a[1][0];
            lam = 2.0 * (0.5 * tr - std::sqrt(std::max(0.0, 0.25 * tr * tr - det)));
        }
        if (lam < *p.ellipticity * (1.0 - 1e-12)) {
            throw ConfigError("pde: sigma sigma^T violates the declared ellipticity at t = " + fmt(t));
        }
    }
}

double max_variance(const Model& m, double T) {
    double v = 0.0;
    for (double t : {0.0, 0.5 * T, T}) {
        const TimeCoeffs c = m.coeffs(t);
        for (int i = 0; i < m.dim; ++i) v = std::max(v, 2.0 * c.a[i][i]);
    }
    return v;
}

template <class Solver>
void march(const Solver& solver, const Model& model, const PdeProblem& p, std::vector<double> u, PdeSolution& sol) {
    const double S = p.T;
    const double ds = S / p.nt;
    const double h_min = p.dim == 1 ? sol.dx : std::min(sol.dx, sol.y[1] - sol.y[0]);
    std::vector<double> marching_times;
    std::vector<std::vector<double>> slices;
    std::vector<double> grads, vals;
    auto record = [&](double s) {
        const double t = model.time_of(s);
        marching_times.push_back(t);
        grads.push_back(solver.gradient_max(model.coeffs(t), u));
        double vm = 0.0;
        for (double v : u) vm = std::max(vm, std::abs(v));
        vals.push_back(vm);
        slices.push_back(u);
    };
    record(0.0);
    StepStats st;
    for (int k = 0; k < p.nt; ++k) {
        const double s = S * k / p.nt;
        const double theta = k < p.rannacher_steps ? 1.0 : p.theta;
        st.max_speed = 0.0;
        solver.step(s, ds, theta, u, st);
        const double cfl = ds * st.max_speed / h_min;
        sol.max_cfl = std::max(sol.max_cfl, cfl);
        if (cfl > 1.0) {
            throw NumericalError("pde: CFL violation (dt * max|dH/dp| / dx = " + fmt(cfl) + " > 1); refine the time grid");
        }
        if ((k + 1) % p.store_stride == 0 || k + 1 == p.nt) record(S * (k + 1) / p.nt);
    }
    sol.upwind_switches = st.switches;
    if (model.terminal) {
        std::reverse(marching_times.begin(), marching_times.end());
        std::reverse(slices.begin(), slices.end());
        std::reverse(grads.begin(), grads.end());
        std::reverse(vals.begin(), vals.end());
    }
    sol.times = std::move(marching_times);
    sol.u = std::move(slices);
    sol.gradient_max = std::move(grads);
    sol.value_max = std::move(vals);
    sol.dt = ds;
    sol.nt = p.nt;
    sol.probe_time = model.terminal ? 0.0 : p.T;
    sol.probe_value = sol.interpolate(model.terminal ? 0 : sol.u.size() - 1, sol.probe);
}

void attach_certificates(const PdeProblem& p, PdeSolution& sol) {
    if (p.gradient_profile) sol.gradient_certificate = gradient_monitor(sol, *p.gradient_profile);
    if (p.value_profile) sol.value_certificate = value_monitor(sol, p.value_profile->sample(sol.times));
}

PdeSolution solve_1d(const PdeProblem& p, Lateral lateral) {
    const Model model = make_model(p, lateral);
    check_ellipticity(p, model);
    PdeSolution sol;
    sol.regime = p.regime;
    sol.dim = 1;
    sol.x = axis(p.lo[0], p.hi[0], p.nx);
    sol.dx = (p.hi[0] - p.lo[0]) / p.nx;
    sol.probe = p.probe.empty() ? std::vector<double>{0.5 * (p.lo[0] + p.hi[0])} : p.probe;
    if (sol.probe[0] < p.lo[0] || sol.probe[0] > p.hi[0]) throw ConfigError("pde: probe lies outside the domain");
    Solver1D solver{model, sol.x, sol.dx};
    std::vector<double> u(sol.x.size());
    for (std::size_t j = 0; j < u.size(); ++j) {
        u[j] = p.h(std::span<const double>(&sol.x[j], 1));
        if (!std::isfinite(u[j])) throw NumericalError("pde: non-finite data h");
    }
    if (lateral == Lateral::dirichlet) {
        // residual of L h + g(T, x, h, h' sigma) next to the lateral boundary
        const TimeCoeffs c = model.coeffs(p.T);
        double res = 0.0;
        const std::size_t n = u.size() - 1;
        for (std::size_t j : {std::size_t{1}, n - 1}) {
            const double pj = (u[j + 1] - u[j - 1]) / (2.0 * sol.dx);
            const double lap = c.a[0][0] * (u[j + 1] - 2.0 * u[j] + u[j - 1]) / (sol.dx * sol.dx);
            res = std::max(res, std::abs(lap + model.H(c, &sol.x[j], u[j], &pj)));
        }
        sol.compatibility_residual = res;
    }
    march(solver, model, p, std::move(u), sol);
    return sol;
}

PdeSolution solve_2d(const PdeProblem& p) {
    const Model model = make_model(p, Lateral::extrapolate);
    check_ellipticity(p, model);
    PdeSolution sol;
    sol.regime = p.regime;
    sol.dim = 2;
    sol.x = axis(p.lo[0], p.hi[0], p.nx);
    sol.y = axis(p.lo[1], p.hi[1], p.nx);
    sol.dx = (p.hi[0] - p.lo[0]) / p.nx;
    sol.probe = p.probe.empty() ? std::vector<double>{0.0, 0.0} : p.probe;
    for (int i = 0; i < 2; ++i) {
        if (sol.probe[static_cast<std::size_t>(i)] < p.lo[static_cast<std::size_t>(i)] ||
            sol.probe[static_cast<std::size_t>(i)] > p.hi[static_cast<std::size_t>(i)]) {
            throw ConfigError("pde: probe lies outside the domain");
        }
    }
    Solver2D solver{model, sol.x, sol.y, sol.dx, (p.hi[1] - p.lo[1]) / p.nx};
    std::vector<double> u(sol.x.size() * sol.y.size());
    for (std::size_t l = 0; l < sol.y.size(); ++l) {
        for (std::size_t j = 0; j < sol.x.size(); ++j) {
            const double xy[2] = {sol.x[j], sol.y[l]};
            const double v = p.h(std::span<const double>(xy, 2));
            if (!std::isfinite(v)) throw NumericalError("pde: non-finite data h");
            u[solver.id(j, l)] = v;
        }
    }
    march(solver, model, p, std::move(u), sol);
    return sol;
}

}  // namespace

double PdeSolution::interpolate(std::size_t slice, std::span<const double> point) const {
    if (slice >= u.size()) throw std::invalid_argument("interpolate: slice out of range");
    if (point.size() != static_cast<std::size_t>(dim)) throw std::invalid_argument("interpolate: point has wrong dimension");
    auto locate = [](const std::vector<double>& ax, double v, std::size_t& i, double& w) {
        if (v <= ax.front()) { i = 0; w = 0.0; return; }
        if (v >= ax.back()) { i = ax.size() - 2; w = 1.0; return; }
        i = static_cast<std::size_t>(std::upper_bound(ax.begin(), ax.end(), v) - ax.begin()) - 1;
        if (i >= ax.size() - 1) i = ax.size() - 2;
        w = (v - ax[i]) / (ax[i + 1] - ax[i]);
    };
    const auto& s = u[slice];
    std::size_t i;
    double wx;
    locate(x, point[0], i, wx);
    if (dim == 1) return (1.0 - wx) * s[i] + wx * s[i + 1];
    std::size_t l;
    double wy;
    locate(y, point[1], l, wy);
    const std::size_t nxp = x.size();
    return (1.0 - wx) * (1.0 - wy) * s[l * nxp + i] + wx * (1.0 - wy) * s[l * nxp + i + 1] +
           (1.0 - wx) * wy * s[(l + 1) * nxp + i] + wx * wy * s[(l + 1) * nxp + i + 1];
}

std::size_t PdeSolution::slice_at(double t) const {
    std::size_t best = 0;
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (std::abs(times[k] - t) < std::abs(times[best] - t)) best = k;
    }
    return best;
}

PdeSolution solve_cauchy(const PdeProblem& p_in) {
    if (p_in.regime != PdeRegime::cauchy_terminal && p_in.regime != PdeRegime::heat_initial) {
        throw ConfigError("solve_cauchy: regime must be cauchy or heat");
    }
    validate(p_in);
    PdeProblem p = p_in;
    if (p.probe.empty()) p.probe.assign(static_cast<std::size_t>(p.dim), 0.0);
    if (p.lo.empty()) {
        const Model model = make_model(p, Lateral::extrapolate);
        const double half = 4.0 * std::sqrt(2.0 * max_variance(model, p.T) * p.T);
        for (int i = 0; i < p.dim; ++i) {
            p.lo.push_back(p.probe[static_cast<std::size_t>(i)] - half);
            p.hi.push_back(p.probe[static_cast<std::size_t>(i)] + half);
        }
    }
    PdeSolution sol = p.dim == 1 ? solve_1d(p, Lateral::extrapolate) : solve_2d(p);
    if (p.boundary_check) {
        PdeProblem wide = p;
        wide.boundary_check = false;
        wide.gradient_profile.reset();
        wide.value_profile.reset();
        wide.store_stride = p.nt;
        wide.nx = 2 * p.nx;
        for (int i = 0; i < p.dim; ++i) {
            const std::size_t ii = static_cast<std::size_t>(i);
            const double c = p.probe[ii];
            const double lo = c - 2.0 * (c - p.lo[ii]);
            const double hi = c + 2.0 * (p.hi[ii] - c);
            wide.lo[ii] = lo;
            wide.hi[ii] = hi;
        }
        const PdeSolution w = p.dim == 1 ? solve_1d(wide, Lateral::extrapolate) : solve_2d(wide);
        sol.boundary_influence = std::abs(w.probe_value - sol.probe_value);
        if (*sol.boundary_influence > p.boundary_tolerance) {
            throw NumericalError("pde: artificial boundary too close (doubling the box moves the probe value by " +
                                 fmt(*sol.boundary_influence) + ")");
        }
    }
    attach_certificates(p, sol);
    return sol;
}

PdeSolution solve_dirichlet(const PdeProblem& p_in) {
    if (p_in.regime != PdeRegime::dirichlet) throw ConfigError("solve_dirichlet: regime must be dirichlet");
    validate(p_in);
    if (p_in.dim != 1) throw ConfigError("solve_dirichlet: only intervals are supported");
    if (p_in.lo.empty()) throw ConfigError("solve_dirichlet: the interval [lo, hi] is required");
    PdeSolution sol = solve_1d(p_in, Lateral::dirichlet);
    attach_certificates(p_in, sol);
    return sol;
}

PdeSolution solve_neumann_1d(const PdeProblem& p_in) {
    if (p_in.regime != PdeRegime::neumann_1d) throw ConfigError("solve_neumann_1d: regime must be neumann");
    validate(p_in);
    if (p_in.dim != 1) throw ConfigError("solve_neumann_1d: only intervals are supported");
    if (p_in.lo.empty()) throw ConfigError("solve_neumann_1d: the interval [lo, hi] is required");
    PdeSolution sol = solve_1d(p_in, Lateral::neumann);
    attach_certificates(p_in, sol);
    return sol;
}

PdeSolution solve_pde(const PdeProblem& p) {
    switch (p.regime) {
        case PdeRegime::cauchy_terminal:
        case PdeRegime::heat_initial: return solve_cauchy(p);
        case PdeRegime::dirichlet: return solve_dirichlet(p);
        case PdeRegime::neumann_1d: return solve_neumann_1d(p);
    }
    throw ConfigError("solve_pde: unknown regime");
}

namespace {

PdeCertificate monitor(const PdeSolution& sol, const SampledProfile& profile, const std::vector<double>& observed) {
    if (profile.times.size() != sol.times.size() || profile.values.size() != sol.times.size()) {
        throw std::invalid_argument("monitor: profile is not sampled on the solution times");
    }
    for (std::size_t k = 0; k < sol.times.size(); ++k) {
        if (std::abs(profile.times[k] - sol.times[k]) > 1e-12 * std::max(1.0, std::abs(sol.times[k]))) {
            throw std::invalid_argument("monitor: profile times differ from the solution times");
        }
    }
    PdeCertificate c;
    c.worst_excess = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < sol.times.size(); ++k) {
        const double b = profile.values[k];
        const double slack = sol.dx * std::max(1.0, std::abs(b));
        const double excess = observed[k] - b;
        c.times.push_back(sol.times[k]);
        c.observed.push_back(observed[k]);
        c.bound.push_back(b);
        c.slack.push_back(slack);
        if (excess > slack) c.pass = false;
        if (excess > c.worst_excess) {
            c.worst_excess = excess;
            c.worst_slice = static_cast<int>(k);
        }
    }
    return c;
}

}  // namespace

PdeCertificate gradient_monitor(const PdeSolution& sol, const SampledProfile& profile) {
    return monitor(sol, profile, sol.gradient_max);
}

PdeCertificate gradient_monitor(const PdeSolution& sol, const BoundProfile& profile) {
    return monitor(sol, profile.sample(sol.times), sol.gradient_max);
}

PdeCertificate value_monitor(const PdeSolution& sol, const SampledProfile& profile) {
    return monitor(sol, profile, sol.value_max);
}

void write_pde_csv(std::ostream& out, const PdeSolution& sol) {
    out << kCsvVersionLine << '\n';
    out << (sol.dim == 1 ? "time,x,u\n" : "time,x,y,u\n");
    for (std::size_t k = 0; k < sol.times.size(); ++k) {
        const auto& s = sol.u[k];
        if (sol.dim == 1) {
            for (std::size_t j = 0; j < sol.x.size(); ++j) out << fmt(sol.times[k]) << ',' << fmt(sol.x[j]) << ',' << fmt(s[j]) << '\n';
        } else {
            for (std::size_t l = 0; l < sol.y.size(); ++l) {
                for (std::size_t j = 0; j < sol.x.size(); ++j) {
                    out << fmt(sol.times[k]) << ',' << fmt(sol.x[j]) << ',' << fmt(sol.y[l]) << ','
                        << fmt(s[l * sol.x.size() + j]) << '\n';
                }
            }
        }
    }
    double gmax = 0.0;
    for (double g : sol.gradient_max) gmax = std::max(gmax, g);
    std::string cert = "none";
    if (sol.gradient_certificate || sol.value_certificate) {
        const bool ok = (!sol.gradient_certificate || sol.gradient_certificate->pass) &&
                        (!sol.value_certificate || sol.value_certificate->pass);
        cert = ok ? "PASS" : "FAIL";
    }
    out << "# summary,probe_time=" << fmt(sol.probe_time) << ",probe_value=" << fmt(sol.probe_value)
        << ",gradient_max=" << fmt(gmax) << ",upwind_switches=" << sol.upwind_switches << ",certificate=" << cert << '\n';
}

}  // namespace bsdelab
