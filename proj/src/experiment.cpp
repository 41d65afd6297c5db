#include "bsdelab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "bsdelab/csv.hpp"
#include "bsdelab/errors.hpp"

namespace bsdelab {

using nlohmann::json;

std::string to_string(Regime regime) {
    switch (regime) {
        case Regime::cauchy: return "cauchy";
        case Regime::dirichlet: return "dirichlet";
        case Regime::neumann: return "neumann";
        case Regime::non_markovian: return "non-markovian";
    }
    return "unknown";
}

namespace {

// ---------------------------------------------------------------------------
// JSON access with schema errors

void allow_keys(const json& obj, const std::set<std::string>& keys, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [k, v] : obj.items()) {
        if (!keys.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
    }
}

double number(const json& v, const std::string& where) {
    if (!v.is_number()) throw ConfigError(where + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(where + ": expected a finite number");
    return d;
}

double num_or(const json& obj, const std::string& key, double fallback, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    return number(obj.at(key), where + "." + key);
}

std::optional<double> num_opt(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) return std::nullopt;
    return number(obj.at(key), where + "." + key);
}

long long integer(const json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
    return v.get<long long>();
}

int int_or(const json& obj, const std::string& key, int fallback, const std::string& where, int lo = 1) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    const long long v = integer(obj.at(key), where + "." + key);
    if (v < lo || v > 1000000000LL) throw ConfigError(where + "." + key + ": out of range");
    return static_cast<int>(v);
}

std::string str_or(const json& obj, const std::string& key, const std::string& fallback, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    if (!obj.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
    return obj.at(key).get<std::string>();
}

bool bool_or(const json& obj, const std::string& key, bool fallback, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    if (!obj.at(key).is_boolean()) throw ConfigError(where + "." + key + ": expected true or false");
    return obj.at(key).get<bool>();
}

std::vector<double> vec(const json& v, const std::string& where) {
    if (v.is_number()) return {number(v, where)};
    if (!v.is_array()) throw ConfigError(where + ": expected a number or an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], where + "[" + std::to_string(i) + "]"));
    return out;
}

std::vector<double> vec_or(const json& obj, const std::string& key, std::vector<double> fallback, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    return vec(obj.at(key), where + "." + key);
}

const json& block(const json& obj, const std::string& key) {
    static const json empty = json::object();
    return obj.is_object() && obj.contains(key) ? obj.at(key) : empty;
}

std::string join(const std::vector<double>& v, const char* sep = ";") {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += sep;
        s += fmt(v[i]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Blocks

DriverSpec build_driver(const json& d, int n) {
    const std::string where = "driver";
    allow_keys(d, {"name", "params", "mollify"}, where);
    if (!d.contains("name")) throw ConfigError("driver: missing 'name'");
    const std::string name = str_or(d, "name", "", where);
    const json& p = block(d, "params");
    const std::string pw = where + ".params";
    DriverSpec f = [&]() -> DriverSpec {
        if (name == "linear") {
            allow_keys(p, {"a", "b", "c"}, pw);
            builtin::Linear l;
            l.a = num_or(p, "a", 0.0, pw);
            l.b = vec_or(p, "b", {}, pw);
            l.c = num_or(p, "c", 0.0, pw);
            if (!l.b.empty() && l.b.size() != static_cast<std::size_t>(n)) throw ConfigError("driver.params.b: needs one entry per Brownian component");
            return make_builtin(l, n);
        }
        if (name == "quadratic") {
            allow_keys(p, {"mu"}, pw);
            return make_builtin(builtin::Quadratic{num_or(p, "mu", 0.0, pw)}, n);
        }
        if (name == "power") {
            allow_keys(p, {"mu", "p"}, pw);
            const double e = num_or(p, "p", 1.0, pw);
            if (!(e > 0.0)) throw ConfigError("driver.params.p: must be positive");
            return make_builtin(builtin::Power{num_or(p, "mu", 0.0, pw), e}, n);
        }
        if (name == "constant") {
            allow_keys(p, {"k"}, pw);
            return make_builtin(builtin::Constant{num_or(p, "k", 0.0, pw)}, n);
        }
        throw ConfigError("driver: unknown builtin '" + name + "' (linear, quadratic, power, constant)");
    }();
    if (d.contains("mollify")) {
        const int m = int_or(d, "mollify", 1, where);
        f = mollify(f, m);
    }
    return f;
}

std::function<double(double)> build_rho(const json& r, const std::string& where) {
    allow_keys(r, {"kind", "value", "slope", "coef", "exponent"}, where);
    const std::string kind = str_or(r, "kind", "", where);
    if (kind == "constant") {
        const double v = num_or(r, "value", 0.0, where);
        if (v < 0.0) throw ConfigError(where + ".value: must be nonnegative");
        return [v](double) { return v; };
    }
    if (kind == "linear") {
        const double a = num_or(r, "slope", 0.0, where);
        if (a < 0.0) throw ConfigError(where + ".slope: must be nonnegative");
        return [a](double x) { return a * x; };
    }
    if (kind == "power") {
        const double c = num_or(r, "coef", 0.0, where);
        const double e = num_or(r, "exponent", 1.0, where);
        if (c < 0.0 || e < 0.0) throw ConfigError(where + ": coef and exponent must be nonnegative");
        return [c, e](double x) { return c * std::pow(x, e); };
    }
    throw ConfigError(where + ".kind: expected constant, linear or power");
}

IntegrableFunction build_q(const json& q, const std::string& where) {
    allow_keys(q, {"kind", "value", "scale", "rate"}, where);
    const std::string kind = str_or(q, "kind", "constant", where);
    if (kind == "constant") return IntegrableFunction::constant(num_or(q, "value", 0.0, where));
    if (kind == "exponential") return IntegrableFunction::exponential(num_or(q, "scale", 0.0, where), num_or(q, "rate", 0.0, where));
    throw ConfigError(where + ".kind: expected constant or exponential");
}

struct TerminalBuild {
    TerminalSpec spec;
    TerminalMap h;
    bool path = false;
    std::string kind;
};

TerminalBuild build_terminal(const json& t, int m, double T, int steps, const std::optional<DomainSpec>& domain,
                             const std::vector<double>& lo, const std::vector<double>& hi) {
    const std::string where = "terminal";
    allow_keys(t, {"kind", "params", "lipschitz", "bound"}, where);
    if (!t.contains("kind")) throw ConfigError("terminal: missing 'kind'");
    const std::string kind = str_or(t, "kind", "", where);
    const json& p = block(t, "params");
    const std::string pw = where + ".params";
    auto comp = [&](const json& obj) {
        const int j = int_or(obj, "component", 0, pw, 0);
        if (j >= m) throw ConfigError(pw + ".component: exceeds the state dimension");
        return static_cast<std::size_t>(j);
    };
    TerminalBuild b;
    b.kind = kind;
    double L = 0.0;
    std::optional<double> C;
    if (kind == "identity") {
        allow_keys(p, {"component"}, pw);
        const std::size_t j = comp(p);
        b.h = [j](std::span<const double> x) { return x[j]; };
        L = 1.0;
    } else if (kind == "sin") {
        allow_keys(p, {"component", "amplitude", "frequency"}, pw);
        const std::size_t j = comp(p);
        const double a = num_or(p, "amplitude", 1.0, pw), w = num_or(p, "frequency", 1.0, pw);
        b.h = [j, a, w](std::span<const double> x) { return a * std::sin(w * x[j]); };
        L = std::abs(a * w);
        C = std::abs(a);
    } else if (kind == "square") {
        allow_keys(p, {"component"}, pw);
        const std::size_t j = comp(p);
        b.h = [j](std::span<const double> x) { return x[j] * x[j]; };
        if (!lo.empty()) {
            const double r = std::max(std::abs(lo[j]), std::abs(hi[j]));
            L = 2.0 * r;
            C = r * r;
        } else if (!t.contains("lipschitz")) {
            throw ConfigError("terminal: 'square' on an unbounded domain needs an explicit 'lipschitz'");
        }
    } else if (kind == "constant") {
        allow_keys(p, {"value"}, pw);
        const double v = num_or(p, "value", 0.0, pw);
        b.h = [v](std::span<const double>) { return v; };
        C = std::abs(v);
    } else if (kind == "linear") {
        allow_keys(p, {"weights", "offset"}, pw);
        const std::vector<double> w = vec_or(p, "weights", std::vector<double>(static_cast<std::size_t>(m), 1.0), pw);
        if (w.size() != static_cast<std::size_t>(m)) throw ConfigError(pw + ".weights: needs one entry per state component");
        const double c = num_or(p, "offset", 0.0, pw);
        b.h = [w, c](std::span<const double> x) {
            double s = c;
            for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
            return s;
        };
        for (double v : w) L += std::abs(v);
    } else if (kind == "running-max") {
        allow_keys(p, {"component"}, pw);
        b.path = true;
        b.spec = TerminalSpec::of_functional(functionals::running_max(static_cast<int>(comp(p))), 1.0);
        L = 1.0;
    } else if (kind == "example-3-3") {
        allow_keys(p, {}, pw);
        if (std::abs(T - 1.0) > 1e-12) throw ConfigError("terminal: example-3-3 lives on [0, 1]");
        b.path = true;
        b.spec = TerminalSpec::of_functional(Example33::for_spacing(1.0 / steps).functional(), 1.0);
        L = 1.0;
    } else {
        throw ConfigError("terminal: unknown kind '" + kind + "' (identity, sin, square, constant, linear, running-max, example-3-3)");
    }
    if (t.contains("lipschitz")) L = number(t.at("lipschitz"), "terminal.lipschitz");
    if (t.contains("bound")) C = number(t.at("bound"), "terminal.bound");
    if (L < 0.0 || (C && *C < 0.0)) throw ConfigError("terminal: lipschitz and bound must be nonnegative");
    if (b.path) {
        b.spec.A = L;
        b.spec.C = C;
    } else {
        b.spec = TerminalSpec::of_state(b.h, L, C);
    }
    (void)domain;
    return b;
}

Expectation build_expectation(const json& e, const std::string& where) {
    allow_keys(e, {"value", "tolerance", "sigmas", "component"}, where);
    if (!e.contains("value")) throw ConfigError(where + ": missing 'value'");
    Expectation x;
    x.value = number(e.at("value"), where + ".value");
    x.tolerance = num_opt(e, "tolerance", where);
    x.sigmas = num_or(e, "sigmas", 5.0, where);
    x.component = int_or(e, "component", 0, where, 0);
    if (x.tolerance && !(*x.tolerance > 0.0)) throw ConfigError(where + ".tolerance: must be positive");
    if (!(x.sigmas > 0.0)) throw ConfigError(where + ".sigmas: must be positive");
    return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig parse_config(const json& doc) {
    allow_keys(doc, {"scenario", "regime", "seed", "constants", "driver", "terminal", "forward", "domain", "numerics",
                     "outputs", "expect", "description"},
               "config");
    ExperimentConfig cfg;
    if (!doc.contains("scenario") || !doc.at("scenario").is_string() || doc.at("scenario").get<std::string>().empty()) {
        throw ConfigError("config: 'scenario' must be a non-empty string");
    }
    cfg.scenario = doc.at("scenario").get<std::string>();
    for (char c : cfg.scenario) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
            throw ConfigError("config: scenario names use letters, digits, '-', '_' and '.' only");
        }
    }
    const std::string regime = str_or(doc, "regime", "cauchy", "config");
    if (regime == "cauchy") cfg.regime = Regime::cauchy;
    else if (regime == "dirichlet") cfg.regime = Regime::dirichlet;
    else if (regime == "neumann") cfg.regime = Regime::neumann;
    else if (regime == "non-markovian") cfg.regime = Regime::non_markovian;
    else throw ConfigError("config: regime must be cauchy, dirichlet, neumann or non-markovian");
    if (!doc.contains("seed")) throw ConfigError("config: 'seed' is mandatory");
    if (!doc.at("seed").is_number_unsigned() && !(doc.at("seed").is_number_integer() && doc.at("seed").get<long long>() >= 0)) {
        throw ConfigError("config: 'seed' must be a nonnegative integer");
    }
    cfg.seed = doc.at("seed").get<std::uint64_t>();
    if (!doc.contains("terminal")) throw ConfigError("config: 'terminal' block is mandatory");
    auto obj = [&](const char* key, json& out) {
        if (!doc.contains(key)) return;
        if (!doc.at(key).is_object()) throw ConfigError(std::string("config: '") + key + "' must be an object");
        out = doc.at(key);
    };
    obj("constants", cfg.constants);
    obj("driver", cfg.driver);
    obj("terminal", cfg.terminal);
    obj("forward", cfg.forward);
    obj("domain", cfg.domain);
    obj("numerics", cfg.numerics);
    obj("outputs", cfg.outputs);
    obj("expect", cfg.expect);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

void apply_overrides(ExperimentConfig& cfg, const Overrides& ov) {
    if (ov.seed) cfg.seed = *ov.seed;
    if (cfg.numerics.is_null()) cfg.numerics = json::object();
    if (ov.paths) cfg.numerics["paths"] = *ov.paths;
    if (ov.steps) cfg.numerics["steps"] = *ov.steps;
    if (ov.refine) cfg.numerics["refine"] = *ov.refine;
    if (ov.out) {
        if (cfg.outputs.is_null()) cfg.outputs = json::object();
        cfg.outputs["dir"] = *ov.out;
    }
}

Scenario build_scenario(const ExperimentConfig& cfg) {
    Scenario s;
    s.config = cfg;

    // numerics
    const json& nm = cfg.numerics.is_null() ? json::object() : cfg.numerics;
    allow_keys(nm, {"T", "steps", "paths", "basis", "z_basis", "scheme", "picard_iterations", "threads", "slack", "refine",
                    "tolerance", "bridge", "pde", "malliavin"},
               "numerics");
    s.T = num_or(nm, "T", 1.0, "numerics");
    if (!(s.T > 0.0)) throw ConfigError("numerics.T: must be positive");
    Numerics& n = s.numerics;
    n.steps = int_or(nm, "steps", 100, "numerics");
    {
        const long long p = nm.contains("paths") ? integer(nm.at("paths"), "numerics.paths") : 100000;
        if (p < 2) throw ConfigError("numerics.paths: at least 2 paths");
        n.paths = static_cast<std::size_t>(p);
    }
    n.lsmc.basis = str_or(nm, "basis", kDefaultBasis, "numerics");
    n.lsmc.z_basis = str_or(nm, "z_basis", "", "numerics");
    if (!has_basis(n.lsmc.basis)) throw ConfigError("numerics.basis: unknown basis '" + n.lsmc.basis + "'");
    if (!n.lsmc.z_basis.empty() && !has_basis(n.lsmc.z_basis)) throw ConfigError("numerics.z_basis: unknown basis '" + n.lsmc.z_basis + "'");
    const std::string scheme = str_or(nm, "scheme", "explicit", "numerics");
    if (scheme == "explicit") n.lsmc.scheme = BsdeScheme::explicit_step;
    else if (scheme == "picard") n.lsmc.scheme = BsdeScheme::picard;
    else throw ConfigError("numerics.scheme: expected explicit or picard");
    n.lsmc.picard_iterations = int_or(nm, "picard_iterations", 3, "numerics");
    n.lsmc.threads = int_or(nm, "threads", 0, "numerics", 0);
    {
        const json& sl = block(nm, "slack");
        allow_keys(sl, {"kappa1", "kappa2"}, "numerics.slack");
        n.lsmc.slack.kappa1 = num_or(sl, "kappa1", 1.0, "numerics.slack");
        n.lsmc.slack.kappa2 = num_or(sl, "kappa2", 1.0, "numerics.slack");
        if (n.lsmc.slack.kappa1 < 0.0 || n.lsmc.slack.kappa2 < 0.0) throw ConfigError("numerics.slack: kappas must be nonnegative");
    }
    n.refine = int_or(nm, "refine", 2, "numerics");
    n.tolerance = num_or(nm, "tolerance", 0.01, "numerics");
    if (!(n.tolerance > 0.0)) throw ConfigError("numerics.tolerance: must be positive");
    n.bridge = bool_or(nm, "bridge", true, "numerics");
    if (nm.contains("pde")) {
        const json& pj = nm.at("pde");
        const std::string w = "numerics.pde";
        allow_keys(pj, {"nx", "nt", "lo", "hi", "theta", "rannacher_steps", "boundary_tolerance", "store_stride"}, w);
        PdeSettings ps;
        ps.nx = int_or(pj, "nx", 200, w, 4);
        ps.nt = int_or(pj, "nt", 200, w);
        ps.lo = vec_or(pj, "lo", {}, w);
        ps.hi = vec_or(pj, "hi", {}, w);
        ps.theta = num_or(pj, "theta", 0.5, w);
        ps.rannacher_steps = int_or(pj, "rannacher_steps", 2, w, 0);
        ps.boundary_tolerance = num_or(pj, "boundary_tolerance", 1e-4, w);
        ps.store_stride = int_or(pj, "store_stride", 1, w);
        n.pde = ps;
    }
    if (nm.contains("malliavin")) {
        const json& mj = nm.at("malliavin");
        const std::string w = "numerics.malliavin";
        allow_keys(mj, {"paths", "positions", "amplitude", "tolerance"}, w);
        MalliavinSettings ms;
        ms.paths = static_cast<std::size_t>(int_or(mj, "paths", 10000, w, 2));
        ms.positions = int_or(mj, "positions", 20, w);
        ms.amplitude = num_or(mj, "amplitude", 1e-4, w);
        ms.tolerance = num_or(mj, "tolerance", 0.05, w);
        if (!(ms.amplitude > 0.0) || ms.tolerance < 0.0) throw ConfigError(w + ": amplitude must be positive, tolerance nonnegative");
        n.malliavin = ms;
    }

    // forward
    const json& fw = cfg.forward.is_null() ? json::object() : cfg.forward;
    allow_keys(fw, {"x0", "drift", "sigma", "reflection"}, "forward");
    s.x0 = vec_or(fw, "x0", {0.0}, "forward");
    const int m = static_cast<int>(s.x0.size());
    if (m < 1 || m > 8) throw ConfigError("forward.x0: state dimension must be in [1, 8]");
    std::vector<double> drift = vec_or(fw, "drift", std::vector<double>(static_cast<std::size_t>(m), 0.0), "forward");
    if (drift.size() != static_cast<std::size_t>(m)) throw ConfigError("forward.drift: needs one entry per state component");
    int noise = m;
    const bool neumann = cfg.regime == Regime::neumann;
    if (fw.contains("sigma")) {
        const json& sg = fw.at("sigma");
        if (sg.is_number()) {
            const double v = number(sg, "forward.sigma");
            s.sigma.assign(static_cast<std::size_t>(m * m), 0.0);
            for (int j = 0; j < m; ++j) s.sigma[static_cast<std::size_t>(j * m + j)] = v;
        } else if (sg.is_array() && sg.size() == static_cast<std::size_t>(m)) {
            noise = -1;
            for (std::size_t j = 0; j < sg.size(); ++j) {
                const std::vector<double> row = vec(sg[j], "forward.sigma[" + std::to_string(j) + "]");
                if (noise < 0) noise = static_cast<int>(row.size());
                if (row.size() != static_cast<std::size_t>(noise) || noise < 1 || noise > 8) {
                    throw ConfigError("forward.sigma: rows must have equal length in [1, 8]");
                }
                s.sigma.insert(s.sigma.end(), row.begin(), row.end());
            }
        } else {
            throw ConfigError("forward.sigma: expected a number or an m x n matrix");
        }
    } else {
        const double v = neumann ? std::sqrt(2.0) : 1.0;
        s.sigma.assign(static_cast<std::size_t>(m * m), 0.0);
        for (int j = 0; j < m; ++j) s.sigma[static_cast<std::size_t>(j * m + j)] = v;
    }
    s.dynamics = Dynamics::constant_coefficients(m, noise, drift, s.sigma);
    const std::string refl = str_or(fw, "reflection", "symmetric", "forward");
    if (refl == "symmetric") s.reflection = ReflectionScheme::symmetric;
    else if (refl == "projection") s.reflection = ReflectionScheme::projection;
    else throw ConfigError("forward.reflection: expected symmetric or projection");
    s.reflected = neumann;

    // domain
    std::vector<double> lo, hi;
    if (!cfg.domain.is_null()) {
        const json& d = cfg.domain;
        allow_keys(d, {"kind", "lo", "hi", "center", "radius", "exterior_sphere_radius", "cone_delta", "cone_epsilon"}, "domain");
        const std::string kind = str_or(d, "kind", "whole", "domain");
        if (kind == "interval" || kind == "box") {
            lo = vec_or(d, "lo", {}, "domain");
            hi = vec_or(d, "hi", {}, "domain");
            if (lo.size() != static_cast<std::size_t>(m) || hi.size() != static_cast<std::size_t>(m)) {
                throw ConfigError("domain: lo and hi need one entry per state component");
            }
            for (int j = 0; j < m; ++j) {
                if (!(lo[static_cast<std::size_t>(j)] < hi[static_cast<std::size_t>(j)])) throw ConfigError("domain: lo < hi required");
            }
            s.domain = m == 1 ? DomainSpec::interval(lo[0], hi[0]) : DomainSpec::box(lo, hi);
        } else if (kind == "ball") {
            const std::vector<double> c = vec_or(d, "center", std::vector<double>(static_cast<std::size_t>(m), 0.0), "domain");
            if (c.size() != static_cast<std::size_t>(m)) throw ConfigError("domain.center: wrong dimension");
            const double r = num_or(d, "radius", 1.0, "domain");
            if (!(r > 0.0)) throw ConfigError("domain.radius: must be positive");
            s.domain = DomainSpec::ball(c, r);
        } else if (kind == "whole") {
            s.domain = DomainSpec::whole_space(m);
        } else {
            throw ConfigError("domain.kind: expected whole, interval, box or ball");
        }
        s.domain->metadata.exterior_sphere_radius = num_opt(d, "exterior_sphere_radius", "domain");
        s.domain->metadata.cone_delta = num_opt(d, "cone_delta", "domain");
        s.domain->metadata.cone_epsilon = num_opt(d, "cone_epsilon", "domain");
    }

    // regime consistency
    switch (cfg.regime) {
        case Regime::cauchy:
            if (s.domain && s.domain->kind() != DomainSpec::Kind::whole_space) throw ConfigError("cauchy regime: domain must be the whole space");
            if (m > 2 && n.pde) throw ConfigError("cauchy regime: the PDE solver supports one or two dimensions");
            break;
        case Regime::dirichlet:
            if (!s.domain || s.domain->kind() == DomainSpec::Kind::whole_space) throw ConfigError("dirichlet regime: a bounded domain is required");
            if (n.pde && (m != 1 || lo.empty())) throw ConfigError("dirichlet regime: the PDE solver needs an interval");
            break;
        case Regime::neumann:
            if (!s.domain || s.domain->kind() == DomainSpec::Kind::whole_space) throw ConfigError("neumann regime: a bounded domain is required");
            if (n.pde && (m != 1 || lo.empty())) throw ConfigError("neumann regime: the PDE solver needs an interval");
            break;
        case Regime::non_markovian:
            if (n.pde) throw ConfigError("non-markovian regime: no PDE counterpart");
            break;
    }
    if (s.domain && !s.domain->contains_closed(s.x0, 1e-12)) throw ConfigError("forward.x0: outside the domain");

    // terminal
    TerminalBuild tb = build_terminal(cfg.terminal, m, s.T, n.steps, s.domain, lo, hi);
    s.terminal = tb.spec;
    s.h = tb.h;
    s.path_terminal = tb.path;
    s.terminal_kind = tb.kind;
    if (tb.path && cfg.regime != Regime::non_markovian) throw ConfigError("terminal: path functionals need the non-markovian regime");
    if (tb.path && (m != noise)) throw ConfigError("terminal: path functionals read the Brownian path; use a state dimension equal to the noise dimension");

    // driver
    if (!cfg.driver.is_null()) s.driver = build_driver(cfg.driver, noise);
    if (neumann && s.driver && n.pde && fw.contains("sigma")) {
        if (m != 1 || std::abs(s.sigma[0] - std::sqrt(2.0)) > 1e-12) {
            throw ConfigError("neumann regime: u_t = u_xx + g couples to sigma = sqrt(2); omit forward.sigma");
        }
    }

    // constants
    if (!cfg.constants.is_null()) {
        const json& c = cfg.constants;
        const std::string w = "constants";
        allow_keys(c, {"A", "B", "rho", "C", "D", "E", "F", "G", "H", "M", "ellipticity", "q"}, w);
        BoundConstants bc;
        bc.T = s.T;
        bc.n = noise;
        bc.m = m;
        bc.A = vec_or(c, "A", std::vector<double>(static_cast<std::size_t>(noise), s.terminal.A), w);
        if (bc.A.size() == 1 && noise > 1) bc.A.assign(static_cast<std::size_t>(noise), bc.A[0]);
        const DriverMetadata* md = s.driver ? &s.driver->metadata() : nullptr;
        bc.B = num_or(c, "B", md && md->B ? *md->B : 0.0, w);
        if (c.contains("rho")) {
            bc.rho = build_rho(c.at("rho"), w + ".rho");
        } else if (md && md->rho) {
            bc.rho = md->rho;
        } else {
            bc.rho = [](double) { return 0.0; };
        }
        bc.C = num_opt(c, "C", w);
        if (!bc.C) bc.C = s.terminal.C;
        bc.D = num_opt(c, "D", w);
        if (!bc.D && md) bc.D = md->D;
        bc.E = num_opt(c, "E", w);
        bc.F = num_opt(c, "F", w);
        bc.G = num_opt(c, "G", w);
        bc.H = num_opt(c, "H", w);
        bc.M = num_opt(c, "M", w);
        bc.ellipticity = num_opt(c, "ellipticity", w);
        if (c.contains("q")) {
            const json& q = c.at("q");
            if (!q.is_array()) throw ConfigError("constants.q: expected an array");
            for (std::size_t i = 0; i < q.size(); ++i) bc.q.push_back(build_q(q[i], w + ".q[" + std::to_string(i) + "]"));
        }
        if (s.domain) bc.domain = s.domain->metadata;
        try {
            bc.validate();
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("constants: ") + e.what());
        }
        s.constants = bc;
    }
    if (s.driver && !s.driver->globally_lipschitz() && !s.constants) {
        throw ConfigError("driver '" + s.driver->name() + "' is not globally Lipschitz; a constants block is needed to truncate it");
    }
    if (cfg.regime == Regime::dirichlet && s.driver && !s.constants) {
        throw ConfigError("dirichlet regime: a constants block is needed for the random-terminal-time solver");
    }
    if (n.pde && !s.driver) throw ConfigError("numerics.pde: a driver is needed for the PDE nonlinearity");

    // outputs
    const json& out = cfg.outputs.is_null() ? json::object() : cfg.outputs;
    allow_keys(out, {"dir", "probe"}, "outputs");
    s.out_dir = str_or(out, "dir", "out/" + cfg.scenario, "outputs");
    s.probe = vec_or(out, "probe", s.x0, "outputs");
    if (s.probe.size() != static_cast<std::size_t>(m)) throw ConfigError("outputs.probe: wrong dimension");
    if (s.probe != s.x0 && s.driver && n.pde) {
        throw ConfigError("outputs.probe: the BSDE value is computed at x0, so the probe must equal forward.x0");
    }

    // expectations
    if (!cfg.expect.is_null()) {
        allow_keys(cfg.expect, {"Y0", "pde", "variance", "terminal_mean", "terminal_variance"}, "expect");
        for (const auto& [k, v] : cfg.expect.items()) s.expect[k] = build_expectation(v, "expect." + k);
        if (s.expect.count("Y0") && !s.driver) throw ConfigError("expect.Y0: needs a driver");
        if (s.expect.count("pde") && !n.pde) throw ConfigError("expect.pde: needs numerics.pde");
        for (const char* k : {"terminal_mean", "terminal_variance"}) {
            if (s.expect.count(k) && s.expect.at(k).component >= m) throw ConfigError(std::string("expect.") + k + ".component: out of range");
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Reports

int Report::exit_code() const {
    for (const auto& c : checks) {
        if (!c.pass) return kExitCheckFailed;
    }
    return kExitPass;
}

void Report::add(std::string name, bool pass, std::string detail) {
    checks.push_back({std::move(name), pass, std::move(detail)});
}

void Report::note(std::string key, std::string value) { summary.emplace_back(std::move(key), std::move(value)); }

std::string format_summary(const Report& r) {
    std::ostringstream os;
    for (const auto& [k, v] : r.summary) os << k << " = " << v << '\n';
    for (const auto& c : r.checks) os << "check " << c.name << ": " << (c.pass ? "PASS" : "FAIL") << " (" << c.detail << ")\n";
    os << "status = " << (r.exit_code() == kExitPass ? "PASS" : "FAIL") << '\n';
    return os.str();
}

void write_report(const Report& r, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, body] : r.files) {
        std::ofstream out(std::filesystem::path(dir) / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (std::filesystem::path(dir) / name).string());
        out << body;
    }
    std::ofstream out(std::filesystem::path(dir) / "summary.txt", std::ios::binary);
    out << format_summary(r);
}

// ---------------------------------------------------------------------------
// Stages

namespace {

void merge(Report& into, Report&& from) {
    for (auto& c : from.checks) into.checks.push_back(std::move(c));
    for (auto& s : from.summary) into.summary.push_back(std::move(s));
    for (auto& [k, v] : from.files) into.files[k] = std::move(v);
}

PathEnsemble simulate(const Scenario& s, int steps, std::size_t paths) {
    const TimeGrid grid = TimeGrid::uniform(0.0, s.T, steps);
    const int threads = s.numerics.lsmc.threads;
    if (s.reflected) {
        ReflectionOptions ro;
        ro.scheme = s.reflection;
        ro.threads = threads;
        return simulate_reflected(*s.domain, s.dynamics, s.x0, grid, paths, s.config.seed, ro);
    }
    SimulationOptions so;
    so.threads = threads;
    PathEnsemble ens = simulate_paths(s.dynamics, s.x0, grid, paths, s.config.seed, so);
    if (s.config.regime == Regime::dirichlet) {
        ExitOptions eo;
        eo.bridge = s.numerics.bridge;
        eo.diffusion = s.dynamics.diffusion;
        eo.threads = threads;
        ens = exit_time(std::move(ens), *s.domain, eo);
    }
    return ens;
}

BsdeSolution solve_bsde(const Scenario& s, const PathEnsemble& ens) {
    const DriverSpec& f = *s.driver;
    if (s.config.regime == Regime::dirichlet) return solve_random_terminal(f, s.terminal, *s.constants, ens, s.numerics.lsmc);
    if (s.constants) return solve_truncated(f, s.terminal, *s.constants, ens, s.numerics.lsmc);
    return solve_lsmc(f, s.terminal, ens, s.numerics.lsmc);
}

PdeProblem pde_problem(const Scenario& s, int level) {
    const PdeSettings& ps = *s.numerics.pde;
    PdeProblem p;
    const int m = static_cast<int>(s.x0.size());
    p.dim = m;
    p.noise_dim = s.dynamics.noise_dim;
    p.T = s.T;
    p.nx = ps.nx << level;
    p.nt = ps.nt << level;
    p.theta = ps.theta;
    p.rannacher_steps = ps.rannacher_steps;
    p.boundary_tolerance = ps.boundary_tolerance;
    p.store_stride = (ps.store_stride << level);
    p.probe = s.probe;
    p.h = s.h;
    const DriverSpec f = *s.driver;
    const std::vector<double> sigma = s.sigma;
    const int n = s.dynamics.noise_dim;
    const DriftFn drift = s.dynamics.drift;
    switch (s.config.regime) {
        case Regime::cauchy:
            p.regime = PdeRegime::cauchy_terminal;
            p.lo = ps.lo;
            p.hi = ps.hi;
            break;
        case Regime::dirichlet:
            p.regime = PdeRegime::dirichlet;
            break;
        case Regime::neumann:
            p.regime = PdeRegime::neumann_1d;
            break;
        case Regime::non_markovian:
            throw ConfigError("non-markovian regime: no PDE counterpart");
    }
    if (p.regime != PdeRegime::cauchy_terminal) {
        const auto& nrm = s.domain->normals();
        const auto& off = s.domain->offsets();
        // interval {x < d} and {-x < -c}
        double lo = -1e300, hi = 1e300;
        for (std::size_t j = 0; j < nrm.size(); ++j) {
            if (nrm[j][0] > 0) hi = std::min(hi, off[j] / nrm[j][0]);
            else lo = std::max(lo, off[j] / nrm[j][0]);
        }
        p.lo = {lo};
        p.hi = {hi};
    }
    if (p.regime == PdeRegime::neumann_1d) {
        const double T = s.T;
        p.g = [f, T](double t, std::span<const double> x, double u, std::span<const double> z) {
            const double zz = std::sqrt(2.0) * z[0];
            return f(T - t, x, u, std::span<const double>(&zz, 1));
        };
    } else {
        p.drift = drift;
        p.sigma = [sigma](double, std::span<double> out) { std::copy(sigma.begin(), sigma.end(), out.begin()); };
        p.g = [f](double t, std::span<const double> x, double u, std::span<const double> z) { return f(t, x, u, z); };
    }
    (void)n;
    if (s.constants) {
        const BoundConstants& c = *s.constants;
        p.ellipticity = c.ellipticity;
        const GradientRegime gr = p.regime == PdeRegime::cauchy_terminal ? GradientRegime::cauchy
                                  : p.regime == PdeRegime::dirichlet     ? GradientRegime::dirichlet
                                                                         : GradientRegime::neumann_1d;
        try {
            p.gradient_profile = gradient_bound_profile(c, gr);
        } catch (const std::invalid_argument&) {
            // constants do not determine a gradient bound for this regime
        }
        if (c.C && c.D) {
            const BoundProfile y = y_bound_profile(c, false).profile;
            p.value_profile = p.regime == PdeRegime::neumann_1d ? y.reversed(s.T) : y;
        }
    }
    return p;
}

void certificate_checks(Report& r, const BsdeSolution& sol) {
    if (!sol.certificate) return;
    const BoundCertificate& c = *sol.certificate;
    std::ostringstream d;
    d << "worst excess " << fmt(c.worst_excess) << " at node " << c.worst_node << " component " << c.worst_component
      << ", slack " << fmt(c.slack) << ", z tightness " << fmt(c.z_tightness) << (c.z_tight ? " (tight)" : "");
    r.add("bsde-certificate", c.pass, d.str());
    r.note("bsde_z_tightness", fmt(c.z_tightness));
    r.note("bsde_z_tight", c.z_tight ? "yes" : "no");
}

void pde_certificate_checks(Report& r, const PdeSolution& sol) {
    auto one = [&](const char* name, const std::optional<PdeCertificate>& c) {
        if (!c) return;
        std::ostringstream d;
        d << "worst excess " << fmt(c->worst_excess) << " at slice " << c->worst_slice;
        r.add(name, c->pass, d.str());
    };
    one("pde-gradient-certificate", sol.gradient_certificate);
    one("pde-value-certificate", sol.value_certificate);
}

void expect_check(Report& r, const Scenario& s, const std::string& key, double observed, double se) {
    auto it = s.expect.find(key);
    if (it == s.expect.end()) return;
    const Expectation& e = it->second;
    const double diff = std::abs(observed - e.value);
    const double tol = e.tolerance ? *e.tolerance : e.sigmas * se;
    std::ostringstream d;
    d << "observed " << fmt(observed) << ", expected " << fmt(e.value) << ", |diff| " << fmt(diff) << " < " << fmt(tol);
    r.add("expect-" + key, diff < tol, d.str());
}

std::string csv_ensemble_summary(const PathEnsemble& ens) {
    std::ostringstream os;
    os << kCsvVersionLine << '\n' << "time,component,mean,std,alive_fraction\n";
    const std::size_t P = ens.paths;
    for (int k = 0; k <= ens.grid.steps(); ++k) {
        std::size_t alive = P;
        if (ens.has_tau()) {
            alive = 0;
            for (std::size_t p = 0; p < P; ++p) alive += k < ens.tau[p] ? 1 : 0;
        }
        for (int j = 0; j < ens.state_dim; ++j) {
            double mean = 0.0, sq = 0.0;
            for (std::size_t p = 0; p < P; ++p) mean += ens.x(p, k)[static_cast<std::size_t>(j)];
            mean /= static_cast<double>(P);
            for (std::size_t p = 0; p < P; ++p) {
                const double d = ens.x(p, k)[static_cast<std::size_t>(j)] - mean;
                sq += d * d;
            }
            os << fmt(ens.grid.node(k)) << ',' << j << ',' << fmt(mean) << ',' << fmt(std::sqrt(sq / static_cast<double>(P > 1 ? P - 1 : 1)))
               << ',' << fmt(static_cast<double>(alive) / static_cast<double>(P)) << '\n';
        }
    }
    return os.str();
}

// mean, variance and their standard errors
struct Moments {
    double mean = 0.0, mean_se = 0.0, var = 0.0, var_se = 0.0;
};

Moments moments(const std::vector<double>& v) {
    Moments m;
    const double n = static_cast<double>(v.size());
    for (double x : v) m.mean += x;
    m.mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double x : v) {
        const double d = x - m.mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    m.var = m2 * n / (n - 1.0);
    m.mean_se = std::sqrt(m.var / n);
    m.var_se = std::sqrt(std::max(0.0, m4 - m2 * m2) / n);
    return m;
}

void forward_checks(Report& r, const Scenario& s, const PathEnsemble& ens) {
    for (const char* key : {"terminal_mean", "terminal_variance"}) {
        auto it = s.expect.find(key);
        if (it == s.expect.end()) continue;
        std::vector<double> v(ens.paths);
        const int N = ens.grid.steps();
        for (std::size_t p = 0; p < ens.paths; ++p) v[p] = ens.x(p, N)[static_cast<std::size_t>(it->second.component)];
        const Moments mo = moments(v);
        const bool mean = std::string(key) == "terminal_mean";
        r.note(key, fmt(mean ? mo.mean : mo.var));
        expect_check(r, s, key, mean ? mo.mean : mo.var, mean ? mo.mean_se : mo.var_se);
    }
    if (s.expect.count("variance")) {
        const std::vector<double> xi = s.terminal.sample(ens, ens.has_tau());
        const Moments mo = moments(xi);
        r.note("terminal_variance_xi", fmt(mo.var));
        r.note("terminal_variance_xi_se", fmt(mo.var_se));
        expect_check(r, s, "variance", mo.var, mo.var_se);
    }
}

PathFunctional malliavin_functional(const Scenario& s) {
    if (s.path_terminal) return s.terminal.functional;
    if (s.x0.size() != 1) throw ConfigError("malliavin-check: state terminals are supported in one dimension");
    PathFunctional base = s.reflected ? functionals::reflected_terminal(*s.domain, s.dynamics, s.x0, 0, s.reflection)
                                      : functionals::forward_terminal(s.dynamics, s.x0, 0);
    const TerminalMap h = s.h;
    return [base, h](const TimeGrid& g, std::span<const double> dW, int n) {
        const double x = base(g, dW, n);
        return h(std::span<const double>(&x, 1));
    };
}

Report bsde_stage(const Scenario& s, const PathEnsemble& ens, BsdeSolution* keep = nullptr) {
    Report r;
    BsdeSolution sol = solve_bsde(s, ens);
    r.note("Y0", fmt(sol.Y0));
    r.note("Y0_stderr", fmt(sol.Y0_stderr));
    if (sol.Q) r.note("truncation_Q", fmt(*sol.Q));
    if (sol.R) r.note("truncation_R", fmt(*sol.R));
    double zmax = 0.0;
    for (int k = 0; k < sol.grid.steps(); ++k) {
        for (int i = 0; i < sol.noise_dim; ++i) zmax = std::max(zmax, sol.max_abs_z(k, i));
    }
    r.note("max_abs_Z", fmt(zmax));
    certificate_checks(r, sol);
    expect_check(r, s, "Y0", sol.Y0, sol.Y0_stderr);
    std::ostringstream os;
    write_bsde_csv(os, sol);
    r.files["bsde.csv"] = os.str();
    if (keep) *keep = std::move(sol);
    return r;
}

Report driver_probe_stage(const Scenario& s) {
    Report r;
    if (!s.driver || !s.constants) return r;
    const double Q = q_radius(*s.constants);
    std::optional<double> R;
    if (s.constants->C && s.constants->D) R = y_bound_profile(*s.constants, s.config.regime == Regime::dirichlet).radius;
    const DriverSpec tf = R ? truncate_yz(*s.driver, *R, Q) : truncate_z(*s.driver, Q);
    ProbeRegion region;
    region.t = {0.0, s.T};
    for (double x : s.x0) region.x.emplace_back(x - 1.0, x + 1.0);
    const double yr = 1.5 * (R ? *R : 1.0);
    region.y = {-yr, yr};
    for (int i = 0; i < s.dynamics.noise_dim; ++i) region.z.emplace_back(-1.5 * Q, 1.5 * Q);
    const ProbeReport pr = lipschitz_probe(tf, region, 2000, s.config.seed);
    std::string detail = "B " + fmt(pr.B) + ", rho " + fmt(pr.rho) + " (declared " + fmt(pr.rho_declared) + ")";
    for (const auto& v : pr.violations) detail += "; " + v;
    r.add("driver-probe", pr.ok(), detail);
    return r;
}

}  // namespace

Report run_bounds(const Scenario& s) {
    Report r;
    if (!s.constants) throw ConfigError("bounds: a constants block is required");
    const BoundConstants& c = *s.constants;
    std::ostringstream radii;
    radii << kCsvVersionLine << '\n' << "quantity,value\n";
    const double Q = q_radius(c);
    radii << "Q," << fmt(Q) << '\n';
    r.note("Q", fmt(Q));
    if (c.C && c.D) {
        const double R = y_bound_profile(c, false).radius;
        const double Rr = y_bound_profile(c, true).radius;
        radii << "R," << fmt(R) << '\n' << "R_random_terminal," << fmt(Rr) << '\n';
        r.note("R", fmt(R));
        r.note("R_random_terminal", fmt(Rr));
    }
    std::optional<MarkovRegime> mr;
    if (s.config.regime == Regime::cauchy) mr = MarkovRegime::cauchy;
    if (s.config.regime == Regime::dirichlet) mr = MarkovRegime::dirichlet;
    if (s.config.regime == Regime::neumann) mr = MarkovRegime::reflected;
    if (mr) {
        try {
            const double N = markov_radius(c, *mr);
            radii << "N," << fmt(N) << '\n';
            r.note("N", fmt(N));
        } catch (const std::invalid_argument&) {
            // E/F (or M) not declared
        }
    }
    r.files["radii.csv"] = radii.str();

    const TimeGrid grid = TimeGrid::uniform(0.0, s.T, s.numerics.steps);
    std::vector<SampledProfile> cols;
    std::vector<std::string> names;
    for (int i = 0; i < c.n; ++i) {
        cols.push_back(z_bound_profile(c, i).sample(grid.nodes()));
        names.push_back("a_" + std::to_string(i + 1));
    }
    if (c.C && c.D) {
        cols.push_back(y_bound_profile(c, false).profile.sample(grid.nodes()));
        names.push_back("y_bound");
    }
    std::ostringstream prof;
    prof << kCsvVersionLine << '\n' << "time";
    for (const auto& nme : names) prof << ',' << nme;
    prof << '\n';
    for (int k = 0; k <= grid.steps(); ++k) {
        prof << fmt(grid.node(k));
        for (const auto& col : cols) prof << ',' << fmt(col.values[static_cast<std::size_t>(k)]);
        prof << '\n';
    }
    r.files["profiles.csv"] = prof.str();
    return r;
}

Report run_simulate(const Scenario& s) {
    Report r;
    const PathEnsemble ens = simulate(s, s.numerics.steps, s.numerics.paths);
    r.note("paths", std::to_string(ens.paths));
    r.note("steps", std::to_string(ens.grid.steps()));
    r.files["forward.csv"] = csv_ensemble_summary(ens);
    std::ostringstream bin;
    write_ensemble(bin, ens);
    r.files["ensemble.bin"] = bin.str();
    forward_checks(r, s, ens);
    return r;
}

Report run_solve_bsde(const Scenario& s, const PathEnsemble* replay) {
    if (!s.driver) throw ConfigError("solve-bsde: a driver block is required");
    if (replay && (replay->state_dim != static_cast<int>(s.x0.size()) || replay->noise_dim != s.dynamics.noise_dim ||
                   std::abs(replay->grid.node(replay->grid.steps()) - s.T) > 1e-12 || replay->grid.steps() != s.numerics.steps ||
                   replay->paths != s.numerics.paths)) {
        throw ConfigError("solve-bsde: the replayed ensemble does not match the scenario dimensions, grid or path count");
    }
    if (replay && s.config.regime == Regime::dirichlet && !replay->has_tau()) {
        throw ConfigError("solve-bsde: the replayed ensemble carries no exit times");
    }
    const PathEnsemble ens = replay ? *replay : simulate(s, s.numerics.steps, s.numerics.paths);
    Report r = driver_probe_stage(s);
    merge(r, bsde_stage(s, ens));
    return r;
}

Report run_solve_pde(const Scenario& s) {
    if (!s.numerics.pde) throw ConfigError("solve-pde: numerics.pde is required");
    Report r;
    const PdeSolution sol = solve_pde(pde_problem(s, 0));
    r.note("u_probe", fmt(sol.probe_value));
    r.note("u_probe_time", fmt(sol.probe_time));
    r.note("upwind_switches", std::to_string(sol.upwind_switches));
    if (sol.boundary_influence) r.note("boundary_influence", fmt(*sol.boundary_influence));
    if (sol.compatibility_residual) r.note("compatibility_residual", fmt(*sol.compatibility_residual));
    pde_certificate_checks(r, sol);
    expect_check(r, s, "pde", sol.probe_value, 0.0);
    std::ostringstream os;
    write_pde_csv(os, sol);
    r.files["pde.csv"] = os.str();
    return r;
}

std::vector<ComparisonRow> compare_bsde_pde(const Scenario& s) {
    if (s.config.regime == Regime::non_markovian) throw ConfigError("compare: regime mismatch (non-markovian scenarios have no PDE)");
    if (!s.numerics.pde || !s.driver) throw ConfigError("compare: needs a driver and numerics.pde");
    const int levels = std::max(2, s.numerics.refine);
    std::vector<ComparisonRow> rows;
    std::vector<double> u;
    for (int l = 0; l < levels; ++l) {
        ComparisonRow row;
        row.level = l;
        row.probe = s.probe;
        row.steps = s.numerics.steps << l;
        row.nx = s.numerics.pde->nx << l;
        const PathEnsemble ens = simulate(s, row.steps, s.numerics.paths);
        const BsdeSolution sol = solve_bsde(s, ens);
        row.Y0 = sol.Y0;
        row.Y0_stderr = sol.Y0_stderr;
        PdeProblem p = pde_problem(s, l);
        p.gradient_profile.reset();
        p.value_profile.reset();
        p.store_stride = p.nt;
        row.u = solve_pde(p).probe_value;
        row.diff = std::abs(row.Y0 - row.u);
        rows.push_back(row);
    }
    for (std::size_t l = 0; l < rows.size(); ++l) {
        const std::size_t nb = l + 1 < rows.size() ? l + 1 : l - 1;
        const double change = std::abs(rows[l].u - rows[nb].u);
        rows[l].tolerance = std::max(s.numerics.tolerance, 3.0 * rows[l].Y0_stderr + change);
        rows[l].pass = rows[l].diff < rows[l].tolerance;
    }
    return rows;
}

Report run_compare(const Scenario& s) {
    Report r;
    const auto rows = compare_bsde_pde(s);
    std::ostringstream os;
    os << kCsvVersionLine << '\n' << "level,probe,steps,nx,Y0,Y0_stderr,u,diff,tolerance,result\n";
    bool all = true;
    for (const auto& row : rows) {
        os << row.level << ',' << join(row.probe) << ',' << row.steps << ',' << row.nx << ',' << fmt(row.Y0) << ','
           << fmt(row.Y0_stderr) << ',' << fmt(row.u) << ',' << fmt(row.diff) << ',' << fmt(row.tolerance) << ','
           << (row.pass ? "PASS" : "FAIL") << '\n';
        all = all && row.pass;
        r.note("compare_level_" + std::to_string(row.level), "Y0 " + fmt(row.Y0) + ", u " + fmt(row.u) + ", diff " + fmt(row.diff));
    }
    r.files["compare.csv"] = os.str();
    std::ostringstream d;
    d << rows.size() << " levels, finest diff " << fmt(rows.back().diff) << " (tolerance " << fmt(rows.back().tolerance) << ")";
    r.add("compare", all, d.str());
    if (rows.size() >= 3) {
        const double c1 = std::abs(rows[1].u - rows[0].u), c2 = std::abs(rows[2].u - rows[1].u);
        r.note("pde_change_ratio", fmt(c2 > 0.0 ? c1 / c2 : std::numeric_limits<double>::infinity()));
    }
    return r;
}

Report run_malliavin_check(const Scenario& s) {
    Report r;
    const MalliavinSettings ms = s.numerics.malliavin.value_or(MalliavinSettings{});
    const PathFunctional xi = malliavin_functional(s);
    const TimeGrid grid = TimeGrid::uniform(0.0, s.T, s.numerics.steps);
    const int n = s.dynamics.noise_dim;
    // increments only: the functional rebuilds the state itself
    const PathEnsemble ens = simulate_paths(Dynamics::brownian(n), std::vector<double>(static_cast<std::size_t>(n), 0.0), grid,
                                            ms.paths, s.config.seed, SimulationOptions{s.numerics.lsmc.threads});
    std::ostringstream os;
    os << kCsvVersionLine << '\n' << "component,start,length,mean,max_abs,bound\n";
    const int positions = std::min(ms.positions, grid.steps());
    double worst = 0.0;
    bool pass = true;
    for (int i = 0; i < n; ++i) {
        double A = s.constants ? s.constants->A[static_cast<std::size_t>(i)] : s.terminal.A;
        if (s.reflected && s.constants && s.constants->M) A *= *s.constants->M;
        const double bound = A * (1.0 + ms.tolerance);
        for (int j = 0; j < positions; ++j) {
            const int k = static_cast<int>(static_cast<long long>(j) * grid.steps() / positions);
            MalliavinBump bump;
            bump.component = i;
            bump.start = grid.node(k);
            bump.length = grid.dt(k);
            bump.amplitude = ms.amplitude;
            const std::vector<double> est = malliavin_estimate(xi, ens, bump, s.numerics.lsmc.threads);
            double mean = 0.0, mx = 0.0;
            for (double v : est) {
                mean += v;
                mx = std::max(mx, std::abs(v));
            }
            mean /= static_cast<double>(est.size());
            worst = std::max(worst, mx / (A > 0.0 ? A : 1.0));
            pass = pass && mx <= bound;
            os << i << ',' << fmt(bump.start) << ',' << fmt(bump.length) << ',' << fmt(mean) << ',' << fmt(mx) << ','
               << fmt(bound) << '\n';
        }
    }
    r.files["malliavin.csv"] = os.str();
    r.note("malliavin_max_ratio", fmt(worst));
    r.add("malliavin-bound", pass, "max |D xi| / A = " + fmt(worst) + ", allowed 1 + " + fmt(ms.tolerance));
    if (s.expect.count("variance")) {
        const PathEnsemble big = simulate(s, s.numerics.steps, s.numerics.paths);
        forward_checks(r, s, big);
    }
    return r;
}

Report run_experiment(const Scenario& s) {
    Report r;
    r.note("scenario", s.config.scenario);
    r.note("regime", to_string(s.config.regime));
    r.note("seed", std::to_string(s.config.seed));
    if (s.constants) merge(r, run_bounds(s));

    const PathEnsemble ens = simulate(s, s.numerics.steps, s.numerics.paths);
    r.files["forward.csv"] = csv_ensemble_summary(ens);
    forward_checks(r, s, ens);

    if (s.driver) {
        merge(r, driver_probe_stage(s));
        merge(r, bsde_stage(s, ens));
    }
    if (s.numerics.pde) {
        Report p = run_solve_pde(s);
        merge(r, std::move(p));
        merge(r, run_compare(s));
    }
    if (s.numerics.malliavin) {
        Report m = run_malliavin_check(s);
        // the variance expectation was already checked on the main ensemble
        m.checks.erase(std::remove_if(m.checks.begin(), m.checks.end(), [](const Check& c) { return c.name == "expect-variance"; }),
                       m.checks.end());
        m.summary.erase(std::remove_if(m.summary.begin(), m.summary.end(),
                                       [](const auto& kv) { return kv.first.rfind("terminal_variance_xi", 0) == 0; }),
                        m.summary.end());
        merge(r, std::move(m));
    }
    return r;
}

}  // namespace bsdelab
