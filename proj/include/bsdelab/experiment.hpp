#pragma once

// Config-driven experiments: a JSON scenario names the constants, driver,
// terminal condition, forward dynamics, domain and numerics; the runner
// chains bounds, simulation, BSDE and PDE solves and the BSDE/PDE
// comparison, and turns every certificate and expectation into a check.
//
// Exit status: 0 when every check passes, 1 when a check fails, 2 for a
// schema violation, 3 for a numerical failure.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "bsdelab/bounds.hpp"
#include "bsdelab/bsde.hpp"
#include "bsdelab/domain.hpp"
#include "bsdelab/drivers.hpp"
#include "bsdelab/forward.hpp"
#include "bsdelab/pde.hpp"

namespace bsdelab {

enum class Regime { cauchy, dirichlet, neumann, non_markovian };

std::string to_string(Regime regime);

inline constexpr int kExitPass = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitSchema = 2;
inline constexpr int kExitNumerical = 3;

/// A validated scenario. Blocks are kept as JSON and interpreted by
/// build_scenario; parse_config has already rejected unknown keys and
/// ill-typed values.
struct ExperimentConfig {
    std::string scenario;
    Regime regime = Regime::cauchy;
    std::uint64_t seed = 0;
    nlohmann::json constants;
    nlohmann::json driver;
    nlohmann::json terminal;
    nlohmann::json forward;
    nlohmann::json domain;
    nlohmann::json numerics;
    nlohmann::json outputs;
    nlohmann::json expect;
};

/// Throws ConfigError on any schema violation.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<int> steps;
    std::optional<int> refine;
    std::optional<std::string> out;
};

void apply_overrides(ExperimentConfig& cfg, const Overrides& ov);

struct PdeSettings {
    int nx = 200;
    int nt = 200;
    std::vector<double> lo, hi;
    double theta = 0.5;
    int rannacher_steps = 2;
    double boundary_tolerance = 1e-4;
    int store_stride = 1;
};

struct MalliavinSettings {
    std::size_t paths = 10000;
    int positions = 20;
    double amplitude = 1e-4;
    double tolerance = 0.05;
};

struct Numerics {
    int steps = 100;
    std::size_t paths = 100000;
    LsmcOptions lsmc;
    int refine = 2;            ///< levels of the comparison ladder
    double tolerance = 0.01;   ///< floor of the comparison tolerance
    bool bridge = true;        ///< Brownian-bridge exit correction
    std::optional<PdeSettings> pde;
    std::optional<MalliavinSettings> malliavin;
};

struct Expectation {
    double value = 0.0;
    std::optional<double> tolerance;  ///< absolute
    double sigmas = 5.0;              ///< used when no tolerance is given
    int component = 0;
};

/// Everything a scenario needs, built from the config.
struct Scenario {
    ExperimentConfig config;
    double T = 1.0;
    std::optional<BoundConstants> constants;
    std::optional<DriverSpec> driver;
    TerminalSpec terminal;
    bool path_terminal = false;
    std::string terminal_kind;
    TerminalMap h;  ///< state terminal map (empty for path functionals)
    Dynamics dynamics;
    std::vector<double> sigma;  ///< constant diffusion matrix, m x n row-major
    std::vector<double> x0;
    std::optional<DomainSpec> domain;
    bool reflected = false;
    ReflectionScheme reflection = ReflectionScheme::symmetric;
    Numerics numerics;
    std::vector<double> probe;
    std::string out_dir;
    std::map<std::string, Expectation> expect;
};

/// Throws ConfigError when the blocks are inconsistent.
Scenario build_scenario(const ExperimentConfig& cfg);

struct Check {
    std::string name;
    bool pass = true;
    std::string detail;
};

struct ComparisonRow {
    int level = 0;
    std::vector<double> probe;
    int steps = 0;
    int nx = 0;
    double Y0 = 0.0;
    double Y0_stderr = 0.0;
    double u = 0.0;
    double diff = 0.0;
    double tolerance = 0.0;
    bool pass = true;
};

struct Report {
    std::vector<Check> checks;
    std::vector<std::pair<std::string, std::string>> summary;
    std::map<std::string, std::string> files;  ///< file name -> contents, written only on success
    int exit_code() const;
    void add(std::string name, bool pass, std::string detail);
    void note(std::string key, std::string value);
};

Report run_bounds(const Scenario& s);
Report run_simulate(const Scenario& s);
/// replay: solve on a saved ensemble instead of simulating one.
Report run_solve_bsde(const Scenario& s, const PathEnsemble* replay = nullptr);
Report run_solve_pde(const Scenario& s);
Report run_compare(const Scenario& s);
Report run_malliavin_check(const Scenario& s);
/// bounds -> forward -> bsde -> pde (Markovian regimes) -> compare.
Report run_experiment(const Scenario& s);

/// Comparison ladder: level l uses steps * 2^l time steps for the BSDE and
/// nx * 2^l, nt * 2^l for the PDE. A level passes when
/// |Y0 - u| < max(tolerance, 3 s.e. + |u_l - u_neighbour|).
std::vector<ComparisonRow> compare_bsde_pde(const Scenario& s);

/// Writes report files into dir (created when missing) and summary.txt.
void write_report(const Report& r, const std::string& dir);
std::string format_summary(const Report& r);

}  // namespace bsdelab
