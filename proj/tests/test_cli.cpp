#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

#include "bsdelab/errors.hpp"
#include "bsdelab/experiment.hpp"

using namespace bsdelab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = BSDELAB_CLI;
const std::string kScenarios = BSDELAB_SCENARIOS;

json scenario(const std::string& name) {
    std::ifstream in(kScenarios + "/" + name + ".json");
    return json::parse(in);
}

std::string write_config(const json& doc, const std::string& name) {
    const fs::path dir = fs::current_path() / "cli-configs";
    fs::create_directories(dir);
    const fs::path p = dir / (name + ".json");
    std::ofstream(p) << doc.dump(2);
    return p.string();
}

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path fresh(const std::string& name) {
    const fs::path p = fs::current_path() / "cli-out" / name;
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("parse_config rejects schema violations") {
    json good = scenario("brownian-identity");
    CHECK_NOTHROW(parse_config(good));

    json extra = good;
    extra["colour"] = "blue";
    CHECK_THROWS_AS(parse_config(extra), ConfigError);

    json noseed = good;
    noseed.erase("seed");
    CHECK_THROWS_AS(parse_config(noseed), ConfigError);

    json negative = good;
    negative["seed"] = -1;
    CHECK_THROWS_AS(parse_config(negative), ConfigError);

    json regime = good;
    regime["regime"] = "parabolic";
    CHECK_THROWS_AS(parse_config(regime), ConfigError);

    json name = good;
    name["scenario"] = "../escape";
    CHECK_THROWS_AS(parse_config(name), ConfigError);
}

TEST_CASE("build_scenario rejects inconsistent blocks") {
    auto build = [](const json& doc) { return build_scenario(parse_config(doc)); };
    const json base = scenario("brownian-identity");
    CHECK_NOTHROW(build(base));

    json driver = base;
    driver["driver"] = {{"name", "quadratic"}, {"params", {{"mu", 0.5}}}};
    CHECK_THROWS_AS(build(driver), ConfigError);  // non-Lipschitz without constants

    json param = base;
    param["driver"]["params"]["q"] = 1.0;
    CHECK_THROWS_AS(build(param), ConfigError);

    json steps = base;
    steps["numerics"]["steps"] = 0;
    CHECK_THROWS_AS(build(steps), ConfigError);

    json probe = base;
    probe["outputs"] = {{"probe", {0.5}}};
    CHECK_THROWS_AS(build(probe), ConfigError);

    json dirichlet = scenario("dirichlet-square");
    CHECK_NOTHROW(build(dirichlet));
    dirichlet.erase("constants");
    CHECK_THROWS_AS(build(dirichlet), ConfigError);

    json outside = scenario("dirichlet-square");
    outside["forward"]["x0"] = {2.0};
    CHECK_THROWS_AS(build(outside), ConfigError);
}

TEST_CASE("overrides replace numerics and the seed") {
    ExperimentConfig cfg = parse_config(scenario("linear-decay"));
    Overrides ov;
    ov.seed = 99;
    ov.paths = 123;
    ov.steps = 7;
    ov.out = "elsewhere";
    apply_overrides(cfg, ov);
    const Scenario s = build_scenario(cfg);
    CHECK(cfg.seed == 99);
    CHECK(s.numerics.paths == 123);
    CHECK(s.numerics.steps == 7);
    CHECK(s.out_dir == "elsewhere");
}

TEST_CASE("exit status distinguishes pass, failed check, schema and numerical errors") {
    const std::string small = " --paths 2000";

    const fs::path ok = fresh("ok");
    CHECK(run("run --config " + kScenarios + "/brownian-identity.json --out " + ok.string() + small) == kExitPass);
    CHECK(fs::exists(ok / "summary.txt"));
    CHECK(fs::exists(ok / "compare.csv"));

    json failing = scenario("brownian-identity");
    failing["expect"]["Y0"] = {{"value", 1.0}, {"tolerance", 1e-3}};
    const fs::path fail = fresh("fail");
    CHECK(run("run --config " + write_config(failing, "failing") + " --out " + fail.string() + small) == kExitCheckFailed);

    json bad = scenario("brownian-identity");
    bad["bogus"] = 1;
    const fs::path schema = fresh("schema");
    CHECK(run("run --config " + write_config(bad, "bad") + " --out " + schema.string()) == kExitSchema);
    CHECK_FALSE(fs::exists(schema));

    // the PDE box is far too small for the probe: doubling it moves the value
    json narrow = scenario("brownian-identity");
    narrow.erase("expect");
    narrow["terminal"] = {{"kind", "sin"}};
    narrow["forward"] = {{"x0", {0.1}}};
    narrow["numerics"]["pde"]["lo"] = {-0.3};
    narrow["numerics"]["pde"]["hi"] = {0.3};
    const fs::path numerical = fresh("numerical");
    CHECK(run("run --config " + write_config(narrow, "narrow") + " --out " + numerical.string() + small) == kExitNumerical);
    CHECK_FALSE(fs::exists(numerical));

    CHECK(run("run --config does-not-exist.json") == kExitSchema);
    CHECK(run("frobnicate") == kExitSchema);
}

TEST_CASE("reruns are byte-identical and seeds matter") {
    const std::string args = "solve-bsde --config " + kScenarios + "/linear-decay.json --paths 3000";
    const fs::path a = fresh("rerun-a"), b = fresh("rerun-b"), c = fresh("rerun-c");
    REQUIRE(run(args + " --out " + a.string()) == kExitPass);
    REQUIRE(run(args + " --out " + b.string()) == kExitPass);
    REQUIRE(run(args + " --seed 8 --out " + c.string()) != kExitSchema);
    CHECK(slurp(a / "bsde.csv") == slurp(b / "bsde.csv"));
    CHECK(slurp(a / "summary.txt") == slurp(b / "summary.txt"));
    CHECK(slurp(a / "bsde.csv") != slurp(c / "bsde.csv"));
}

TEST_CASE("several configs run side by side") {
    const fs::path out = fresh("multi");
    const std::string cfgs = " --config " + kScenarios + "/linear-decay.json --config " + kScenarios + "/brownian-identity.json";
    CHECK(run("solve-bsde" + cfgs + " --paths 3000 --out " + out.string()) == kExitPass);
    CHECK(fs::exists(out / "linear-decay" / "bsde.csv"));
    CHECK(fs::exists(out / "brownian-identity" / "bsde.csv"));

    // the same scenario twice would write to the same directory
    const std::string twice = " --config " + kScenarios + "/linear-decay.json --config " + kScenarios + "/linear-decay.json";
    CHECK(run("solve-bsde" + twice + " --out " + fresh("twice").string()) == kExitSchema);
}

TEST_CASE("saved ensembles replay through solve-bsde") {
    const std::string cfg = " --config " + kScenarios + "/linear-decay.json --paths 3000";
    const fs::path sim = fresh("sim"), direct = fresh("direct"), replay = fresh("replay");
    REQUIRE(run("simulate" + cfg + " --out " + sim.string()) == kExitPass);
    REQUIRE(fs::exists(sim / "ensemble.bin"));
    REQUIRE(run("solve-bsde" + cfg + " --out " + direct.string()) == kExitPass);
    REQUIRE(run("solve-bsde" + cfg + " --ensemble " + (sim / "ensemble.bin").string() + " --out " + replay.string()) == kExitPass);
    CHECK(slurp(direct / "bsde.csv") == slurp(replay / "bsde.csv"));
    // an ensemble with the wrong number of steps is refused
    CHECK(run("solve-bsde" + cfg + " --steps 10 --ensemble " + (sim / "ensemble.bin").string() + " --out " +
              fresh("mismatch").string()) == kExitSchema);
}

TEST_CASE("bounds and pde subcommands write their tables") {
    const fs::path b = fresh("bounds");
    CHECK(run("bounds --config " + kScenarios + "/cole-hopf-quadratic.json --out " + b.string()) == kExitPass);
    const std::string radii = slurp(b / "radii.csv");
    CHECK(radii.rfind("# bsdelab", 0) == 0);
    CHECK(fs::exists(b / "profiles.csv"));

    const fs::path p = fresh("pde");
    CHECK(run("solve-pde --config " + kScenarios + "/neumann-one-plus-u.json --out " + p.string()) == kExitPass);
    CHECK(slurp(p / "summary.txt").find("status = PASS") != std::string::npos);
}

TEST_CASE("experiment api: brownian identity compares at every level") {
    ExperimentConfig cfg = parse_config(scenario("brownian-identity"));
    Overrides ov;
    ov.paths = 4000;
    apply_overrides(cfg, ov);
    const auto rows = compare_bsde_pde(build_scenario(cfg));
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
        CHECK(row.pass);
        CHECK(std::abs(row.u) < 1e-9);
        CHECK(std::abs(row.Y0) < 5.0 * row.Y0_stderr);
    }
    CHECK(rows[1].steps == 2 * rows[0].steps);
    CHECK(rows[1].nx == 2 * rows[0].nx);
}
