// bsdelab: config-driven BSDE / PDE experiments.
//
//   bsdelab run --config scenarios/cole-hopf-quadratic.json
//   bsdelab compare --config a.json --refine 3 --out out/a
//   bsdelab run --config a.json --config b.json     (scenarios run concurrently)

#include <algorithm>
#include <cstdint>
#include <functional>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bsdelab/csv.hpp"
#include "bsdelab/errors.hpp"
#include "bsdelab/experiment.hpp"

namespace {

using namespace bsdelab;

struct Outcome {
    int code = kExitPass;
    std::string text;  // printed to stdout
    std::string error; // printed to stderr
};

using Stage = std::function<Report(const Scenario&)>;

struct Job {
    Scenario scenario;
    Stage stage;
    bool echo_files = false;  // bounds prints its CSVs
};

Outcome execute(const Job& job) {
    Outcome o;
    try {
        const Report r = job.stage(job.scenario);
        write_report(r, job.scenario.out_dir);
        o.code = r.exit_code();
        o.text = "[" + job.scenario.config.scenario + "] -> " + job.scenario.out_dir + "\n" + format_summary(r);
        if (job.echo_files) {
            for (const char* f : {"radii.csv", "profiles.csv"}) {
                auto it = r.files.find(f);
                if (it != r.files.end()) o.text += it->second;
            }
        }
    } catch (const NumericalError& e) {
        o.code = kExitNumerical;
        o.error = job.scenario.config.scenario + ": numerical failure: " + e.what();
    } catch (const std::invalid_argument& e) {
        o.code = kExitSchema;
        o.error = job.scenario.config.scenario + ": " + e.what();
    } catch (const std::exception& e) {
        o.code = kExitNumerical;
        o.error = job.scenario.config.scenario + ": " + e.what();
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BSDE / PDE experiment runner"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    std::vector<std::string> configs;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<int> steps;
    std::optional<int> refine;
    std::optional<std::string> out;
    std::string replay;

    struct Sub {
        const char* name;
        const char* help;
        Stage stage;
    };
    const std::vector<Sub> subs = {
        {"bounds", "print Q, N, R and the bound profiles as CSV", run_bounds},
        {"simulate", "simulate the forward ensemble", run_simulate},
        {"solve-bsde", "solve the BSDE by regression Monte Carlo", nullptr},
        {"solve-pde", "solve the semilinear PDE by finite differences", run_solve_pde},
        {"compare", "BSDE versus PDE on a refinement ladder", run_compare},
        {"malliavin-check", "finite-difference Malliavin estimates against A", run_malliavin_check},
        {"run", "full scenario pipeline", run_experiment},
    };
    std::vector<CLI::App*> cmds;
    for (const auto& s : subs) {
        CLI::App* c = app.add_subcommand(s.name, s.help);
        c->add_option("--config", configs, "scenario file (repeatable)")->required()->check(CLI::ExistingFile);
        c->add_option("--seed", seed, "override the scenario seed");
        c->add_option("--out", out, "output directory");
        c->add_option("--paths", paths, "override numerics.paths")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 32));
        c->add_option("--steps", steps, "override numerics.steps")->check(CLI::Range(1, 1 << 24));
        c->add_option("--refine", refine, "override numerics.refine")->check(CLI::Range(1, 12));
        if (std::string(s.name) == "solve-bsde") {
            c->add_option("--ensemble", replay, "replay a saved ensemble.bin instead of simulating")->check(CLI::ExistingFile);
        }
        cmds.push_back(c);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitSchema;
    }

    std::size_t which = 0;
    for (std::size_t i = 0; i < cmds.size(); ++i) {
        if (cmds[i]->parsed()) which = i;
    }

    // Validate every config before anything runs or writes.
    std::vector<Job> jobs;
    std::optional<PathEnsemble> ensemble;
    try {
        if (!replay.empty()) ensemble = load_ensemble(replay);
        for (const auto& path : configs) {
            ExperimentConfig cfg = load_config(path);
            Overrides ov{seed, paths, steps, refine, std::nullopt};
            if (out) ov.out = configs.size() > 1 ? *out + "/" + cfg.scenario : *out;
            apply_overrides(cfg, ov);
            Job job{build_scenario(cfg), subs[which].stage, which == 0};
            if (!job.stage) {
                const PathEnsemble* e = ensemble ? &*ensemble : nullptr;
                job.stage = [e](const Scenario& s) { return run_solve_bsde(s, e); };
            }
            jobs.push_back(std::move(job));
        }
        std::vector<std::string> dirs;
        for (const auto& j : jobs) dirs.push_back(j.scenario.out_dir);
        std::sort(dirs.begin(), dirs.end());
        if (std::adjacent_find(dirs.begin(), dirs.end()) != dirs.end()) {
            throw ConfigError("two scenarios write to the same output directory");
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitSchema;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitSchema;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    }

    std::vector<Outcome> outcomes;
    if (jobs.size() == 1) {
        outcomes.push_back(execute(jobs[0]));
    } else {
        std::vector<std::future<Outcome>> running;
        for (const auto& j : jobs) running.push_back(std::async(std::launch::async, execute, std::cref(j)));
        for (auto& f : running) outcomes.push_back(f.get());
    }

    int code = kExitPass;
    for (const auto& o : outcomes) {
        std::cout << o.text;
        if (!o.error.empty()) std::cerr << o.error << '\n';
        code = std::max(code, o.code);
    }
    return code;
}
