// Experiment runner for the anonymous gossiping protocol library.
//
//   anongoss run --config scenario.cfg --out results/ [--seed N]
//                [--sweep adversary.colluder_fraction=0.1,0.3,0.5] ...
//   anongoss report --out results/
//
// Exit codes: 0 success, 2 configuration error, 3 internal invariant
// violation. ANONGOSS_LOG=info|debug controls stderr verbosity.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "anongoss/experiment.hpp"

namespace {

int log_level() {
    const char* v = std::getenv("ANONGOSS_LOG");
    if (v == nullptr) return 0;
    std::string s(v);
    if (s == "debug") return 2;
    if (s == "info") return 1;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"anonymous gossiping experiment runner"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    long long seed_override = -1;
    std::vector<std::string> sweep_args;

    CLI::App* run = app.add_subcommand("run", "run a scenario or a parameter sweep");
    run->add_option("--config", config_path, "scenario config file")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--seed", seed_override, "override sim.seed");
    run->add_option("--sweep", sweep_args, "axis as key=v1,v2,... (repeatable)");

    std::string report_dir;
    CLI::App* report = app.add_subcommand("report", "summarize a produced output directory");
    report->add_option("--out", report_dir, "output directory to read")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) {
            anongoss::Config cfg = anongoss::Config::from_file(config_path);
            if (seed_override >= 0) cfg.set("sim.seed", std::to_string(seed_override));
            std::vector<anongoss::SweepAxis> axes;
            for (const auto& s : sweep_args) axes.push_back(anongoss::parse_sweep(s));
            if (log_level() >= 1) {
                std::cerr << "anongoss: running " << config_path << " -> " << out_dir << "\n";
            }
            return anongoss::run_config(cfg, out_dir, axes);
        }
        if (report->parsed()) {
            std::cout << anongoss::report_text(report_dir);
            return 0;
        }
    } catch (const anongoss::ConfigError& e) {
        std::cerr << "anongoss: " << e.what() << "\n";
        return 2;
    } catch (const anongoss::MissingData& e) {
        std::cerr << "anongoss: " << e.what() << "\n";
        return 2;
    } catch (const anongoss::InvariantError& e) {
        std::cerr << "anongoss: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "anongoss: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
