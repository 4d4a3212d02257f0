// Experiment CLI: estimate | converge | batch | mc. See README for the CSV
// schemas and scenario file format.

#include <CLI11.hpp>

#include <iostream>

#include "exitrisk/experiments.hpp"

namespace {

void add_common_flags(CLI::App* cmd, exitrisk::ExperimentConfig& config,
                      std::vector<std::string>& method_names) {
    cmd->add_option("--methods", method_names,
                    "estimators to run (dt_booles,dt_gauss,ival_gauss,ival_safe,mc)")
        ->delimiter(',');
    cmd->add_option("--rollouts", config.rollouts, "Monte-Carlo rollouts");
    cmd->add_option("--seed", config.seed, "master RNG seed");
    cmd->add_option("--out", config.out_dir, "output directory");
    cmd->add_option("--quad-points", config.quad_points,
                    "quadrature points per axis (0 = defaults)");
    cmd->add_option("--quad-box", config.quad_box,
                    "quadrature box halfwidth in standard deviations");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continuous-time first-exit risk estimation experiments"};
    app.require_subcommand(1);

    exitrisk::ExperimentConfig config;
    std::vector<std::string> method_names;

    auto* estimate = app.add_subcommand("estimate", "run estimators on one scenario");
    estimate->add_option("--scenario", config.scenario_path, "scenario file")->required();
    add_common_flags(estimate, config, method_names);

    auto* converge = app.add_subcommand("converge", "partition refinement study");
    converge->add_option("--scenario", config.scenario_path, "scenario file")->required();
    converge->add_option("--dt", config.dt_list, "partition steps, strictly decreasing")
        ->delimiter(',')
        ->required();
    add_common_flags(converge, config, method_names);

    auto* batch = app.add_subcommand("batch", "random-environment batch evaluation");
    batch->add_option("--template", config.template_path, "batch template file")->required();
    batch->add_option("--count", config.batch_count, "number of scenarios");
    add_common_flags(batch, config, method_names);

    auto* mc = app.add_subcommand("mc", "Monte-Carlo estimate only");
    mc->add_option("--scenario", config.scenario_path, "scenario file")->required();
    add_common_flags(mc, config, method_names);

    CLI11_PARSE(app, argc, argv);

    try {
        if (!method_names.empty()) {
            config.methods.clear();
            for (const auto& name : method_names) {
                config.methods.push_back(exitrisk::method_from_name(name));
            }
        }
        if (config.methods.empty()) {
            throw std::invalid_argument("at least one method is required");
        }
        if (estimate->parsed()) return exitrisk::run_estimate(config);
        if (converge->parsed()) return exitrisk::run_converge(config);
        if (batch->parsed()) return exitrisk::run_batch(config);
        if (mc->parsed()) return exitrisk::run_mc(config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
