#include "exitrisk/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "exitrisk/rng.hpp"

namespace exitrisk {

namespace {

std::ofstream open_csv(const std::string& dir, const std::string& name,
                       const std::string& schema) {
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/" + name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ExitriskError("cannot write " + path);
    out << "# exitrisk " << schema << "\n";
    return out;
}

McConfig mc_config_for(const ExperimentConfig& config, uint64_t salt) {
    McConfig mc;
    mc.num_rollouts = config.rollouts;
    mc.sim_substeps_per_control_tick = 10;
    mc.rng_seed = derive_stream_seed(config.seed, salt);
    return mc;
}

void write_report_rows(std::ofstream& out, const RiskReport& report) {
    const std::string name = method_name(report.method);
    double running = 0.0;
    for (size_t i = 0; i < report.per_interval.size(); ++i) {
        running = std::min(1.0, running + report.per_interval[i]);
        double mass = 1.0;
        if (!report.retained_mass.empty()) {
            mass = (i < report.retained_mass.size()) ? report.retained_mass[i] : 0.0;
        }
        out << name << ',' << format_double(report.row_t_lo[i]) << ','
            << format_double(report.row_t_hi[i]) << ','
            << format_double(report.per_interval[i]) << ',' << format_double(running)
            << ',' << format_double(mass) << "\n";
    }
}

void write_mc_rows(std::ofstream& out, const McResult& mc, const TimePartition& partition) {
    for (int i = 0; i < partition.num_intervals(); ++i) {
        double frac = static_cast<double>(mc.first_exit_histogram[i]) / mc.num_rollouts;
        out << "mc," << format_double(partition.times[i]) << ','
            << format_double(partition.times[i + 1]) << ',' << format_double(frac)
            << ',' << format_double(mc.cumulative_curve[i + 1]) << ','
            << format_double(mc.standard_error) << "\n";
    }
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

ScenarioRun prepare_scenario(const Scenario& scenario, const ExperimentConfig& config) {
    ScenarioRun run{scenario,
                    make_system(scenario),
                    make_safe_set(scenario),
                    make_initial(scenario),
                    {},
                    {},
                    {}};
    auto [states, controls] = synthesize_nominal(scenario);
    run.design = design_lqg(run.system, states, controls, scenario.q_weights,
                            scenario.r_weights, scenario.horizon_s, scenario.initial_cov);
    run.policy = tracking_policy(run.design);
    run.quad.points_per_axis = config.quad_points;
    run.quad.box_halfwidth_sigmas = config.quad_box;
    run.quad.reduction =
        choose_reduction(run.system, run.safe_set, scenario.initial_mean);
    return run;
}

RiskReport run_method(const ScenarioRun& run, Method method, const TimePartition& partition) {
    try {
        switch (method) {
            case Method::dt_booles: {
                auto beliefs = propagate_belief_sequence(run.system, run.design,
                                                         run.initial, partition.times);
                return estimate_dt_booles(run.system, run.safe_set, beliefs, partition,
                                          run.quad);
            }
            case Method::dt_gauss:
                return estimate_dt_gauss(run.system, run.safe_set, run.design,
                                         run.initial, partition);
            case Method::ival_gauss:
                return estimate_ival_gauss(run.system, run.safe_set, run.design,
                                           run.initial, partition, run.quad);
            case Method::ival_safe: {
                auto beliefs = propagate_belief_sequence(run.system, run.design,
                                                         run.initial, partition.times);
                return estimate_ival_safe(run.system, run.safe_set, beliefs, partition,
                                          run.quad);
            }
            case Method::mc:
                break;
        }
    } catch (const std::exception& e) {
        throw ExitriskError("method " + method_name(method) + ": " + e.what());
    }
    throw std::invalid_argument("run_method: mc is not an analytic method");
}

BatchStats compute_batch_stats(Method method, const std::vector<double>& estimates,
                               const std::vector<double>& mc_values) {
    if (estimates.size() != mc_values.size() || estimates.empty()) {
        throw std::invalid_argument("compute_batch_stats: size mismatch");
    }
    BatchStats st;
    st.method = method;
    const int n = static_cast<int>(estimates.size());
    double sum = 0.0, sq = 0.0;
    int conservative = 0;
    std::vector<double> rel;
    rel.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double err = estimates[i] - mc_values[i];
        sum += err;
        sq += err * err;
        if (estimates[i] >= mc_values[i] - 0.05 * mc_values[i]) ++conservative;
        rel.push_back(std::abs(err) / std::max(mc_values[i], 1e-12));
    }
    st.bias = sum / n;
    st.rmse = std::sqrt(sq / n);
    std::sort(rel.begin(), rel.end());
    st.median_relative_error =
        (n % 2 == 1) ? rel[n / 2] : 0.5 * (rel[n / 2 - 1] + rel[n / 2]);
    st.conservative_rate = static_cast<double>(conservative) / n;
    return st;
}

int run_estimate(const ExperimentConfig& config) {
    Scenario scenario = load_scenario(config.scenario_path);
    ScenarioRun run = prepare_scenario(scenario, config);
    TimePartition partition =
        TimePartition::uniform(scenario.horizon_s, scenario.partition_hz);
    require_initially_safe(run.safe_set, run.initial, run.quad);

    auto out = open_csv(config.out_dir, "risk.csv",
                        "risk v1: method,t_lo,t_hi,contribution,cumulative,mass");
    out << "method,t_lo,t_hi,contribution,cumulative,mass\n";

    for (Method m : config.methods) {
        if (m == Method::mc) {
            McResult mc = estimate_mc(run.system, run.safe_set, run.policy, run.design,
                                      run.initial, scenario.horizon_s, partition,
                                      mc_config_for(config, 0xe571'ae11));
            write_mc_rows(out, mc, partition);
            std::cout << "mc total " << format_double(mc.estimate) << " (se "
                      << format_double(mc.standard_error) << ")\n";
        } else {
            RiskReport report = run_method(run, m, partition);
            write_report_rows(out, report);
            std::cout << method_name(m) << " total " << format_double(report.total)
                      << "\n";
        }
    }
    return 0;
}

int run_mc(const ExperimentConfig& config) {
    ExperimentConfig mc_only = config;
    mc_only.methods = {Method::mc};
    return run_estimate(mc_only);
}

int run_converge(const ExperimentConfig& config) {
    if (config.dt_list.size() < 3) {
        throw std::invalid_argument("converge: need at least 3 partition steps (--dt)");
    }
    for (size_t i = 1; i < config.dt_list.size(); ++i) {
        if (config.dt_list[i] >= config.dt_list[i - 1]) {
            throw std::invalid_argument("converge: --dt must be strictly decreasing");
        }
    }
    Scenario scenario = load_scenario(config.scenario_path);
    ScenarioRun run = prepare_scenario(scenario, config);
    require_initially_safe(run.safe_set, run.initial, run.quad);

    auto out = open_csv(config.out_dir, "converge.csv", "converge v1: method,dt,total");
    out << "method,dt,total\n";

    for (double dt : config.dt_list) {
        TimePartition partition = TimePartition::uniform(scenario.horizon_s, 1.0 / dt);
        for (Method m : config.methods) {
            if (m == Method::mc) continue;  // MC handled once below
            RiskReport report = run_method(run, m, partition);
            out << method_name(m) << ',' << format_double(dt) << ','
                << format_double(report.total) << "\n";
        }
    }

    const double dt_finest = config.dt_list.back();
    TimePartition finest = TimePartition::uniform(scenario.horizon_s, 1.0 / dt_finest);
    McResult mc = estimate_mc(run.system, run.safe_set, run.policy, run.design,
                              run.initial, scenario.horizon_s, finest,
                              mc_config_for(config, 0xc0'4e9e));
    out << "mc," << format_double(dt_finest) << ',' << format_double(mc.estimate)
        << "\n";
    std::cout << "mc total " << format_double(mc.estimate) << " (se "
              << format_double(mc.standard_error) << ")\n";
    return 0;
}

int run_batch(const ExperimentConfig& config) {
    BatchTemplate tmpl = load_batch_template(config.template_path);
    McConfig probe;
    probe.num_rollouts = 100;
    probe.sim_substeps_per_control_tick = 10;
    GeneratedBatch batch = generate_batch(tmpl, config.batch_count, config.seed, probe);

    std::vector<Method> methods;
    for (Method m : config.methods) {
        if (m != Method::mc) methods.push_back(m);
    }

    auto out = open_csv(config.out_dir, "batch.csv",
                        "batch v1: scenario_id,method,total,mc,mc_se");
    out << "scenario_id,method,total,mc,mc_se\n";

    std::vector<std::vector<double>> estimates(methods.size());
    std::vector<double> mc_values;
    int failures = 0;
    const int total_scenarios = static_cast<int>(batch.scenarios.size());

    for (int i = 0; i < total_scenarios; ++i) {
        const std::string id = "gen_" + std::to_string(i);
        try {
            ScenarioRun run = prepare_scenario(batch.scenarios[i], config);
            TimePartition partition = TimePartition::uniform(
                batch.scenarios[i].horizon_s, batch.scenarios[i].partition_hz);
            McResult mc = estimate_mc(run.system, run.safe_set, run.policy, run.design,
                                      run.initial, batch.scenarios[i].horizon_s,
                                      partition,
                                      mc_config_for(config, 0xba7c'0000 + i));
            std::vector<double> totals;
            for (Method m : methods) {
                totals.push_back(run_method(run, m, partition).total);
            }
            for (size_t mi = 0; mi < methods.size(); ++mi) {
                out << id << ',' << method_name(methods[mi]) << ','
                    << format_double(totals[mi]) << ',' << format_double(mc.estimate)
                    << ',' << format_double(mc.standard_error) << "\n";
                estimates[mi].push_back(totals[mi]);
            }
            mc_values.push_back(mc.estimate);
        } catch (const std::exception& e) {
            ++failures;
            std::cerr << "scenario " << id << " failed: " << e.what() << "\n";
        }
    }
    if (failures > 0.2 * total_scenarios) {
        throw ExitriskError("batch: " + std::to_string(failures) + " of " +
                            std::to_string(total_scenarios) + " scenarios failed");
    }

    auto stats_out = open_csv(config.out_dir, "stats.csv",
                              "stats v1: method,bias,rmse,mre,conservative_rate");
    stats_out << "method,bias,rmse,mre,conservative_rate\n";
    for (size_t mi = 0; mi < methods.size(); ++mi) {
        BatchStats st = compute_batch_stats(methods[mi], estimates[mi], mc_values);
        stats_out << method_name(st.method) << ',' << format_double(st.bias) << ','
                  << format_double(st.rmse) << ','
                  << format_double(st.median_relative_error) << ','
                  << format_double(st.conservative_rate) << "\n";
        std::cout << method_name(st.method) << " bias " << format_double(st.bias)
                  << " rmse " << format_double(st.rmse) << " mre "
                  << format_double(st.median_relative_error) << " conservative "
                  << format_double(st.conservative_rate) << "\n";
    }
    if (failures > 0) {
        std::cerr << failures << " scenario(s) excluded\n";
    }
    return 0;
}

}  // namespace exitrisk
