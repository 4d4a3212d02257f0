#pragma once

#include <string>
#include <vector>

#include "exitrisk/estimators.hpp"
#include "exitrisk/monte_carlo.hpp"
#include "exitrisk/scenarios.hpp"

namespace exitrisk {

// ---------------------------------------------------------------------------
// Experiment runner. Every command is deterministic given (config, seed):
// rerunning writes byte-identical CSV, independent of EXITRISK_THREADS.
// CSV schemas (first line is a versioned header comment):
//   risk.csv      method,t_lo,t_hi,contribution,cumulative,mass
//   converge.csv  method,dt,total
//   batch.csv     scenario_id,method,total,mc,mc_se
//   stats.csv     method,bias,rmse,mre,conservative_rate
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string scenario_path;            // estimate/converge/mc
    std::string template_path;            // batch
    std::vector<Method> methods{Method::dt_booles, Method::dt_gauss,
                                Method::ival_gauss, Method::ival_safe};
    std::vector<double> dt_list;          // converge partition steps (seconds)
    int rollouts = 1000;
    uint64_t seed = 0;
    std::string out_dir = ".";
    int quad_points = 0;                  // 0 = defaults
    double quad_box = 5.0;
    int batch_count = 20;
};

/// Shortest round-trip decimal text for a double (CSV field formatting).
std::string format_double(double v);

struct ScenarioRun {
    Scenario scenario;
    ItoSystem system;
    SafeSet safe_set;
    GaussianBelief initial;
    LqgDesign design;
    FeedbackPolicy policy;
    QuadratureSpec quad;
};

/// Loads, synthesizes the nominal, designs the LQG tracker, and picks the
/// quadrature reduction.
ScenarioRun prepare_scenario(const Scenario& scenario, const ExperimentConfig& config);

RiskReport run_method(const ScenarioRun& run, Method method, const TimePartition& partition);

struct BatchStats {
    Method method;
    double bias = 0.0;
    double rmse = 0.0;
    double median_relative_error = 0.0;
    double conservative_rate = 0.0;  // estimate >= mc - 5% mc
};

BatchStats compute_batch_stats(Method method, const std::vector<double>& estimates,
                               const std::vector<double>& mc_values);

/// Writes risk.csv for the selected methods on one scenario.
int run_estimate(const ExperimentConfig& config);

/// Evaluates the methods across the dt list on a fixed scenario (MC once)
/// and writes converge.csv.
int run_converge(const ExperimentConfig& config);

/// Generates a batch, evaluates all methods plus MC per scenario, and writes
/// batch.csv and stats.csv.
int run_batch(const ExperimentConfig& config);

/// MC only; writes risk.csv with the MC rows.
int run_mc(const ExperimentConfig& config);

}  // namespace exitrisk
