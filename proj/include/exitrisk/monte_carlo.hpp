#pragma once

#include <optional>
#include <vector>

#include "exitrisk/belief.hpp"
#include "exitrisk/estimators.hpp"
#include "exitrisk/sde_models.hpp"

namespace exitrisk {

// ---------------------------------------------------------------------------
// Ground-truth oracle: Euler-Maruyama rollouts of the full nonlinear
// closed-loop system (plant, Kalman estimator, tracking controller), with
// first-exit detection at every substep. Rollouts draw from per-index RNG
// streams derived from the master seed, so results are bit-identical for a
// given seed regardless of the thread count.
// ---------------------------------------------------------------------------

struct McConfig {
    int num_rollouts = 1000;
    int sim_substeps_per_control_tick = 10;
    uint64_t rng_seed = 0;
};

struct RolloutResult {
    bool exited = false;
    double exit_time = 0.0;
    int exit_constraint = -1;
    Vec final_state;
};

struct McResult {
    double estimate = 0.0;
    double standard_error = 0.0;
    std::vector<int> first_exit_histogram;    // per partition interval
    std::vector<int> exit_constraint_counts;  // per constraint
    std::vector<double> cumulative_curve;     // F(t) at each partition time
    int num_rollouts = 0;
    int num_exited = 0;
};

RolloutResult rollout(const ItoSystem& system, const SafeSet& safe_set,
                      const FeedbackPolicy& policy, const LqgDesign& design,
                      const GaussianBelief& initial, double horizon,
                      const McConfig& config, int rollout_index);

McResult estimate_mc(const ItoSystem& system, const SafeSet& safe_set,
                     const FeedbackPolicy& policy, const LqgDesign& design,
                     const GaussianBelief& initial, double horizon,
                     const TimePartition& partition, const McConfig& config);

}  // namespace exitrisk
