#include "exitrisk/monte_carlo.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "exitrisk/rng.hpp"

namespace exitrisk {

namespace {

int first_violated(const SafeSet& safe_set, const Vec& x) {
    int worst = -1;
    double worst_g = 0.0;
    for (int j = 0; j < safe_set.size(); ++j) {
        double gj = safe_set.constraints[j].g(x);
        if (gj > worst_g) {
            worst_g = gj;
            worst = j;
        }
    }
    return worst;  // -1 when safe
}

}  // namespace

RolloutResult rollout(const ItoSystem& system, const SafeSet& safe_set,
                      const FeedbackPolicy& policy, const LqgDesign& design,
                      const GaussianBelief& initial, double horizon,
                      const McConfig& config, int rollout_index) {
    if (config.sim_substeps_per_control_tick < 1) {
        throw std::invalid_argument("rollout: substeps must be >= 1");
    }
    policy.validate(system, horizon);

    const int n = system.state_dim;
    const int ticks = static_cast<int>(std::llround(horizon * system.control_rate_hz));
    const int substeps = config.sim_substeps_per_control_tick;
    const double dt_sim = system.control_period() / substeps;
    const double sqrt_dt = std::sqrt(dt_sim);

    Xoshiro256 rng(derive_stream_seed(config.rng_seed, static_cast<uint64_t>(rollout_index)));

    // Draw (x0, xhat0) jointly from the initial belief.
    const Mat sqrt_cov = psd_sqrt(initial.cov);
    Vec xi(2 * n);
    for (int i = 0; i < 2 * n; ++i) xi(i) = rng.normal();
    Vec aug = initial.mean + sqrt_cov * xi;
    Vec x = aug.head(n);
    Vec xhat = aug.tail(n);

    const Mat obs_sqrt = psd_sqrt(system.observation_noise_cov);

    RolloutResult result;
    {
        int j0 = first_violated(safe_set, x);
        if (j0 >= 0) {
            result.exited = true;
            result.exit_time = 0.0;
            result.exit_constraint = j0;
            result.final_state = x;
            return result;
        }
    }

    Vec noise(system.noise_dim), obs_noise(n);
    for (int k = 0; k < ticks; ++k) {
        const double t_tick = k * system.control_period();
        const Vec u = policy.nominal_controls[k] +
                      policy.gains[k] * (xhat - policy.nominal_states[k]);

        for (int s = 0; s < substeps; ++s) {
            const double t = t_tick + s * dt_sim;
            for (int i = 0; i < system.noise_dim; ++i) noise(i) = rng.normal();
            x += system.drift(t, x, u) * dt_sim +
                 system.diffusion(t, x, u) * (sqrt_dt * noise);
            xhat += system.drift(t, xhat, u) * dt_sim;

            if (!x.allFinite()) {
                throw SimulationBlowupError(
                    "rollout " + std::to_string(rollout_index) +
                    ": non-finite state at t=" + std::to_string(t + dt_sim),
                    rollout_index);
            }
            int j = first_violated(safe_set, x);
            if (j >= 0) {
                result.exited = true;
                result.exit_time = t + dt_sim;
                result.exit_constraint = j;
                result.final_state = x;
                return result;
            }
        }

        // Full-state observation and Kalman update at the tick end.
        for (int i = 0; i < n; ++i) obs_noise(i) = rng.normal();
        const Vec y = x + obs_sqrt * obs_noise;
        xhat += design.kalman_gains[k] * (y - xhat);
    }

    result.exited = false;
    result.exit_time = 0.0;
    result.final_state = x;
    return result;
}

McResult estimate_mc(const ItoSystem& system, const SafeSet& safe_set,
                     const FeedbackPolicy& policy, const LqgDesign& design,
                     const GaussianBelief& initial, double horizon,
                     const TimePartition& partition, const McConfig& config) {
    if (config.num_rollouts < 1) {
        throw std::invalid_argument("estimate_mc: num_rollouts must be >= 1");
    }
    partition.validate();

    const int n_roll = config.num_rollouts;
    std::vector<RolloutResult> results(n_roll);
    std::vector<std::string> failures;
    std::mutex failure_mutex;

    parallel_for_index(n_roll, max_threads(), [&](int i) {
        try {
            results[i] = rollout(system, safe_set, policy, design, initial, horizon,
                                 config, i);
        } catch (const SimulationBlowupError& e) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            failures.push_back(e.what());
        }
    });
    if (!failures.empty()) {
        throw SimulationBlowupError(
            std::to_string(failures.size()) + " rollout(s) blew up; first: " +
            failures.front(), -1);
    }

    McResult mc;
    mc.num_rollouts = n_roll;
    const int k = partition.num_intervals();
    mc.first_exit_histogram.assign(k, 0);
    mc.exit_constraint_counts.assign(safe_set.size(), 0);
    mc.cumulative_curve.assign(k + 1, 0.0);

    // Reduce in index order for determinism.
    for (int i = 0; i < n_roll; ++i) {
        const auto& r = results[i];
        if (!r.exited) continue;
        ++mc.num_exited;
        if (r.exit_constraint >= 0) ++mc.exit_constraint_counts[r.exit_constraint];
        int bin = k - 1;
        for (int b = 0; b < k; ++b) {
            if (r.exit_time < partition.times[b + 1]) {
                bin = b;
                break;
            }
        }
        ++mc.first_exit_histogram[bin];
        for (int b = 0; b <= k; ++b) {
            if (r.exit_time <= partition.times[b]) mc.cumulative_curve[b] += 1.0;
        }
    }
    mc.estimate = static_cast<double>(mc.num_exited) / n_roll;
    mc.standard_error = std::sqrt(mc.estimate * (1.0 - mc.estimate) / n_roll);
    for (double& c : mc.cumulative_curve) c /= n_roll;
    return mc;
}

}  // namespace exitrisk
