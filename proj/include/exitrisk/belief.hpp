#pragma once

#include <utility>
#include <vector>

#include "exitrisk/sde_models.hpp"

namespace exitrisk {

// ---------------------------------------------------------------------------
// Gaussian beliefs over the augmented pair (true state x, estimator state
// xhat). Closed-loop dispersion under output feedback depends on the
// correlation between the two, so the joint is what gets propagated; the
// a-priori state distribution is the marginal over the first n_x coordinates.
// ---------------------------------------------------------------------------

/// Plain Gaussian measure over the true state, with an overall mass scale.
struct StateGaussian {
    Vec mean;
    Mat cov;
    double weight = 1.0;
};

struct GaussianBelief {
    Vec mean;    // 2 n_x: (x, xhat)
    Mat cov;     // 2 n_x x 2 n_x
    double time = 0.0;

    int state_dim() const { return static_cast<int>(mean.size()) / 2; }
    StateGaussian state_marginal() const {
        int n = state_dim();
        return {mean.head(n), cov.topLeftCorner(n, n), 1.0};
    }
};

/// Belief at t = 0: the true state is N(mean0, cov0) and the estimator is
/// initialized at mean0 (a known quantity, so its marginal variance is zero).
GaussianBelief make_initial_belief(const Vec& mean0, const Mat& cov0);

// ---------------------------------------------------------------------------
// LQG tracking design about a nominal trajectory
// ---------------------------------------------------------------------------

struct LqgDesign {
    double dt = 0.0;                    // control period
    std::vector<Vec> nominal_states;    // K+1, the linearization points
    std::vector<Vec> nominal_controls;  // K

    std::vector<Mat> a_jac, b_jac;      // continuous-time Jacobians, K
    std::vector<Mat> a_disc, b_disc;    // ZOH discretization over one tick, K
    std::vector<Mat> process_noise;     // G G^T dt at the nominal, K

    // Riccati LQR gains in the standard convention u = u_nom - K (xhat - x_nom).
    std::vector<Mat> lqr_gains;         // K
    // Filter gains; kalman_gains[k] applies to the measurement at t_{k+1}.
    std::vector<Mat> kalman_gains;      // K

    int num_ticks() const { return static_cast<int>(nominal_controls.size()); }
    Mat feedback_gain(int k) const { return -lqr_gains[k]; }
};

/// Finite-horizon LQG about the nominal: per-tick linearization, backward
/// Riccati recursion for the LQR gains, forward filter Riccati (starting from
/// initial_state_cov, zero if empty) for time-varying Kalman gains.
LqgDesign design_lqg(const ItoSystem& system,
                     const std::vector<Vec>& nominal_states,
                     const std::vector<Vec>& nominal_controls,
                     const Vec& q_weights, const Vec& r_weights,
                     double horizon, const Mat& initial_state_cov = Mat());

/// Policy realizing the design: gains = -lqr_gains (additive convention).
FeedbackPolicy tracking_policy(const LqgDesign& design);

/// Propagates the augmented belief tick by tick from t_from to t_to (both on
/// the control grid): ZOH-exact linearized flow over each tick, G G^T dt
/// process noise, then the Kalman measurement update at the tick end.
GaussianBelief propagate_belief(const ItoSystem& system, const LqgDesign& design,
                                const GaussianBelief& belief, double t_from,
                                double t_to);

/// A-priori beliefs at each requested time (no safety conditioning).
std::vector<GaussianBelief> propagate_belief_sequence(
    const ItoSystem& system, const LqgDesign& design,
    const GaussianBelief& initial, const std::vector<double>& times);

// ---------------------------------------------------------------------------
// Safety conditioning (the Gaussian anthropic approximation)
// ---------------------------------------------------------------------------

struct TruncatedMoments {
    double mean = 0.0;
    double var = 0.0;
    double mass = 0.0;
};

/// Moment-matched N(mean, var) conditioned on the value being <= upper.
/// Throws DegenerateTruncationError when the retained mass is below 1e-12.
TruncatedMoments truncate_gaussian_1d(double mean, double var, double upper);

/// Sequentially conditions the belief on g_j <= 0 for each constraint:
/// project onto the gradient direction at the current mean, truncate in 1-D,
/// and apply the conditional-Gaussian rank-one update to the joint. Returns
/// the conditioned belief and the product of retained masses.
std::pair<GaussianBelief, double> condition_on_safety(const GaussianBelief& belief,
                                                      const SafeSet& safe_set);

/// The recursive Gaussian approximation of the anthropic distribution:
/// conditioned beliefs at every partition time, with per-step and cumulative
/// retained mass. If conditioning degenerates (mass ~ 0) at some step,
/// `degenerate_at` records it and the sequence stops there.
struct AnthropicBelief {
    std::vector<GaussianBelief> beliefs;  // post-conditioning, per partition time
    std::vector<double> step_mass;        // mass retained by conditioning at step i
    std::vector<double> cumulative_mass;  // prod of step_mass up to and incl. i
    int degenerate_at = -1;
};

AnthropicBelief propagate_anthropic(const ItoSystem& system, const LqgDesign& design,
                                    const SafeSet& safe_set,
                                    const GaussianBelief& initial,
                                    const std::vector<double>& times);

}  // namespace exitrisk
