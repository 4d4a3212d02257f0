#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "exitrisk/common.hpp"

namespace exitrisk {

// ---------------------------------------------------------------------------
// Continuous-time stochastic system
//   dx = f(t, x, u) dt + G(t, x, u) dw
// with full-state additive observations y_k = x(t_k) + nu at the control rate.
// ---------------------------------------------------------------------------

struct ItoSystem {
    int state_dim = 0;
    int control_dim = 0;
    int noise_dim = 0;

    std::function<Vec(double, const Vec&, const Vec&)> drift;      // (t, x, u)
    std::function<Mat(double, const Vec&, const Vec&)> diffusion;  // n_x x n_w

    Mat observation_noise_cov;  // n_x x n_x, PSD
    double control_rate_hz = 0.0;

    double control_period() const { return 1.0 / control_rate_hz; }
    Vec zero_control() const { return Vec::Zero(control_dim); }

    /// Checks shapes and the PSD observation covariance at a sample point.
    void validate(const Vec& x_probe) const;
};

// ---------------------------------------------------------------------------
// Constraints g(x) <= 0. Twice differentiable with analytic gradient and
// Hessian. `workspace_support`, when set, lists the (leading) state
// coordinates g depends on; this is what enables the reduced quadratures.
// ---------------------------------------------------------------------------

struct Constraint {
    std::function<double(const Vec&)> g;
    std::function<Vec(const Vec&)> gradient;
    std::function<Mat(const Vec&)> hessian;
    std::optional<std::vector<int>> workspace_support;
    bool linear = false;  // Hessian identically zero (half-planes)
    std::string name;
};

struct SafeSet {
    std::vector<Constraint> constraints;

    bool contains(const Vec& x) const {
        for (const auto& c : constraints) {
            if (c.g(x) > 0.0) return false;
        }
        return true;
    }
    double max_violation(const Vec& x) const {
        double m = -std::numeric_limits<double>::infinity();
        for (const auto& c : constraints) m = std::max(m, c.g(x));
        return m;
    }
    int size() const { return static_cast<int>(constraints.size()); }
};

// ---------------------------------------------------------------------------
// Tracking policy on the control grid. Gains use the additive convention
//   u_k = u_nom_k + gains_k * (xhat_k - x_nom_k),
// so LQR gains enter negated (see belief.hpp).
// ---------------------------------------------------------------------------

struct FeedbackPolicy {
    std::vector<Vec> nominal_states;    // K+1 entries on the control grid
    std::vector<Vec> nominal_controls;  // K entries, ZOH over each tick
    std::vector<Mat> gains;             // K entries, control_dim x n_x

    int num_ticks() const { return static_cast<int>(nominal_controls.size()); }
    void validate(const ItoSystem& system, double horizon) const;
};

// ---------------------------------------------------------------------------
// Packaged systems and constraints
// ---------------------------------------------------------------------------

/// Second-order planar Dubin's car: x = (p, v, theta, omega) in R^6,
/// u = (thrust, angular accel). Constant diffusion with noise on v, theta,
/// omega only; full-state observation noise obs_noise_var * I.
ItoSystem dubins_system(double noise_scale, double obs_noise_var,
                        double control_rate_hz);

/// 1-D double integrator (p, v) with noise injected only into v. Position is
/// locally deterministic, which exercises the reduced quadratures.
ItoSystem double_integrator_1d(double noise, double obs_noise_var = 1e-4,
                               double control_rate_hz = 60.0);

/// Disk obstacle: g(x) = radius - ||p(x) - center||. Signed-distance form;
/// singular at p == center.
Constraint circle_obstacle(const Vec& center, double radius);

/// Half-plane: g(x) = normal . p(x) - offset. Linear, Hessian == 0.
Constraint halfplane_constraint(const Vec& normal, double offset);

}  // namespace exitrisk
