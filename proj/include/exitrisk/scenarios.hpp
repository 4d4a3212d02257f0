#pragma once

#include <optional>
#include <string>
#include <vector>

#include "exitrisk/belief.hpp"
#include "exitrisk/monte_carlo.hpp"
#include "exitrisk/sde_models.hpp"

namespace exitrisk {

// ---------------------------------------------------------------------------
// Scenario files: JSON with top-level keys
//   system, obstacles, initial, goal, horizon_s, partition_hz, nominal,
//   risk_tolerance (optional)
// Lengths in meters, times in seconds, angles in radians. See the README for
// the full schema.
// ---------------------------------------------------------------------------

struct ObstacleSpec {
    enum class Kind { circle, halfplane };
    Kind kind = Kind::circle;
    Vec center_or_normal;  // circle center / half-plane normal (workspace dims)
    double radius_or_offset = 0.0;
};

struct NominalSpec {
    enum class Kind { straight, waypoints, inline_trajectory };
    Kind kind = Kind::straight;
    std::vector<Vec> waypoints;      // intermediate workspace points
    double turn_fraction = 0.15;     // horizon share per in-place turn
    std::vector<Vec> states;         // inline: K+1 states on the control grid
    std::vector<Vec> controls;       // inline: K controls
};

struct Scenario {
    std::string system_id;  // "dubins" | "double_integrator_1d"
    double noise_scale = 0.05;
    double obs_noise_var = 1e-4;
    double control_rate_hz = 60.0;

    std::vector<ObstacleSpec> obstacles;
    Vec initial_mean;
    Mat initial_cov;
    Vec goal;  // workspace point
    double horizon_s = 0.0;
    double partition_hz = 0.0;
    NominalSpec nominal;
    std::optional<double> risk_tolerance;

    Vec q_weights, r_weights;  // LQG tracking weights (defaults per system)
};

ItoSystem make_system(const Scenario& scenario);
SafeSet make_safe_set(const Scenario& scenario);
GaussianBelief make_initial(const Scenario& scenario);

/// Parses and fully validates (shapes, positivity, partition/control-grid
/// divisibility, and the initial-safety invariant P(x0 unsafe) < 1e-6).
Scenario load_scenario(const std::string& path);
Scenario scenario_from_json_text(const std::string& text);
std::string scenario_to_json_text(const Scenario& scenario);
void save_scenario(const Scenario& scenario, const std::string& path);

/// Kinematic nominal for the scenario: straight min-jerk translations between
/// waypoints with min-jerk in-place turns, sampled on the control grid, with
/// controls from inverse dynamics of the noiseless model. Errors if the
/// resulting path is not collision-free at 10x the control rate.
std::pair<std::vector<Vec>, std::vector<Vec>> synthesize_nominal(const Scenario& scenario);

/// Dense collision check of a state sequence (linear interpolation between
/// grid states at `oversample` points per tick). Returns max_j g_j.
double nominal_max_violation(const SafeSet& safe_set, const std::vector<Vec>& states,
                             int oversample = 10);

// ---------------------------------------------------------------------------
// Random environment generation with the interesting-case rejection rule:
// candidates whose nominal fails to synthesize, or whose short MC probe shows
// failure probability < 0.01, are discarded.
// ---------------------------------------------------------------------------

struct ObstacleRanges {
    int min_count = 1;
    int max_count = 3;
    double radius_lo = 0.15;
    double radius_hi = 0.35;
    Vec center_lo, center_hi;  // axis-aligned sampling box
};

struct BatchTemplate {
    Scenario base;          // obstacles replaced per candidate
    ObstacleRanges ranges;
};

BatchTemplate load_batch_template(const std::string& path);

struct GeneratedBatch {
    uint64_t seed = 0;
    std::vector<Scenario> scenarios;
    std::vector<double> probe_risk;  // MC-probe estimate per retained scenario
    int candidates_examined = 0;
    int rejected_unsafe_nominal = 0;
    int rejected_uninteresting = 0;
    int rejected_invalid = 0;
};

/// Deterministic in `seed` and independent of the thread count. Throws
/// TemplateInfeasibleError when 10x count candidates fail to produce enough
/// interesting scenarios.
GeneratedBatch generate_batch(const BatchTemplate& tmpl, int count, uint64_t seed,
                              const McConfig& probe_config);

}  // namespace exitrisk
