#include "exitrisk/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "exitrisk/estimators.hpp"
#include "exitrisk/rng.hpp"

namespace exitrisk {

namespace {

using nlohmann::json;

constexpr double kPi = 3.141592653589793;

double wrap_to_pi(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
}

// Normalized minimum-jerk profile on [0, 1].
double mj_pos(double tau) { return tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau); }
double mj_vel(double tau) { return tau * tau * (30.0 - 60.0 * tau + 30.0 * tau * tau); }
double mj_acc(double tau) { return tau * (60.0 - 180.0 * tau + 120.0 * tau * tau); }

int workspace_dim(const Scenario& s) {
    if (s.system_id == "dubins") return 2;
    if (s.system_id == "double_integrator_1d") return 1;
    throw std::invalid_argument("unknown system id: " + s.system_id);
}

Vec json_to_vec(const json& j, const std::string& what) {
    if (!j.is_array()) throw std::invalid_argument(what + ": expected an array");
    Vec v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
    return v;
}

Mat json_to_mat(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw std::invalid_argument(what + ": expected a matrix");
    const size_t rows = j.size();
    const size_t cols = j[0].size();
    Mat m(rows, cols);
    for (size_t r = 0; r < rows; ++r) {
        if (j[r].size() != cols) throw std::invalid_argument(what + ": ragged matrix");
        for (size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

json vec_to_json(const Vec& v) {
    json j = json::array();
    for (int i = 0; i < v.size(); ++i) j.push_back(v(i));
    return j;
}

json mat_to_json(const Mat& m) {
    json j = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        j.push_back(row);
    }
    return j;
}

// ---------------------------------------------------------------------------
// Kinematic nominal template: rest-to-rest min-jerk translations along the
// waypoint polyline, with min-jerk in-place turns between segments. Phase
// boundaries are snapped to control ticks.
// ---------------------------------------------------------------------------

struct Phase {
    enum class Kind { hover, translate, turn };
    Kind kind = Kind::hover;
    int tick0 = 0, tick1 = 0;  // [tick0, tick1)
    Vec anchor;                // translate start / turn & hover location
    Vec dir;                   // translate unit direction
    double length = 0.0;
    double theta0 = 0.0, theta1 = 0.0;
};

struct NominalProfile {
    std::vector<Phase> phases;
    double dt = 0.0;

    const Phase& phase_at(double t) const {
        for (const auto& ph : phases) {
            if (t < ph.tick1 * dt || &ph == &phases.back()) return ph;
        }
        return phases.back();
    }

    // Workspace position / velocity / acceleration and heading state at t.
    void eval(double t, Vec& p, Vec& v, double& theta, double& omega,
              double& thrust, double& alpha) const {
        const Phase& ph = phase_at(t);
        const double t0 = ph.tick0 * dt;
        const double dur = (ph.tick1 - ph.tick0) * dt;
        const double tau = dur > 0.0 ? std::clamp((t - t0) / dur, 0.0, 1.0) : 0.0;
        switch (ph.kind) {
            case Phase::Kind::hover:
                p = ph.anchor;
                v = Vec::Zero(ph.anchor.size());
                theta = ph.theta0;
                omega = 0.0;
                thrust = 0.0;
                alpha = 0.0;
                break;
            case Phase::Kind::translate:
                p = ph.anchor + ph.dir * (ph.length * mj_pos(tau));
                v = ph.dir * (ph.length * mj_vel(tau) / dur);
                theta = ph.theta0;
                omega = 0.0;
                thrust = ph.length * mj_acc(tau) / (dur * dur);
                alpha = 0.0;
                break;
            case Phase::Kind::turn: {
                const double dth = ph.theta1 - ph.theta0;
                p = ph.anchor;
                v = Vec::Zero(ph.anchor.size());
                theta = ph.theta0 + dth * mj_pos(tau);
                omega = dth * mj_vel(tau) / dur;
                thrust = 0.0;
                alpha = dth * mj_acc(tau) / (dur * dur);
                break;
            }
        }
    }
};

NominalProfile build_profile(const Scenario& scenario) {
    const int np = workspace_dim(scenario);
    const double rate = scenario.control_rate_hz;
    const double dt = 1.0 / rate;
    const int total_ticks = static_cast<int>(std::llround(scenario.horizon_s * rate));

    const Vec p0 = scenario.initial_mean.head(np);
    double theta0 = (scenario.system_id == "dubins") ? scenario.initial_mean(4) : 0.0;

    // Polyline: start -> waypoints -> goal, dropping negligible segments.
    std::vector<Vec> pts{p0};
    for (const auto& w : scenario.nominal.waypoints) pts.push_back(w);
    pts.push_back(scenario.goal);
    std::vector<Vec> dirs;
    std::vector<double> lens;
    std::vector<Vec> starts;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        Vec d = pts[i + 1] - pts[i];
        double l = d.norm();
        if (l > 1e-9) {
            starts.push_back(pts[i]);
            dirs.push_back(d / l);
            lens.push_back(l);
        }
    }

    NominalProfile prof;
    prof.dt = dt;

    if (lens.empty()) {
        Phase ph;
        ph.kind = Phase::Kind::hover;
        ph.tick0 = 0;
        ph.tick1 = total_ticks;
        ph.anchor = p0;
        ph.theta0 = theta0;
        prof.phases.push_back(ph);
        return prof;
    }

    // Abstract phase list with continuous headings, then time allocation.
    struct Proto {
        Phase::Kind kind;
        int seg = -1;
        double theta_from = 0.0, theta_to = 0.0;
    };
    std::vector<Proto> protos;
    double theta = theta0;
    for (size_t i = 0; i < lens.size(); ++i) {
        double heading = (np == 2) ? std::atan2(dirs[i](1), dirs[i](0)) : 0.0;
        double target = theta + wrap_to_pi(heading - theta);
        if (np == 2 && std::abs(target - theta) > 1e-9) {
            protos.push_back({Phase::Kind::turn, -1, theta, target});
            theta = target;
        }
        protos.push_back({Phase::Kind::translate, static_cast<int>(i), theta, theta});
    }

    int n_turns = 0;
    for (const auto& pr : protos) n_turns += (pr.kind == Phase::Kind::turn) ? 1 : 0;
    const double total_len = std::accumulate(lens.begin(), lens.end(), 0.0);
    double turn_share = std::min(0.6, scenario.nominal.turn_fraction * n_turns);
    double turn_time = n_turns > 0 ? turn_share * scenario.horizon_s / n_turns : 0.0;
    double translate_time = scenario.horizon_s - turn_time * n_turns;

    // Continuous boundaries, then snap to ticks (at least one tick per phase).
    std::vector<double> durations;
    for (const auto& pr : protos) {
        durations.push_back(pr.kind == Phase::Kind::turn
                                ? turn_time
                                : translate_time * lens[pr.seg] / total_len);
    }
    std::vector<int> tick_bounds{0};
    double acc_t = 0.0;
    for (double d : durations) {
        acc_t += d;
        int tb = static_cast<int>(std::llround(acc_t * rate));
        tb = std::clamp(tb, tick_bounds.back() + 1, total_ticks);
        tick_bounds.push_back(tb);
    }
    tick_bounds.back() = total_ticks;

    Vec cursor = starts.front();
    for (size_t i = 0; i < protos.size(); ++i) {
        Phase ph;
        ph.kind = protos[i].kind;
        ph.tick0 = tick_bounds[i];
        ph.tick1 = tick_bounds[i + 1];
        ph.theta0 = protos[i].theta_from;
        ph.theta1 = protos[i].theta_to;
        if (ph.kind == Phase::Kind::translate) {
            ph.anchor = starts[protos[i].seg];
            ph.dir = dirs[protos[i].seg];
            ph.length = lens[protos[i].seg];
            cursor = ph.anchor + ph.dir * ph.length;
        } else {
            ph.anchor = cursor;
            ph.dir = Vec::Zero(np);
        }
        prof.phases.push_back(ph);
    }
    return prof;
}

Vec profile_state(const Scenario& scenario, const NominalProfile& prof, double t) {
    const int np = workspace_dim(scenario);
    Vec p, v;
    double theta, omega, thrust, alpha;
    prof.eval(t, p, v, theta, omega, thrust, alpha);
    if (scenario.system_id == "dubins") {
        Vec x(6);
        x.head(2) = p;
        x.segment(2, 2) = v;
        x(4) = theta;
        x(5) = omega;
        return x;
    }
    Vec x(2 * np);
    x.head(np) = p;
    x.tail(np) = v;
    return x;
}

Vec profile_control(const Scenario& scenario, const NominalProfile& prof, double t) {
    Vec p, v;
    double theta, omega, thrust, alpha;
    prof.eval(t, p, v, theta, omega, thrust, alpha);
    if (scenario.system_id == "dubins") {
        Vec u(2);
        u(0) = thrust;
        u(1) = alpha;
        return u;
    }
    Vec u(1);
    u(0) = thrust;
    return u;
}

}  // namespace

ItoSystem make_system(const Scenario& scenario) {
    if (scenario.system_id == "dubins") {
        return dubins_system(scenario.noise_scale, scenario.obs_noise_var,
                             scenario.control_rate_hz);
    }
    if (scenario.system_id == "double_integrator_1d") {
        return double_integrator_1d(scenario.noise_scale, scenario.obs_noise_var,
                                    scenario.control_rate_hz);
    }
    throw std::invalid_argument("unknown system id: " + scenario.system_id);
}

SafeSet make_safe_set(const Scenario& scenario) {
    SafeSet s;
    for (const auto& o : scenario.obstacles) {
        if (o.kind == ObstacleSpec::Kind::circle) {
            s.constraints.push_back(circle_obstacle(o.center_or_normal, o.radius_or_offset));
        } else {
            s.constraints.push_back(halfplane_constraint(o.center_or_normal, o.radius_or_offset));
        }
    }
    return s;
}

GaussianBelief make_initial(const Scenario& scenario) {
    return make_initial_belief(scenario.initial_mean, scenario.initial_cov);
}

Scenario scenario_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("scenario parse error: ") + e.what());
    }

    Scenario s;
    try {
        const auto& sys = j.at("system");
        s.system_id = sys.at("id").get<std::string>();
        s.noise_scale = sys.at("noise_scale").get<double>();
        s.obs_noise_var = sys.at("obs_noise_var").get<double>();
        s.control_rate_hz = sys.at("control_rate_hz").get<double>();
        if (sys.contains("q_weights")) s.q_weights = json_to_vec(sys["q_weights"], "q_weights");
        if (sys.contains("r_weights")) s.r_weights = json_to_vec(sys["r_weights"], "r_weights");

        for (const auto& o : j.at("obstacles")) {
            ObstacleSpec spec;
            const std::string type = o.at("type").get<std::string>();
            if (type == "circle") {
                spec.kind = ObstacleSpec::Kind::circle;
                spec.center_or_normal = json_to_vec(o.at("center"), "obstacle center");
                spec.radius_or_offset = o.at("radius").get<double>();
            } else if (type == "halfplane") {
                spec.kind = ObstacleSpec::Kind::halfplane;
                spec.center_or_normal = json_to_vec(o.at("normal"), "obstacle normal");
                spec.radius_or_offset = o.at("offset").get<double>();
            } else {
                throw std::invalid_argument("unknown obstacle type: " + type);
            }
            s.obstacles.push_back(spec);
        }

        const auto& init = j.at("initial");
        s.initial_mean = json_to_vec(init.at("mean"), "initial.mean");
        if (init.contains("cov")) {
            s.initial_cov = json_to_mat(init["cov"], "initial.cov");
        } else {
            Vec d = json_to_vec(init.at("cov_diag"), "initial.cov_diag");
            s.initial_cov = d.asDiagonal();
        }

        s.goal = json_to_vec(j.at("goal"), "goal");
        s.horizon_s = j.at("horizon_s").get<double>();
        s.partition_hz = j.at("partition_hz").get<double>();

        const auto& nom = j.at("nominal");
        const std::string ntype = nom.at("type").get<std::string>();
        if (ntype == "straight") {
            s.nominal.kind = NominalSpec::Kind::straight;
        } else if (ntype == "waypoints") {
            s.nominal.kind = NominalSpec::Kind::waypoints;
            for (const auto& w : nom.at("points")) {
                s.nominal.waypoints.push_back(json_to_vec(w, "nominal waypoint"));
            }
            if (nom.contains("turn_fraction")) {
                s.nominal.turn_fraction = nom["turn_fraction"].get<double>();
            }
        } else if (ntype == "inline") {
            s.nominal.kind = NominalSpec::Kind::inline_trajectory;
            for (const auto& x : nom.at("states")) {
                s.nominal.states.push_back(json_to_vec(x, "nominal state"));
            }
            for (const auto& u : nom.at("controls")) {
                s.nominal.controls.push_back(json_to_vec(u, "nominal control"));
            }
        } else {
            throw std::invalid_argument("unknown nominal type: " + ntype);
        }

        if (j.contains("risk_tolerance")) {
            s.risk_tolerance = j["risk_tolerance"].get<double>();
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("scenario field error: ") + e.what());
    }

    // Defaults and validation.
    const int np = workspace_dim(s);
    const int nx = (s.system_id == "dubins") ? 6 : 2;
    if (s.q_weights.size() == 0) {
        s.q_weights = (s.system_id == "dubins")
                          ? (Vec(6) << 20.0, 20.0, 2.0, 2.0, 2.0, 0.2).finished()
                          : (Vec(2) << 20.0, 2.0).finished();
    }
    if (s.r_weights.size() == 0) {
        s.r_weights = (s.system_id == "dubins") ? (Vec(2) << 1.0, 0.5).finished()
                                                : (Vec(1) << 1.0).finished();
    }

    if (s.horizon_s <= 0.0) throw std::invalid_argument("scenario: horizon_s must be positive");
    if (s.partition_hz <= 0.0) throw std::invalid_argument("scenario: partition_hz must be positive");
    if (s.noise_scale <= 0.0) throw std::invalid_argument("scenario: noise_scale must be positive");
    if (s.obs_noise_var < 0.0) throw std::invalid_argument("scenario: obs_noise_var must be nonnegative");
    if (s.control_rate_hz <= 0.0) throw std::invalid_argument("scenario: control_rate_hz must be positive");
    if (s.initial_mean.size() != nx) throw std::invalid_argument("scenario: initial mean has wrong dimension");
    if (s.initial_cov.rows() != nx || s.initial_cov.cols() != nx) {
        throw std::invalid_argument("scenario: initial covariance has wrong shape");
    }
    if (s.goal.size() != np) throw std::invalid_argument("scenario: goal has wrong dimension");
    for (const auto& o : s.obstacles) {
        if (o.center_or_normal.size() != np) {
            throw std::invalid_argument("scenario: obstacle dimension mismatch");
        }
        if (o.kind == ObstacleSpec::Kind::circle && o.radius_or_offset <= 0.0) {
            throw std::invalid_argument("scenario: circle radius must be positive");
        }
    }
    for (const auto& w : s.nominal.waypoints) {
        if (w.size() != np) throw std::invalid_argument("scenario: waypoint dimension mismatch");
    }

    const double ticks = s.horizon_s * s.control_rate_hz;
    if (std::abs(ticks - std::llround(ticks)) > 1e-6) {
        throw std::invalid_argument("scenario: horizon is not a whole number of control ticks");
    }
    const double steps = s.horizon_s * s.partition_hz;
    if (std::abs(steps - std::llround(steps)) > 1e-6) {
        throw std::invalid_argument("scenario: horizon is not a whole number of partition steps");
    }
    const double ratio = s.control_rate_hz / s.partition_hz;
    if (ratio < 1.0 - 1e-9 || std::abs(ratio - std::llround(ratio)) > 1e-6) {
        throw std::invalid_argument(
            "scenario: partition_hz must divide control_rate_hz so partition "
            "times lie on the control grid");
    }

    require_psd(s.initial_cov, 1e-9, "scenario initial covariance");

    // Initial-safety invariant: P(x0 unsafe) < 1e-6 by quadrature.
    SafeSet safe = make_safe_set(s);
    GaussianBelief b0 = make_initial(s);
    require_initially_safe(safe, b0, QuadratureSpec{});

    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open scenario file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return scenario_from_json_text(ss.str());
}

std::string scenario_to_json_text(const Scenario& s) {
    json j;
    j["system"] = {{"id", s.system_id},
                   {"noise_scale", s.noise_scale},
                   {"obs_noise_var", s.obs_noise_var},
                   {"control_rate_hz", s.control_rate_hz},
                   {"q_weights", vec_to_json(s.q_weights)},
                   {"r_weights", vec_to_json(s.r_weights)}};
    j["obstacles"] = json::array();
    for (const auto& o : s.obstacles) {
        if (o.kind == ObstacleSpec::Kind::circle) {
            j["obstacles"].push_back({{"type", "circle"},
                                      {"center", vec_to_json(o.center_or_normal)},
                                      {"radius", o.radius_or_offset}});
        } else {
            j["obstacles"].push_back({{"type", "halfplane"},
                                      {"normal", vec_to_json(o.center_or_normal)},
                                      {"offset", o.radius_or_offset}});
        }
    }
    j["initial"] = {{"mean", vec_to_json(s.initial_mean)}, {"cov", mat_to_json(s.initial_cov)}};
    j["goal"] = vec_to_json(s.goal);
    j["horizon_s"] = s.horizon_s;
    j["partition_hz"] = s.partition_hz;
    switch (s.nominal.kind) {
        case NominalSpec::Kind::straight:
            j["nominal"] = {{"type", "straight"}};
            break;
        case NominalSpec::Kind::waypoints: {
            json pts = json::array();
            for (const auto& w : s.nominal.waypoints) pts.push_back(vec_to_json(w));
            j["nominal"] = {{"type", "waypoints"},
                            {"points", pts},
                            {"turn_fraction", s.nominal.turn_fraction}};
            break;
        }
        case NominalSpec::Kind::inline_trajectory: {
            json xs = json::array(), us = json::array();
            for (const auto& x : s.nominal.states) xs.push_back(vec_to_json(x));
            for (const auto& u : s.nominal.controls) us.push_back(vec_to_json(u));
            j["nominal"] = {{"type", "inline"}, {"states", xs}, {"controls", us}};
            break;
        }
    }
    if (s.risk_tolerance) j["risk_tolerance"] = *s.risk_tolerance;
    return j.dump(2) + "\n";
}

void save_scenario(const Scenario& scenario, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::invalid_argument("cannot write scenario file: " + path);
    out << scenario_to_json_text(scenario);
}

double nominal_max_violation(const SafeSet& safe_set, const std::vector<Vec>& states,
                             int oversample) {
    double worst = -std::numeric_limits<double>::infinity();
    for (size_t k = 0; k + 1 < states.size(); ++k) {
        for (int s = 0; s < oversample; ++s) {
            double a = static_cast<double>(s) / oversample;
            Vec x = (1.0 - a) * states[k] + a * states[k + 1];
            worst = std::max(worst, safe_set.max_violation(x));
        }
    }
    worst = std::max(worst, safe_set.max_violation(states.back()));
    return worst;
}

std::pair<std::vector<Vec>, std::vector<Vec>> synthesize_nominal(const Scenario& scenario) {
    const double rate = scenario.control_rate_hz;
    const int ticks = static_cast<int>(std::llround(scenario.horizon_s * rate));

    if (scenario.nominal.kind == NominalSpec::Kind::inline_trajectory) {
        if (static_cast<int>(scenario.nominal.states.size()) != ticks + 1 ||
            static_cast<int>(scenario.nominal.controls.size()) != ticks) {
            throw std::invalid_argument("inline nominal does not match the control grid");
        }
        return {scenario.nominal.states, scenario.nominal.controls};
    }

    if (scenario.system_id == "dubins") {
        const Vec v0 = scenario.initial_mean.segment(2, 2);
        if (v0.norm() > 1e-6 || std::abs(scenario.initial_mean(5)) > 1e-6) {
            throw std::invalid_argument(
                "nominal template requires a rest start (zero velocity and "
                "angular rate); supply an inline nominal instead");
        }
    } else if (scenario.initial_mean.tail(1).cwiseAbs().maxCoeff() > 1e-6) {
        throw std::invalid_argument(
            "nominal template requires a rest start; supply an inline nominal");
    }

    NominalProfile prof = build_profile(scenario);
    std::vector<Vec> states(ticks + 1);
    std::vector<Vec> controls(ticks);
    const double dt = 1.0 / rate;
    for (int k = 0; k <= ticks; ++k) states[k] = profile_state(scenario, prof, k * dt);
    for (int k = 0; k < ticks; ++k) {
        controls[k] = profile_control(scenario, prof, (k + 0.5) * dt);
    }

    SafeSet safe = make_safe_set(scenario);
    double worst = nominal_max_violation(safe, states);
    if (worst >= 0.0) {
        throw NominalCollisionError(
            "synthesized nominal intersects the safe-set boundary (max g = " +
            std::to_string(worst) + "); supply waypoints");
    }
    return {states, controls};
}

BatchTemplate load_batch_template(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open batch template: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("batch template parse error: ") + e.what());
    }
    if (!j.contains("batch")) {
        throw std::invalid_argument("batch template missing the 'batch' key");
    }
    json batch = j["batch"];
    j.erase("batch");

    BatchTemplate tmpl;
    tmpl.base = scenario_from_json_text(j.dump());
    tmpl.ranges.min_count = batch.at("count_range")[0].get<int>();
    tmpl.ranges.max_count = batch.at("count_range")[1].get<int>();
    tmpl.ranges.radius_lo = batch.at("radius_range")[0].get<double>();
    tmpl.ranges.radius_hi = batch.at("radius_range")[1].get<double>();
    tmpl.ranges.center_lo = json_to_vec(batch.at("center_box")[0], "center_box lo");
    tmpl.ranges.center_hi = json_to_vec(batch.at("center_box")[1], "center_box hi");
    if (tmpl.ranges.min_count < 0 || tmpl.ranges.max_count < tmpl.ranges.min_count) {
        throw std::invalid_argument("batch template: bad count_range");
    }
    return tmpl;
}

GeneratedBatch generate_batch(const BatchTemplate& tmpl, int count, uint64_t seed,
                              const McConfig& probe_config) {
    if (count < 1) throw std::invalid_argument("generate_batch: count must be >= 1");

    GeneratedBatch out;
    out.seed = seed;
    const int np = workspace_dim(tmpl.base);
    // Declared infeasible when the rejection rate exceeds 99% over the first
    // 10x count candidates; a hard cap bounds the scan either way.
    const int infeasibility_check = 10 * count;
    const int hard_cap = std::max(200 * count, 1000);

    for (int cand = 0; cand < hard_cap &&
                       static_cast<int>(out.scenarios.size()) < count;
         ++cand) {
        if (cand == infeasibility_check &&
            static_cast<int>(out.scenarios.size()) < 0.01 * infeasibility_check) {
            break;
        }
        ++out.candidates_examined;
        Xoshiro256 rng(derive_stream_seed(seed, static_cast<uint64_t>(cand)));

        Scenario s = tmpl.base;
        const int n_obs = tmpl.ranges.min_count +
                          static_cast<int>(rng.uniform() *
                                           (tmpl.ranges.max_count - tmpl.ranges.min_count + 1));
        for (int o = 0; o < std::min(n_obs, tmpl.ranges.max_count); ++o) {
            ObstacleSpec spec;
            spec.kind = ObstacleSpec::Kind::circle;
            spec.center_or_normal.resize(np);
            for (int d = 0; d < np; ++d) {
                spec.center_or_normal(d) =
                    tmpl.ranges.center_lo(d) +
                    rng.uniform() * (tmpl.ranges.center_hi(d) - tmpl.ranges.center_lo(d));
            }
            spec.radius_or_offset =
                tmpl.ranges.radius_lo +
                rng.uniform() * (tmpl.ranges.radius_hi - tmpl.ranges.radius_lo);
            s.obstacles.push_back(spec);
        }

        SafeSet safe = make_safe_set(s);
        GaussianBelief b0 = make_initial(s);
        try {
            require_initially_safe(safe, b0, QuadratureSpec{});
        } catch (const std::invalid_argument&) {
            ++out.rejected_invalid;
            continue;
        }

        std::vector<Vec> xs, us;
        try {
            std::tie(xs, us) = synthesize_nominal(s);
        } catch (const NominalCollisionError&) {
            ++out.rejected_unsafe_nominal;
            continue;
        }

        // Short MC probe on the nominal: keep only interesting cases.
        ItoSystem sys = make_system(s);
        LqgDesign design = design_lqg(sys, xs, us, s.q_weights, s.r_weights,
                                      s.horizon_s, s.initial_cov);
        FeedbackPolicy policy = tracking_policy(design);
        McConfig probe = probe_config;
        probe.rng_seed = derive_stream_seed(seed ^ 0x9e3779b97f4a7c15ULL,
                                            static_cast<uint64_t>(cand));
        TimePartition part = TimePartition::uniform(s.horizon_s, s.partition_hz);
        McResult mc = estimate_mc(sys, safe, policy, design, b0, s.horizon_s, part, probe);
        if (mc.estimate < 0.01) {
            ++out.rejected_uninteresting;
            continue;
        }
        out.probe_risk.push_back(mc.estimate);
        out.scenarios.push_back(std::move(s));
    }

    if (static_cast<int>(out.scenarios.size()) < count) {
        throw TemplateInfeasibleError(
            "generate_batch: only " + std::to_string(out.scenarios.size()) + " of " +
            std::to_string(count) + " scenarios accepted after " +
            std::to_string(out.candidates_examined) + " candidates");
    }
    return out;
}

}  // namespace exitrisk
