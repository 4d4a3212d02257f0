#include "exitrisk/belief.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>

namespace exitrisk {

namespace {

constexpr double kPsdSlack = 1e-9;
constexpr double kGridTol = 1e-6;

int tick_index(double t, double rate_hz, const char* what) {
    double ticks = t * rate_hz;
    int k = static_cast<int>(std::llround(ticks));
    if (std::abs(ticks - k) > kGridTol) {
        throw std::invalid_argument(std::string(what) +
                                    ": time is not on the control grid");
    }
    return k;
}

// Central-difference Jacobians of the drift about (x, u).
void drift_jacobians(const ItoSystem& sys, double t, const Vec& x, const Vec& u,
                     Mat& a, Mat& b) {
    const int n = sys.state_dim;
    const int m = sys.control_dim;
    a.resize(n, n);
    b.resize(n, m);
    const double eps = 1e-6;
    Vec xp = x, xm = x, up = u, um = u;
    for (int j = 0; j < n; ++j) {
        double h = eps * std::max(1.0, std::abs(x(j)));
        xp(j) += h;
        xm(j) -= h;
        a.col(j) = (sys.drift(t, xp, u) - sys.drift(t, xm, u)) / (2.0 * h);
        xp(j) = x(j);
        xm(j) = x(j);
    }
    for (int j = 0; j < m; ++j) {
        double h = eps * std::max(1.0, std::abs(u(j)));
        up(j) += h;
        um(j) -= h;
        b.col(j) = (sys.drift(t, x, up) - sys.drift(t, x, um)) / (2.0 * h);
        up(j) = u(j);
        um(j) = u(j);
    }
}

// ZOH discretization over dt via the van Loan block exponential.
void discretize_zoh(const Mat& a, const Mat& b, double dt, Mat& ad, Mat& bd) {
    const int n = static_cast<int>(a.rows());
    const int m = static_cast<int>(b.cols());
    Mat block = Mat::Zero(n + m, n + m);
    block.topLeftCorner(n, n) = a * dt;
    block.topRightCorner(n, m) = b * dt;
    Mat e = block.exp();
    ad = e.topLeftCorner(n, n);
    bd = e.topRightCorner(n, m);
}

// One combined predict + measure step of the augmented (x, xhat) pair.
// Controls are ZOH from the tick start: u = u_nom + K_fb (xhat_k - x_nom_k).
//
//   dx+    = Ad dx + Bd Kfb dxh + w,           w ~ N(0, G G^T dt)
//   dxh-   = (Ad + Bd Kfb) dxh
//   dxh+   = (I - L) dxh- + L (dx+ + nu),      nu ~ N(0, R)
void augmented_step(const LqgDesign& design, const Mat& obs_cov, int k, Mat& f_aug,
                    Mat& q_aug) {
    const Mat& ad = design.a_disc[k];
    const Mat bk = design.b_disc[k] * design.feedback_gain(k);
    const Mat& l = design.kalman_gains[k];
    const int n = static_cast<int>(ad.rows());
    const Mat i = Mat::Identity(n, n);

    f_aug.resize(2 * n, 2 * n);
    f_aug.topLeftCorner(n, n) = ad;
    f_aug.topRightCorner(n, n) = bk;
    f_aug.bottomLeftCorner(n, n) = l * ad;
    f_aug.bottomRightCorner(n, n) = (i - l) * (ad + bk) + l * bk;

    const Mat& qd = design.process_noise[k];
    q_aug.resize(2 * n, 2 * n);
    q_aug.topLeftCorner(n, n) = qd;
    q_aug.topRightCorner(n, n) = qd * l.transpose();
    q_aug.bottomLeftCorner(n, n) = l * qd;
    q_aug.bottomRightCorner(n, n) = l * (qd + obs_cov) * l.transpose();
}

}  // namespace

GaussianBelief make_initial_belief(const Vec& mean0, const Mat& cov0) {
    const int n = static_cast<int>(mean0.size());
    if (cov0.rows() != n || cov0.cols() != n) {
        throw std::invalid_argument("make_initial_belief: covariance shape mismatch");
    }
    require_psd(cov0, kPsdSlack, "initial covariance");
    GaussianBelief b;
    b.mean.resize(2 * n);
    b.mean.head(n) = mean0;
    b.mean.tail(n) = mean0;
    b.cov = Mat::Zero(2 * n, 2 * n);
    b.cov.topLeftCorner(n, n) = cov0;
    b.time = 0.0;
    return b;
}

LqgDesign design_lqg(const ItoSystem& system, const std::vector<Vec>& nominal_states,
                     const std::vector<Vec>& nominal_controls, const Vec& q_weights,
                     const Vec& r_weights, double horizon,
                     const Mat& initial_state_cov) {
    const int n = system.state_dim;
    const int m = system.control_dim;
    const double dt = system.control_period();
    const int ticks = tick_index(horizon, system.control_rate_hz, "design_lqg");

    if (static_cast<int>(nominal_controls.size()) < ticks ||
        static_cast<int>(nominal_states.size()) < ticks + 1) {
        throw std::invalid_argument("design_lqg: nominal does not cover the horizon");
    }
    if (q_weights.size() != n || r_weights.size() != m) {
        throw std::invalid_argument("design_lqg: weight dimensions mismatch");
    }

    LqgDesign d;
    d.dt = dt;
    d.nominal_states.assign(nominal_states.begin(), nominal_states.begin() + ticks + 1);
    d.nominal_controls.assign(nominal_controls.begin(),
                              nominal_controls.begin() + ticks);
    d.a_jac.resize(ticks);
    d.b_jac.resize(ticks);
    d.a_disc.resize(ticks);
    d.b_disc.resize(ticks);
    d.process_noise.resize(ticks);
    d.lqr_gains.resize(ticks);
    d.kalman_gains.resize(ticks);

    for (int k = 0; k < ticks; ++k) {
        double t = k * dt;
        drift_jacobians(system, t, d.nominal_states[k], d.nominal_controls[k],
                        d.a_jac[k], d.b_jac[k]);
        discretize_zoh(d.a_jac[k], d.b_jac[k], dt, d.a_disc[k], d.b_disc[k]);
        Mat g = system.diffusion(t, d.nominal_states[k], d.nominal_controls[k]);
        d.process_noise[k] = g * g.transpose() * dt;
    }

    // Backward Riccati for the tracking LQR.
    const Mat q = q_weights.asDiagonal();
    const Mat r = r_weights.asDiagonal();
    Mat p = q;
    for (int k = ticks - 1; k >= 0; --k) {
        const Mat& ad = d.a_disc[k];
        const Mat& bd = d.b_disc[k];
        Mat s = r + bd.transpose() * p * bd;
        d.lqr_gains[k] = s.ldlt().solve(bd.transpose() * p * ad);
        p = q + ad.transpose() * p * (ad - bd * d.lqr_gains[k]);
        symmetrize(p);
        if (!p.allFinite() || p.norm() > 1e12) {
            throw ExitriskError("design_lqg: Riccati recursion diverged "
                                "(non-stabilizable linearization)");
        }
    }

    // Forward filter Riccati. The estimator is initialized at the belief
    // mean, so its initial error covariance is the initial state covariance.
    Mat pe = initial_state_cov.size() > 0 ? initial_state_cov : Mat::Zero(n, n);
    const Mat& obs = system.observation_noise_cov;
    for (int k = 0; k < ticks; ++k) {
        Mat pm = d.a_disc[k] * pe * d.a_disc[k].transpose() + d.process_noise[k];
        symmetrize(pm);
        Mat innov = pm + obs;
        Mat l;
        if (innov.norm() < 1e-15) {
            l = Mat::Zero(n, n);  // noiseless filter: estimate already exact
        } else {
            l = pm * innov.completeOrthogonalDecomposition().pseudoInverse();
        }
        d.kalman_gains[k] = l;
        pe = (Mat::Identity(n, n) - l) * pm;
        symmetrize(pe);
    }
    return d;
}

FeedbackPolicy tracking_policy(const LqgDesign& design) {
    FeedbackPolicy p;
    p.nominal_states = design.nominal_states;
    p.nominal_controls = design.nominal_controls;
    p.gains.reserve(design.num_ticks());
    for (int k = 0; k < design.num_ticks(); ++k) {
        p.gains.push_back(design.feedback_gain(k));
    }
    return p;
}

GaussianBelief propagate_belief(const ItoSystem& system, const LqgDesign& design,
                                const GaussianBelief& belief, double t_from,
                                double t_to) {
    if (t_to <= t_from) {
        throw std::invalid_argument("propagate_belief: t_to must exceed t_from");
    }
    const int k0 = tick_index(t_from, system.control_rate_hz, "propagate_belief");
    const int k1 = tick_index(t_to, system.control_rate_hz, "propagate_belief");
    if (k1 > design.num_ticks()) {
        throw std::invalid_argument("propagate_belief: design does not cover t_to");
    }
    const int n = system.state_dim;
    if (belief.mean.size() != 2 * n) {
        throw std::invalid_argument("propagate_belief: belief dimension mismatch");
    }

    GaussianBelief out = belief;
    Mat f_aug, q_aug;
    Vec nom_aug(2 * n), nom_aug_next(2 * n);
    for (int k = k0; k < k1; ++k) {
        augmented_step(design, system.observation_noise_cov, k, f_aug, q_aug);
        nom_aug.head(n) = design.nominal_states[k];
        nom_aug.tail(n) = design.nominal_states[k];
        nom_aug_next.head(n) = design.nominal_states[k + 1];
        nom_aug_next.tail(n) = design.nominal_states[k + 1];

        out.mean = nom_aug_next + f_aug * (out.mean - nom_aug);
        out.cov = f_aug * out.cov * f_aug.transpose() + q_aug;
        symmetrize(out.cov);
    }
    require_psd(out.cov, kPsdSlack, "propagate_belief");
    out.time = t_to;
    return out;
}

std::vector<GaussianBelief> propagate_belief_sequence(
    const ItoSystem& system, const LqgDesign& design, const GaussianBelief& initial,
    const std::vector<double>& times) {
    std::vector<GaussianBelief> out;
    out.reserve(times.size());
    GaussianBelief cur = initial;
    cur.time = times.empty() ? 0.0 : times.front();
    for (size_t i = 0; i < times.size(); ++i) {
        if (i > 0) {
            cur = propagate_belief(system, design, cur, times[i - 1], times[i]);
        }
        cur.time = times[i];
        out.push_back(cur);
    }
    return out;
}

TruncatedMoments truncate_gaussian_1d(double mean, double var, double upper) {
    if (!(var > 0.0)) {
        throw std::invalid_argument("truncate_gaussian_1d: var must be positive");
    }
    if (!std::isfinite(mean) || !std::isfinite(var)) {
        throw std::invalid_argument("truncate_gaussian_1d: non-finite input");
    }
    if (std::isinf(upper) && upper > 0.0) {
        return {mean, var, 1.0};
    }
    const double sigma = std::sqrt(var);
    const double alpha = (upper - mean) / sigma;
    const double mass = norm_cdf(alpha);
    if (mass < 1e-12) {
        throw DegenerateTruncationError(
            "truncate_gaussian_1d: retained mass below 1e-12");
    }
    // Moments of Z | Z <= alpha with r the inverse Mills ratio.
    const double r = norm_pdf(alpha) / mass;
    TruncatedMoments out;
    out.mean = mean - sigma * r;
    out.var = var * std::max(0.0, 1.0 - r * (r + alpha));
    out.mass = mass;
    return out;
}

std::pair<GaussianBelief, double> condition_on_safety(const GaussianBelief& belief,
                                                      const SafeSet& safe_set) {
    const int n = belief.state_dim();
    GaussianBelief out = belief;
    double total_mass = 1.0;

    for (const auto& constraint : safe_set.constraints) {
        const Vec x_mean = out.mean.head(n);
        const double z = constraint.g(x_mean);
        Vec dir = Vec::Zero(2 * n);
        dir.head(n) = constraint.gradient(x_mean);

        const Vec q = out.cov * dir;
        const double var_s = dir.dot(q);
        if (var_s <= 1e-16) {
            // Deterministic along this direction: either fully safe or gone.
            if (z > 0.0) {
                throw DegenerateTruncationError(
                    "condition_on_safety: deterministic belief outside constraint");
            }
            continue;
        }

        TruncatedMoments tm = truncate_gaussian_1d(z, var_s, 0.0);
        out.mean += q * ((tm.mean - z) / var_s);
        out.cov += q * q.transpose() * ((tm.var - var_s) / (var_s * var_s));
        symmetrize(out.cov);
        total_mass *= tm.mass;
    }
    require_psd(out.cov, kPsdSlack, "condition_on_safety");
    return {out, total_mass};
}

AnthropicBelief propagate_anthropic(const ItoSystem& system, const LqgDesign& design,
                                    const SafeSet& safe_set,
                                    const GaussianBelief& initial,
                                    const std::vector<double>& times) {
    AnthropicBelief out;
    out.beliefs.reserve(times.size());
    GaussianBelief cur = initial;
    double cumulative = 1.0;
    for (size_t i = 0; i < times.size(); ++i) {
        if (i > 0) {
            cur = propagate_belief(system, design, cur, times[i - 1], times[i]);
        }
        cur.time = times[i];
        try {
            auto [conditioned, mass] = condition_on_safety(cur, safe_set);
            cur = conditioned;
            cumulative *= mass;
            out.beliefs.push_back(cur);
            out.step_mass.push_back(mass);
            out.cumulative_mass.push_back(cumulative);
        } catch (const DegenerateTruncationError&) {
            out.degenerate_at = static_cast<int>(i);
            break;
        }
    }
    return out;
}

}  // namespace exitrisk
