#include "exitrisk/exit_kernel.hpp"

#include <algorithm>
#include <cmath>

namespace exitrisk {

namespace {

constexpr double kDegenerateVar = 1e-30;

// Tensor-product midpoint grid aligned with the principal axes of the
// covariance. Axes with (near-)zero variance collapse to the mean, so a
// point mass integrates exactly.
struct PrincipalGrid {
    Vec mean;
    std::vector<Vec> axis_step;       // active axis directions scaled by sqrt(eig)
    std::vector<double> nodes;        // standardized midpoints
    std::vector<double> node_weight;  // pdf(u) * du
};

PrincipalGrid make_grid(const Vec& mean, const Mat& cov, int npts, double box) {
    PrincipalGrid grid;
    grid.mean = mean;
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    const Vec& lam = es.eigenvalues();
    const double lam_max = std::max(lam.maxCoeff(), 0.0);
    for (int l = 0; l < lam.size(); ++l) {
        if (lam(l) > std::max(kDegenerateVar, 1e-24 * lam_max)) {
            grid.axis_step.push_back(es.eigenvectors().col(l) * std::sqrt(lam(l)));
        }
    }
    const double du = 2.0 * box / npts;
    grid.nodes.resize(npts);
    grid.node_weight.resize(npts);
    for (int i = 0; i < npts; ++i) {
        double u = -box + (i + 0.5) * du;
        grid.nodes[i] = u;
        grid.node_weight[i] = norm_pdf(u) * du;
    }
    return grid;
}

// Calls f(x, w) for every tensor grid point in a fixed (deterministic) order.
template <class F>
void for_each_grid_point(const PrincipalGrid& grid, const F& f) {
    const int active = static_cast<int>(grid.axis_step.size());
    if (active == 0) {
        f(grid.mean, 1.0);
        return;
    }
    const int npts = static_cast<int>(grid.nodes.size());
    std::vector<int> idx(active, 0);
    Vec x(grid.mean.size());
    while (true) {
        x = grid.mean;
        double w = 1.0;
        for (int a = 0; a < active; ++a) {
            x += grid.axis_step[a] * grid.nodes[idx[a]];
            w *= grid.node_weight[idx[a]];
        }
        f(x, w);
        int a = 0;
        while (a < active && ++idx[a] == npts) {
            idx[a] = 0;
            ++a;
        }
        if (a == active) break;
    }
}

std::vector<int> leading_support(const Constraint& constraint) {
    if (!constraint.workspace_support) {
        throw InvalidReductionError(
            "reduced quadrature requires workspace_support on the constraint");
    }
    const auto& s = *constraint.workspace_support;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] != static_cast<int>(i)) {
            throw InvalidReductionError(
                "reduced quadrature assumes leading-coordinate workspace support");
        }
    }
    return s;
}

// Workspace conventions required by the reduced quadratures: the state leads
// with (p, v), dp = v dt, and the indicator (when present) must be decidable
// from p alone.
void check_second_order_layout(const ItoSystem& system, const Vec& probe, int np,
                               double t) {
    if (system.state_dim < 2 * np) {
        throw InvalidReductionError("state too small for a (p, v) layout");
    }
    Vec f = system.drift(t, probe, system.zero_control());
    double err = (f.head(np) - probe.segment(np, np)).norm();
    if (err > 1e-9 * (1.0 + probe.norm())) {
        throw InvalidReductionError(
            "reduced quadrature requires integrator dynamics dp = v dt");
    }
}

void check_indicator_support(const SafeSet* indicator, int np) {
    if (!indicator) return;
    for (const auto& c : indicator->constraints) {
        if (!c.workspace_support) {
            throw InvalidReductionError(
                "safe-set indicator constraint lacks workspace support");
        }
        for (int idx : *c.workspace_support) {
            if (idx >= np) {
                throw InvalidReductionError(
                    "safe-set indicator depends on coordinates outside the "
                    "integrated workspace");
            }
        }
    }
}

bool indicator_safe(const SafeSet* indicator, const Vec& x) {
    return indicator == nullptr || indicator->contains(x);
}

struct ConditionalVelocity {
    Vec mu_p, mu_v;
    Mat sigma_pp;
    Mat regression;  // Sigma_vp * pinv(Sigma_pp)
    Mat cond_cov;    // Sigma_vv - regression * Sigma_pv
};

ConditionalVelocity velocity_given_position(const StateGaussian& mu, int np) {
    ConditionalVelocity cv;
    cv.mu_p = mu.mean.head(np);
    cv.mu_v = mu.mean.segment(np, np);
    cv.sigma_pp = mu.cov.topLeftCorner(np, np);
    Mat sigma_vp = mu.cov.block(np, 0, np, np);
    Mat pinv = cv.sigma_pp.completeOrthogonalDecomposition().pseudoInverse();
    cv.regression = sigma_vp * pinv;
    cv.cond_cov = mu.cov.block(np, np, np, np) - cv.regression * sigma_vp.transpose();
    symmetrize(cv.cond_cov);
    return cv;
}

double quad_full(const ItoSystem& system, const Constraint& constraint,
                 const StateGaussian& mu, const SafeSet* indicator, double t,
                 double dt, const QuadratureSpec& spec) {
    const int dims = system.state_dim;
    PrincipalGrid grid =
        make_grid(mu.mean, mu.cov, spec.resolve_points(dims), spec.box_halfwidth_sigmas);
    const Vec u0 = system.zero_control();
    double acc = 0.0;
    for_each_grid_point(grid, [&](const Vec& x, double w) {
        if (!indicator_safe(indicator, x)) return;
        double z = constraint.g(x);
        if (z > 0.0) {
            acc += w;  // already outside: psi == 1 (gradient may be singular here)
            return;
        }
        LocalCoefficients lc = local_coefficients(system, constraint, t, x, u0);
        acc += w * psi(lc.z, lc.h, lc.sigma, dt);
    });
    return acc * mu.weight;
}

// Evaluator for one position node of the reduced quadratures: the exit
// probability of the frozen scalar process with the drift integrated against
// the conditional velocity distribution.
struct ReducedIntegrand {
    const ItoSystem* system;
    const Constraint* constraint;
    const SafeSet* indicator;
    const ConditionalVelocity* cv;
    double t, dt;
    int np;
    bool with_scalar_drift_axis;
    const std::vector<double>* drift_nodes;    // standardized, ps mode
    const std::vector<double>* drift_weights;
    mutable Vec x_eval;

    double operator()(const Vec& p) const {
        x_eval.head(np) = p;
        if (!indicator_safe(indicator, x_eval)) return 0.0;
        const double z = constraint->g(x_eval);
        if (z > 0.0) return 1.0;  // already outside: psi == 1

        const Vec a_p = constraint->gradient(x_eval).head(np);
        const double m_s = a_p.dot(cv->mu_v + cv->regression * (p - cv->mu_p));
        const double v_s = std::max(0.0, a_p.dot(cv->cond_cov * a_p));

        if (!with_scalar_drift_axis) {
            if (v_s <= kDegenerateVar) {
                return (z + m_s * dt > 0.0) ? 1.0 : 0.0;
            }
            // sigma_j == 0: the drift integral of the exit indicator is the
            // conditional Gaussian CDF.
            return norm_cdf((m_s + z / dt) / std::sqrt(v_s));
        }

        const Mat g_x = system->diffusion(t, x_eval, system->zero_control());
        const double sigma_j = (g_x.topRows(np).transpose() * a_p).norm();
        const Mat h_x = constraint->hessian(x_eval);
        const double h_bar = 0.5 * (g_x.transpose() * h_x * g_x).trace();

        if (v_s <= kDegenerateVar) {
            return psi(z, h_bar + m_s, sigma_j, dt);
        }
        const double sd = std::sqrt(v_s);
        double inner = 0.0;
        for (size_t i = 0; i < drift_nodes->size(); ++i) {
            inner += (*drift_weights)[i] *
                     psi(z, h_bar + m_s + sd * (*drift_nodes)[i], sigma_j, dt);
        }
        return inner;
    }

    // Width of the boundary layer in g-units at the boundary point p_star:
    // the frozen process can reach the boundary within dt only from depths
    // up to drift reach plus diffusion reach.
    double layer_depth(const Vec& p_star) const {
        x_eval.head(np) = p_star;
        Vec a_p;
        try {
            a_p = constraint->gradient(x_eval).head(np);
        } catch (const SingularPointError&) {
            return 8.0 * dt;  // crude but only reachable in exotic geometry
        }
        const double m_s = a_p.dot(cv->mu_v + cv->regression * (p_star - cv->mu_p));
        const double v_s = std::max(0.0, a_p.dot(cv->cond_cov * a_p));
        double depth = (std::abs(m_s) + 8.0 * std::sqrt(v_s)) * dt;
        if (with_scalar_drift_axis) {
            const Mat g_x = system->diffusion(t, x_eval, system->zero_control());
            const double sigma_j = (g_x.topRows(np).transpose() * a_p).norm();
            depth += 8.0 * sigma_j * std::sqrt(dt);
        }
        return depth;
    }
};

// Composite integral along the boundary-normal axis for one slice: exact
// Gaussian mass on fully-outside segments, a regular grid over the safe
// bulk, and a dedicated sub-grid over the O(dt) boundary layer next to each
// zero crossing (which is where the integrand concentrates as the partition
// refines).
double integrate_normal_axis(const ReducedIntegrand& f, const Vec& p_base,
                             const Vec& normal, double mean_t, double var_t,
                             int npts, double box, bool plain_mode) {
    if (var_t <= kDegenerateVar) {
        return f(p_base + normal * mean_t);
    }
    const double sd = std::sqrt(var_t);
    const double span = std::max(box, 8.0);
    const double lo = mean_t - span * sd;
    const double hi = mean_t + span * sd;

    auto z_at = [&](double tt) {
        f.x_eval.head(f.np) = p_base + normal * tt;
        return f.constraint->g(f.x_eval);
    };

    // Scan for sign changes, then bisect each crossing.
    const int scan = 129;
    std::vector<double> roots;
    double prev_t = lo, prev_z = z_at(lo);
    for (int i = 1; i <= scan; ++i) {
        double tt = lo + (hi - lo) * i / scan;
        double zz = z_at(tt);
        if ((prev_z <= 0.0) != (zz <= 0.0)) {
            double a = prev_t, b = tt, za = prev_z;
            for (int it = 0; it < 60; ++it) {
                double m = 0.5 * (a + b);
                double zm = z_at(m);
                if ((za <= 0.0) != (zm <= 0.0)) {
                    b = m;
                } else {
                    a = m;
                    za = zm;
                }
            }
            roots.push_back(0.5 * (a + b));
        }
        prev_t = tt;
        prev_z = zz;
    }

    // Breakpoints: domain ends, roots, and the layer edge on the safe side
    // of each root.
    std::vector<double> breaks{lo, hi};
    for (double r : roots) {
        breaks.push_back(r);
        double depth_g = f.layer_depth(p_base + normal * r);
        // convert the g-depth to a t-extent through the local slope
        double eps = 1e-6 * std::max(1.0, sd);
        double slope = std::abs(z_at(r + eps) - z_at(r - eps)) / (2.0 * eps);
        double extent = (slope > 1e-12) ? depth_g / slope : sd;
        bool inside_below = z_at(r - eps) <= 0.0;
        breaks.push_back(inside_below ? r - extent : r + extent);
    }
    std::sort(breaks.begin(), breaks.end());
    breaks.front() = lo;
    breaks.back() = hi;

    double acc = 0.0;
    for (size_t s = 0; s + 1 < breaks.size(); ++s) {
        double b1 = std::max(breaks[s], lo);
        double b2 = std::min(breaks[s + 1], hi);
        if (b2 - b1 <= 1e-15 * sd) continue;
        double zm = z_at(0.5 * (b1 + b2));
        double mass = norm_cdf((b2 - mean_t) / sd) - norm_cdf((b1 - mean_t) / sd);
        if (zm > 0.0) {
            // fully outside this constraint: psi == 1 in plain mode, and the
            // safe-set indicator kills it otherwise
            if (plain_mode) acc += mass;
            continue;
        }
        if (mass < 1e-16) continue;
        // near a root this is a layer segment; resolve it with a full grid
        bool is_layer = false;
        for (double r : roots) {
            if (std::abs(b1 - r) <= 1e-12 * std::max(1.0, std::abs(r)) ||
                std::abs(b2 - r) <= 1e-12 * std::max(1.0, std::abs(r))) {
                is_layer = true;
            }
        }
        int n_seg = is_layer
                        ? npts
                        : std::max(9, static_cast<int>(npts * (b2 - b1) /
                                                       (hi - lo)));
        const double dtt = (b2 - b1) / n_seg;
        for (int i = 0; i < n_seg; ++i) {
            double tt = b1 + (i + 0.5) * dtt;
            double w = norm_pdf((tt - mean_t) / sd) / sd * dtt;
            acc += w * f(p_base + normal * tt);
        }
    }
    return acc;
}

double quad_position_reduced(const ItoSystem& system, const Constraint& constraint,
                             const StateGaussian& mu, const SafeSet* indicator,
                             double t, double dt, const QuadratureSpec& spec,
                             bool with_scalar_drift_axis) {
    const auto support = leading_support(constraint);
    const int np = static_cast<int>(support.size());
    check_second_order_layout(system, mu.mean, np, t);
    check_indicator_support(indicator, np);

    const Vec u0 = system.zero_control();
    const Mat g_probe = system.diffusion(t, mu.mean, u0);
    const double gp_norm = g_probe.topRows(np).norm();
    if (!with_scalar_drift_axis && gp_norm > 1e-12) {
        throw InvalidReductionError(
            "position_only requires zero diffusion into the workspace rows");
    }

    const ConditionalVelocity cv = velocity_given_position(mu, np);
    const int quad_dims = np + (with_scalar_drift_axis ? 1 : 0);
    const int npts = spec.resolve_points(quad_dims);

    std::vector<double> drift_nodes, drift_weights;
    if (with_scalar_drift_axis) {
        const double du = 2.0 * spec.box_halfwidth_sigmas / npts;
        for (int i = 0; i < npts; ++i) {
            double u = -spec.box_halfwidth_sigmas + (i + 0.5) * du;
            drift_nodes.push_back(u);
            drift_weights.push_back(norm_pdf(u) * du);
        }
    }

    ReducedIntegrand f{&system,  &constraint,   indicator,
                       &cv,      t,             dt,
                       np,       with_scalar_drift_axis,
                       &drift_nodes, &drift_weights, mu.mean};

    // Boundary-normal direction from the gradient at the mean (any unit
    // vector works when the mean sits on the constraint's singular point).
    Vec normal;
    try {
        f.x_eval = mu.mean;
        normal = constraint.gradient(mu.mean).head(np);
    } catch (const SingularPointError&) {
        normal = Vec::Zero(np);
    }
    if (normal.norm() < 1e-12) {
        normal = Vec::Unit(np, 0);
    } else {
        normal.normalize();
    }

    // Rotate so the last axis is the boundary normal; y = Q^T (p - mu_p).
    Mat q(np, np);
    if (np == 1) {
        q(0, 0) = 1.0;
        normal = Vec::Unit(1, 0) * (normal(0) >= 0.0 ? 1.0 : -1.0);
    } else {
        Eigen::HouseholderQR<Mat> qr(normal);
        Mat full = qr.householderQ();
        // householderQ puts the normal direction in the first column
        q.col(np - 1) = full.col(0);
        q.leftCols(np - 1) = full.rightCols(np - 1);
    }
    const Vec n_dir = q.col(np - 1);

    // Joint Gaussian of y: perpendicular block marginal and the 1-D normal
    // coordinate conditioned on it.
    const Mat c_rot = q.transpose() * cv.sigma_pp * q;
    const int nperp = np - 1;
    double acc = 0.0;
    const bool plain_mode = (indicator == nullptr);

    if (nperp == 0) {
        acc = integrate_normal_axis(f, cv.mu_p, n_dir, 0.0, c_rot(0, 0), npts,
                                    spec.box_halfwidth_sigmas, plain_mode);
    } else {
        const Mat c_pp = c_rot.topLeftCorner(nperp, nperp);
        const Vec c_np = c_rot.block(0, nperp, nperp, 1);
        Mat pinv = c_pp.completeOrthogonalDecomposition().pseudoInverse();
        const Vec w_reg = pinv * c_np;
        const double var_cond =
            std::max(0.0, c_rot(nperp, nperp) - c_np.dot(w_reg));

        PrincipalGrid slice_grid = make_grid(Vec::Zero(nperp), c_pp, npts,
                                             spec.box_halfwidth_sigmas);
        const Mat e_perp = q.leftCols(nperp);
        for_each_grid_point(slice_grid, [&](const Vec& y_perp, double w_slice) {
            const Vec p_base = cv.mu_p + e_perp * y_perp;
            const double mean_t = w_reg.dot(y_perp);
            acc += w_slice *
                   integrate_normal_axis(f, p_base, n_dir, mean_t, var_cond, npts,
                                         spec.box_halfwidth_sigmas, plain_mode);
        });
    }
    return acc * mu.weight;
}

}  // namespace

int QuadratureSpec::resolve_points(int dims) const {
    if (points_per_axis > 0) return points_per_axis;
    if (dims <= 2) return 81;
    if (dims == 3) return 41;
    return 15;
}

void QuadratureSpec::validate() const {
    if (points_per_axis != 0 && points_per_axis < 3) {
        throw std::invalid_argument("QuadratureSpec: points_per_axis must be >= 3");
    }
    if (box_halfwidth_sigmas < 3.0) {
        throw std::invalid_argument(
            "QuadratureSpec: box_halfwidth_sigmas must be >= 3");
    }
}

double psi(double z, double h, double sigma, double dt) {
    if (!std::isfinite(z) || !std::isfinite(h) || !std::isfinite(sigma) ||
        !std::isfinite(dt)) {
        throw std::invalid_argument("psi: non-finite input");
    }
    if (dt <= 0.0) throw std::invalid_argument("psi: dt must be positive");
    if (sigma < 0.0) throw std::invalid_argument("psi: sigma must be nonnegative");

    if (z > 0.0) return 1.0;  // already outside at the interval start
    if (sigma == 0.0) {
        return (z + h * dt > 0.0) ? 1.0 : 0.0;  // locally deterministic limit
    }
    if (z == 0.0) return 1.0;  // boundary start crosses immediately a.s.

    const double srt = sigma * std::sqrt(dt);
    const double u1 = (-h * dt - z) / srt;
    const double u2 = (-h * dt + z) / srt;

    const double term1 = norm_cdf_c(u1);
    double term2;
    if (h == 0.0) {
        term2 = norm_cdf(u2);
    } else {
        // exp(-2 h z / sigma^2) * Phi(u2): the exponent is large and positive
        // when h > 0 pushes outward, so combine in log space (the product is
        // bounded by 1).
        const double log_term2 =
            -2.0 * h * z / (sigma * sigma) + log_norm_cdf(u2);
        term2 = (log_term2 < -745.0) ? 0.0 : std::exp(std::min(log_term2, 0.0));
    }
    return std::clamp(term1 + term2, 0.0, 1.0);
}

LocalCoefficients local_coefficients(const ItoSystem& system,
                                     const Constraint& constraint, double t,
                                     const Vec& x, const Vec& u) {
    LocalCoefficients lc;
    lc.z = constraint.g(x);
    const Vec a = constraint.gradient(x);
    const Vec f = system.drift(t, x, u);
    const Mat g = system.diffusion(t, x, u);
    const Mat hess = constraint.hessian(x);
    lc.h = a.dot(f) + 0.5 * (g.transpose() * hess * g).trace();
    lc.sigma = (g.transpose() * a).norm();
    return lc;
}

double interval_exit_prob_constraint(const ItoSystem& system,
                                     const Constraint& constraint,
                                     const StateGaussian& measure,
                                     const SafeSet* indicator, double t_lo,
                                     double t_hi, const QuadratureSpec& spec) {
    if (t_hi <= t_lo) {
        throw std::invalid_argument("interval_exit_prob: t_hi must exceed t_lo");
    }
    spec.validate();
    const double dt = t_hi - t_lo;
    switch (spec.reduction) {
        case Reduction::full:
            return quad_full(system, constraint, measure, indicator, t_lo, dt, spec);
        case Reduction::position_plus_scalar_drift:
            return quad_position_reduced(system, constraint, measure, indicator,
                                         t_lo, dt, spec, true);
        case Reduction::position_only:
            return quad_position_reduced(system, constraint, measure, indicator,
                                         t_lo, dt, spec, false);
    }
    throw std::logic_error("interval_exit_prob: unknown reduction");
}

double interval_exit_prob(const ItoSystem& system, const SafeSet& safe_set,
                          const StateGaussian& measure, double t_lo, double t_hi,
                          const QuadratureSpec& spec, ExitProbMode mode) {
    const SafeSet* indicator =
        (mode == ExitProbMode::safe_weighted) ? &safe_set : nullptr;
    double total = 0.0;
    for (const auto& constraint : safe_set.constraints) {
        total += interval_exit_prob_constraint(system, constraint, measure,
                                               indicator, t_lo, t_hi, spec);
    }
    return std::clamp(total, 0.0, 1.0);
}

double interval_exit_prob(const ItoSystem& system, const SafeSet& safe_set,
                          const GaussianBelief& belief, double t_lo, double t_hi,
                          const QuadratureSpec& spec, ExitProbMode mode) {
    return interval_exit_prob(system, safe_set, belief.state_marginal(), t_lo,
                              t_hi, spec, mode);
}

double pointwise_violation_prob(const Constraint& constraint,
                                const StateGaussian& measure,
                                const QuadratureSpec& spec) {
    spec.validate();
    if (constraint.linear) {
        const double m = constraint.g(measure.mean);
        const Vec a = constraint.gradient(measure.mean);
        const double var = a.dot(measure.cov * a);
        if (var <= kDegenerateVar) {
            return measure.weight * ((m > 0.0) ? 1.0 : 0.0);
        }
        return measure.weight * norm_cdf(m / std::sqrt(var));
    }

    // Indicator quadrature over the constraint's workspace marginal (or the
    // full state if no support is declared).
    int dims = static_cast<int>(measure.mean.size());
    Vec sub_mean = measure.mean;
    Mat sub_cov = measure.cov;
    bool reduced = false;
    if (constraint.workspace_support) {
        const auto support = leading_support(constraint);
        dims = static_cast<int>(support.size());
        sub_mean = measure.mean.head(dims);
        sub_cov = measure.cov.topLeftCorner(dims, dims);
        reduced = true;
    }
    PrincipalGrid grid = make_grid(sub_mean, sub_cov, spec.resolve_points(dims),
                                   spec.box_halfwidth_sigmas);
    Vec x_eval = measure.mean;
    double acc = 0.0;
    for_each_grid_point(grid, [&](const Vec& x, double w) {
        if (reduced) {
            x_eval.head(dims) = x;
        } else {
            x_eval = x;
        }
        if (constraint.g(x_eval) > 0.0) acc += w;
    });
    return acc * measure.weight;
}

Reduction choose_reduction(const ItoSystem& system, const SafeSet& safe_set,
                           const Vec& x_probe) {
    int np = -1;
    for (const auto& c : safe_set.constraints) {
        if (!c.workspace_support) return Reduction::full;
        int s = static_cast<int>(c.workspace_support->size());
        for (size_t i = 0; i < c.workspace_support->size(); ++i) {
            if ((*c.workspace_support)[i] != static_cast<int>(i)) {
                return Reduction::full;
            }
        }
        np = std::max(np, s);
    }
    if (np <= 0 || system.state_dim < 2 * np) return Reduction::full;

    Vec f = system.drift(0.0, x_probe, system.zero_control());
    if ((f.head(np) - x_probe.segment(np, np)).norm() > 1e-9 * (1.0 + x_probe.norm())) {
        return Reduction::full;
    }
    Mat g = system.diffusion(0.0, x_probe, system.zero_control());
    if (g.topRows(np).norm() <= 1e-12) return Reduction::position_only;
    return Reduction::position_plus_scalar_drift;
}

}  // namespace exitrisk
