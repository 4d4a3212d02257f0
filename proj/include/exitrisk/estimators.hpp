#pragma once

#include <string>
#include <vector>

#include "exitrisk/belief.hpp"
#include "exitrisk/exit_kernel.hpp"
#include "exitrisk/sde_models.hpp"

namespace exitrisk {

enum class Method { dt_booles, dt_gauss, ival_gauss, ival_safe, mc };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct TimePartition {
    std::vector<double> times;  // strictly increasing, times[0] == 0

    static TimePartition uniform(double horizon, double hz);
    void validate() const;
    int num_intervals() const { return static_cast<int>(times.size()) - 1; }
    double horizon() const { return times.back(); }
};

// ---------------------------------------------------------------------------
// Risk report: total exit-probability estimate with additive per-row
// contributions. Rows are partition points for the discrete-time methods and
// partition intervals for the interval methods. `total` is the clamped sum;
// the rows themselves are left unclamped so they stay additive diagnostics.
// ---------------------------------------------------------------------------

struct RiskReport {
    Method method = Method::ival_safe;
    double total = 0.0;
    std::vector<double> per_interval;
    Mat per_constraint;                 // rows x num_constraints
    TimePartition partition;
    std::vector<double> retained_mass;  // *_gauss diagnostics (cumulative)
    std::vector<double> row_t_lo, row_t_hi;

    void finalize_total();  // total = min(1, sum(per_interval))
};

/// Discrete-time union bound: per partition point, sum over constraints of
/// P(g_j(x(t_i)) > 0) under the a-priori Gaussian.
RiskReport estimate_dt_booles(const ItoSystem& system, const SafeSet& safe_set,
                              const std::vector<GaussianBelief>& beliefs,
                              const TimePartition& partition,
                              const QuadratureSpec& spec = {});

/// Discrete-time estimate with recursive Gaussian conditioning on past
/// safety; survival-product accounting: contribution_i = (mass so far) *
/// P(unsafe at t_i | conditioned belief), total = 1 - prod(survivals).
RiskReport estimate_dt_gauss(const ItoSystem& system, const SafeSet& safe_set,
                             const LqgDesign& design,
                             const GaussianBelief& initial_belief,
                             const TimePartition& partition);

/// Interval method against the recursive Gaussian anthropic approximation:
/// contribution_i = (retained mass) * interval exit probability of the
/// conditioned Gaussian, no safe-set weighting inside the integrand.
RiskReport estimate_ival_gauss(const ItoSystem& system, const SafeSet& safe_set,
                               const LqgDesign& design,
                               const GaussianBelief& initial_belief,
                               const TimePartition& partition,
                               const QuadratureSpec& spec);

/// Interval method with the indicator bound on the anthropic likelihood:
/// contribution_i = interval exit probability of the plain a-priori belief
/// weighted by 1(x in X_safe). No extra belief propagation.
RiskReport estimate_ival_safe(const ItoSystem& system, const SafeSet& safe_set,
                              const std::vector<GaussianBelief>& beliefs,
                              const TimePartition& partition,
                              const QuadratureSpec& spec);

/// Setup assertion shared by the estimators: the initial belief must be
/// (numerically) certainly safe. Throws std::invalid_argument otherwise.
void require_initially_safe(const SafeSet& safe_set, const GaussianBelief& initial,
                            const QuadratureSpec& spec, double tol = 1e-6);

}  // namespace exitrisk
