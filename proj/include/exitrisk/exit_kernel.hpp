#pragma once

#include "exitrisk/belief.hpp"
#include "exitrisk/sde_models.hpp"

namespace exitrisk {

// ---------------------------------------------------------------------------
// Per-interval exit probabilities for the piecewise constant-coefficient
// approximation of the constraint-space process: coefficients (z, h, sigma)
// are frozen at the interval start and the closed-form scalar kernel psi is
// integrated against the supplied state measure.
// ---------------------------------------------------------------------------

/// Frozen scalar coefficients of one constraint over one interval.
struct LocalCoefficients {
    double z = 0.0;      // constraint value g_j(x), safe iff <= 0
    double h = 0.0;      // drift of g_j(x(t)) per Ito's formula
    double sigma = 0.0;  // diffusion row norm ||a_j^T G||
    double dt = 0.0;     // interval length (0 when produced without one)
};

/// Probability that a scalar diffusion dz = h ds + sigma dW starting at
/// z <= 0 crosses zero within dt:
///   1 - Phi((-h dt - z)/(sigma sqrt(dt))) +
///   exp(-2 h z / sigma^2) Phi((-h dt + z)/(sigma sqrt(dt)))
/// For sigma == 0 this is the deterministic indicator 1(z + h dt > 0).
/// Starting points z > 0 are already outside, so the result is 1.
/// The exponential factor is evaluated in log space; result is in [0, 1].
double psi(double z, double h, double sigma, double dt);

/// Coefficients of the frozen process at (t, x, u):
///   z = g(x),  h = a^T f + 0.5 tr(G^T H G),  sigma = ||a^T G||.
/// dt is left zero.
LocalCoefficients local_coefficients(const ItoSystem& system,
                                     const Constraint& constraint, double t,
                                     const Vec& x, const Vec& u);

enum class Reduction {
    full,                        // tensor grid over all state dimensions
    position_plus_scalar_drift,  // grid over positions x 1-D conditional drift
    position_only,               // positions only; drift integral closed form
};

struct QuadratureSpec {
    /// Points per integration axis; 0 selects 81 for <= 2 dims, 41 for 3,
    /// and 15 beyond that.
    int points_per_axis = 0;
    double box_halfwidth_sigmas = 5.0;
    Reduction reduction = Reduction::full;

    int resolve_points(int dims) const;
    void validate() const;
};

enum class ExitProbMode { plain, safe_weighted };

/// Integrates psi for one constraint against the Gaussian measure (times
/// measure.weight). When `indicator` is non-null the integrand carries the
/// anthropic-likelihood bound 1(x in X_safe), restricting exit flow to mass
/// still safe at the interval start.
double interval_exit_prob_constraint(const ItoSystem& system,
                                     const Constraint& constraint,
                                     const StateGaussian& measure,
                                     const SafeSet* indicator, double t_lo,
                                     double t_hi, const QuadratureSpec& spec);

/// Union bound over constraints, clamped to [0, 1]. mode == safe_weighted
/// weights the integrand by 1(x in X_safe).
double interval_exit_prob(const ItoSystem& system, const SafeSet& safe_set,
                          const StateGaussian& measure, double t_lo, double t_hi,
                          const QuadratureSpec& spec, ExitProbMode mode);

double interval_exit_prob(const ItoSystem& system, const SafeSet& safe_set,
                          const GaussianBelief& belief, double t_lo, double t_hi,
                          const QuadratureSpec& spec, ExitProbMode mode);

/// Instantaneous violation probability P(g_j(x) > 0) under the state measure:
/// closed form for linear constraints, indicator quadrature over the
/// workspace marginal otherwise. Used by the discrete-time baselines.
double pointwise_violation_prob(const Constraint& constraint,
                                const StateGaussian& measure,
                                const QuadratureSpec& spec);

/// position_only when no diffusion enters the workspace rows, otherwise
/// position_plus_scalar_drift when every constraint has workspace support,
/// otherwise full.
Reduction choose_reduction(const ItoSystem& system, const SafeSet& safe_set,
                           const Vec& x_probe);

}  // namespace exitrisk
