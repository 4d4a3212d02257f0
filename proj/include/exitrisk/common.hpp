#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace exitrisk {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ExitriskError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Constraint evaluated at a point where it is not differentiable.
struct SingularPointError : ExitriskError {
    using ExitriskError::ExitriskError;
};

/// Conditioning removed (almost) all probability mass.
struct DegenerateTruncationError : ExitriskError {
    using ExitriskError::ExitriskError;
};

/// Covariance lost positive semidefiniteness beyond the allowed slack.
struct NumericalConditioningError : ExitriskError {
    using ExitriskError::ExitriskError;
};

/// A quadrature reduction was requested that the system does not admit.
struct InvalidReductionError : ExitriskError {
    using ExitriskError::ExitriskError;
};

struct NominalCollisionError : ExitriskError {
    using ExitriskError::ExitriskError;
};

struct TemplateInfeasibleError : ExitriskError {
    using ExitriskError::ExitriskError;
};

struct SimulationBlowupError : ExitriskError {
    SimulationBlowupError(const std::string& msg, int rollout)
        : ExitriskError(msg), rollout_index(rollout) {}
    int rollout_index;
};

// ---------------------------------------------------------------------------
// Scalar normal distribution helpers
// ---------------------------------------------------------------------------

inline constexpr double kSqrt2 = 1.4142135623730951;
inline constexpr double kSqrt2Pi = 2.5066282746310002;

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / kSqrt2Pi; }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

/// Upper tail P(Z > x), accurate for large positive x.
inline double norm_cdf_c(double x) { return 0.5 * std::erfc(x / kSqrt2); }

/// log P(Z <= x). Switches to the asymptotic Mills-ratio expansion for
/// x << 0 where erfc underflows.
inline double log_norm_cdf(double x) {
    if (x > -10.0) {
        return std::log(norm_cdf(x));
    }
    const double x2 = x * x;
    // Phi(x) ~ phi(x)/(-x) * (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8)
    double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)
                    + 105.0 / (x2 * x2 * x2 * x2);
    return -0.5 * x2 - std::log(-x * kSqrt2Pi) + std::log(series);
}

// ---------------------------------------------------------------------------
// Small matrix utilities
// ---------------------------------------------------------------------------

inline void symmetrize(Mat& m) { m = 0.5 * (m + m.transpose()).eval(); }

/// Throws NumericalConditioningError if the symmetric matrix has an
/// eigenvalue below -slack.
void require_psd(const Mat& cov, double slack, const std::string& context);

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// within slack are clamped to zero.
Mat psd_sqrt(const Mat& cov);

// ---------------------------------------------------------------------------
// Thread cap (EXITRISK_THREADS)
// ---------------------------------------------------------------------------

/// Number of worker threads to use: min(EXITRISK_THREADS, hardware), >= 1.
int max_threads();

/// Runs f(i) for i in [0, n) over a static block partition. Results must be
/// written to index-keyed storage so the outcome is independent of the
/// thread count.
void parallel_for_index(int n, int num_threads, const std::function<void(int)>& f);

}  // namespace exitrisk
