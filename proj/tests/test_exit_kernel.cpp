#include <doctest.h>

#include <cmath>

#include "exitrisk/exit_kernel.hpp"
#include "exitrisk/rng.hpp"
#include "oracle_helpers.hpp"

using namespace exitrisk;

namespace {

// 1-state system dx = u dt + g_row dW with constraint g(x) = x - b.
ItoSystem scalar_system(double g_row) {
    ItoSystem sys;
    sys.state_dim = 1;
    sys.control_dim = 1;
    sys.noise_dim = 1;
    sys.control_rate_hz = 60.0;
    sys.drift = [](double, const Vec& x, const Vec& u) {
        Vec f(1);
        f(0) = u(0);
        return f;
    };
    Mat g(1, 1);
    g(0, 0) = g_row;
    sys.diffusion = [g](double, const Vec&, const Vec&) { return g; };
    sys.observation_noise_cov = Mat::Identity(1, 1) * 1e-4;
    return sys;
}

StateGaussian gaussian2(double mp, double mv, double sp, double sv, double rho) {
    StateGaussian mu;
    mu.mean = (Vec(2) << mp, mv).finished();
    mu.cov = Mat(2, 2);
    mu.cov << sp * sp, rho * sp * sv, rho * sp * sv, sv * sv;
    return mu;
}

}  // namespace

TEST_CASE("psi boundary and trivial values") {
    CHECK(psi(0.0, -3.0, 1.0, 0.5) == 1.0);
    CHECK(psi(0.0, 7.0, 0.3, 2.0) == 1.0);
    CHECK(psi(-10.0, 0.0, 1.0, 0.01) < 1e-12);
    CHECK(psi(0.5, -10.0, 1.0, 0.1) == 1.0);  // already outside
    // locally deterministic branch
    CHECK(psi(-1.0, 2.0, 0.0, 1.0) == 1.0);
    CHECK(psi(-1.0, 0.5, 0.0, 1.0) == 0.0);
    CHECK(psi(-1.0, 2.0, 0.0, 0.25) == 0.0);
}

TEST_CASE("psi reflection value for driftless Brownian motion") {
    // 2*Phi(-1), from the reflection principle.
    CHECK(psi(-1.0, 0.0, 1.0, 1.0) == doctest::Approx(0.31731050786291415).epsilon(1e-12));
    // identity psi(z,0,sigma,dt) = 2 Phi(z/(sigma sqrt(dt))) to machine precision
    Xoshiro256 rng(7);
    for (int i = 0; i < 100; ++i) {
        double z = -3.0 * rng.uniform() - 1e-3;
        double sigma = 0.2 + 2.0 * rng.uniform();
        double dt = 0.05 + 2.0 * rng.uniform();
        double expected = 2.0 * norm_cdf(z / (sigma * std::sqrt(dt)));
        CHECK(psi(z, 0.0, sigma, dt) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("psi agrees with bridge-corrected first-exit MC at a drifted point") {
    const double z = -0.5, h = 1.0, sigma = 1.0, dt = 0.5;
    auto mc = oracle::scalar_first_exit_mc(z, h, sigma, dt, 20000, 1e-3, 42);
    CHECK(std::abs(psi(z, h, sigma, dt) - mc.estimate) <= 3.0 * mc.standard_error);
}

TEST_CASE("psi range and monotonicity properties") {
    Xoshiro256 rng(123);
    for (int i = 0; i < 2000; ++i) {
        double z = -4.0 * rng.uniform();
        double h = 4.0 * (rng.uniform() - 0.5);
        double sigma = 2.0 * rng.uniform();
        double dt = 0.01 + 2.0 * rng.uniform();
        double v = psi(z, h, sigma, dt);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        if (sigma > 0.0) {
            // deeper start never increases the exit probability
            CHECK(psi(z - 0.5, h, sigma, dt) <= v + 1e-12);
            // stronger outward drift never decreases it
            CHECK(psi(z, h + 0.5, sigma, dt) >= v - 1e-12);
            // longer interval never decreases it
            CHECK(psi(z, h, sigma, dt + 0.5) >= v - 1e-12);
        }
        if (h <= 0.0 && z < 0.0) {
            CHECK(psi(z, h, sigma + 0.5, dt) >= v - 1e-12);
        }
    }
}

TEST_CASE("psi continuity with the sigma -> 0 indicator limit") {
    Xoshiro256 rng(5);
    for (int i = 0; i < 500; ++i) {
        double z = -2.5 * rng.uniform() - 0.01;
        double h = 4.0 * (rng.uniform() - 0.5);
        double dt = 0.05 + 1.5 * rng.uniform();
        if (std::abs(z + h * dt) < 0.05) continue;  // near the discontinuity set
        double lim = psi(z, h, 0.0, dt);
        double near = psi(z, h, 1e-6, dt);
        CHECK(std::abs(near - lim) < 1e-4);
    }
}

TEST_CASE("psi overflow guard for strong drift") {
    // h < 0, z < 0 small: the exponent -2hz/sigma^2 is huge and negative...
    CHECK(psi(-0.01, -50.0, 0.1, 1.0) >= 0.0);
    // ...while h > 0 pushing outward makes it huge and positive; the product
    // must saturate without overflow.
    double v = psi(-0.01, 500.0, 0.05, 1.0);
    CHECK(std::isfinite(v));
    CHECK(v <= 1.0);
    CHECK(v > 0.999);  // certain exit under overwhelming outward drift
    CHECK_THROWS_AS(psi(std::nan(""), 0.0, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(psi(-1.0, 0.0, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(psi(-1.0, 0.0, -1.0, 1.0), std::invalid_argument);
}

TEST_CASE("local_coefficients: linear constraint on the double integrator") {
    ItoSystem sys = double_integrator_1d(0.3);
    Constraint wall = halfplane_constraint((Vec(1) << 1.0).finished(), 5.0);
    Vec x = (Vec(2) << 4.0, 2.0).finished();
    LocalCoefficients lc = local_coefficients(sys, wall, 0.0, x, sys.zero_control());
    CHECK(lc.z == doctest::Approx(-1.0));
    CHECK(lc.h == doctest::Approx(2.0));
    CHECK(lc.sigma == doctest::Approx(0.0));
}

TEST_CASE("local_coefficients: circle constraint drift equals inward speed") {
    // x at distance 2r from the center moving radially inward at speed s.
    ItoSystem sys = dubins_system(0.05, 1e-4, 60.0);
    const double r = 0.5, speed = 1.3;
    Constraint obs = circle_obstacle((Vec(2) << 0.0, 0.0).finished(), r);
    Vec x = Vec::Zero(6);
    x(0) = 2.0 * r;
    x(2) = -speed;  // toward the center
    LocalCoefficients lc = local_coefficients(sys, obs, 0.0, x, sys.zero_control());
    CHECK(lc.h == doctest::Approx(speed).epsilon(1e-9));
    CHECK(lc.z == doctest::Approx(r - 2.0 * r));
    // finite-difference cross-check of the gradient used in h
    Vec fd = oracle::fd_gradient(obs, x);
    CHECK((obs.gradient(x) - fd).norm() < 1e-6);
}

TEST_CASE("local_coefficients: sigma is the diffusion row norm") {
    ItoSystem sys = scalar_system(0.7);
    Constraint level = halfplane_constraint((Vec(1) << 1.0).finished(), 0.0);
    Vec x = (Vec(1) << -0.4).finished();
    LocalCoefficients lc = local_coefficients(sys, level, 0.0, x, sys.zero_control());
    CHECK(lc.sigma == doctest::Approx(0.7));
}

TEST_CASE("interval exit probability of a point mass equals psi") {
    ItoSystem sys = double_integrator_1d(0.3);
    Constraint wall = halfplane_constraint((Vec(1) << 1.0).finished(), 1.0);
    StateGaussian dirac;
    dirac.mean = (Vec(2) << 0.2, 0.9).finished();
    dirac.cov = Mat::Zero(2, 2);

    LocalCoefficients lc =
        local_coefficients(sys, wall, 0.0, dirac.mean, sys.zero_control());
    double expected = psi(lc.z, lc.h, lc.sigma, 0.5);
    QuadratureSpec spec;
    for (Reduction red : {Reduction::full, Reduction::position_only,
                          Reduction::position_plus_scalar_drift}) {
        spec.reduction = red;
        double got =
            interval_exit_prob_constraint(sys, wall, dirac, nullptr, 0.0, 0.5, spec);
        CHECK(got == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("interval exit probability vanishes deep inside with zero drift") {
    ItoSystem sys = double_integrator_1d(0.3);
    Constraint wall = halfplane_constraint((Vec(1) << 1.0).finished(), 10.0);
    StateGaussian mu = gaussian2(0.0, 0.0, 0.5, 0.0, 0.0);  // v exactly 0 => h = 0
    QuadratureSpec spec;
    spec.reduction = Reduction::position_only;
    double p = interval_exit_prob_constraint(sys, wall, mu, nullptr, 0.0, 1.0, spec);
    CHECK(p <= 1e-8);
}

TEST_CASE("reduction equivalence on randomized double-integrator beliefs") {
    ItoSystem sys = double_integrator_1d(0.4);
    Xoshiro256 rng(2024);
    QuadratureSpec q_full, q_pos, q_ps;
    q_full.reduction = Reduction::full;
    q_full.points_per_axis = 801;
    q_pos.reduction = Reduction::position_only;
    q_pos.points_per_axis = 1001;
    q_ps.reduction = Reduction::position_plus_scalar_drift;
    q_ps.points_per_axis = 801;

    for (int trial = 0; trial < 20; ++trial) {
        double b = 0.2 + 0.8 * rng.uniform();
        Constraint wall = halfplane_constraint((Vec(1) << 1.0).finished(), b);
        double mp = 0.5 * (rng.uniform() - 0.5);
        double mv = 1.2 * (rng.uniform() - 0.5);
        double sp = 0.05 + 0.25 * rng.uniform();
        double sv = 0.1 + 0.4 * rng.uniform();
        double rho = 1.6 * (rng.uniform() - 0.5);
        StateGaussian mu = gaussian2(mp, mv, sp, sv, rho);
        double dt = 0.25 + 0.75 * rng.uniform();
        double v_full =
            interval_exit_prob_constraint(sys, wall, mu, nullptr, 0.0, dt, q_full);
        double v_pos =
            interval_exit_prob_constraint(sys, wall, mu, nullptr, 0.0, dt, q_pos);
        double v_ps =
            interval_exit_prob_constraint(sys, wall, mu, nullptr, 0.0, dt, q_ps);
        CHECK(std::abs(v_pos - v_full) < 1e-3);
        CHECK(std::abs(v_ps - v_full) < 1e-3);
    }
}

TEST_CASE("position_only rejects systems with workspace diffusion") {
    ItoSystem sys = scalar_system(0.7);  // noise directly on the constrained coord
    Constraint level = halfplane_constraint((Vec(1) << 1.0).finished(), 1.0);
    StateGaussian mu;
    mu.mean = (Vec(1) << 0.0).finished();
    mu.cov = Mat::Identity(1, 1) * 0.01;
    QuadratureSpec spec;
    spec.reduction = Reduction::position_only;
    CHECK_THROWS_AS(
        interval_exit_prob_constraint(sys, level, mu, nullptr, 0.0, 1.0, spec),
        InvalidReductionError);
}

TEST_CASE("union bound over constraints") {
    ItoSystem sys = double_integrator_1d(0.4);
    StateGaussian mu = gaussian2(0.0, 0.4, 0.2, 0.3, 0.1);
    QuadratureSpec spec;
    spec.reduction = Reduction::position_only;

    SafeSet empty;
    CHECK(interval_exit_prob(sys, empty, mu, 0.0, 0.5, spec, ExitProbMode::plain) == 0.0);

    Constraint wall = halfplane_constraint((Vec(1) << 1.0).finished(), 0.8);
    SafeSet single;
    single.constraints.push_back(wall);
    double one = interval_exit_prob(sys, single, mu, 0.0, 0.5, spec, ExitProbMode::plain);
    double direct = interval_exit_prob_constraint(sys, wall, mu, nullptr, 0.0, 0.5, spec);
    CHECK(one == doctest::Approx(direct));

    SafeSet doubled;
    doubled.constraints.push_back(wall);
    doubled.constraints.push_back(wall);
    double two = interval_exit_prob(sys, doubled, mu, 0.0, 0.5, spec, ExitProbMode::plain);
    CHECK(two == doctest::Approx(std::min(1.0, 2.0 * one)));
}

TEST_CASE("safe-set weighting excludes already-exited mass") {
    ItoSystem sys = double_integrator_1d(0.4);
    Constraint wall = halfplane_constraint((Vec(1) << 1.0).finished(), 0.0);
    SafeSet safe;
    safe.constraints.push_back(wall);
    // Mass sits almost entirely beyond the wall: the indicator kills it.
    StateGaussian mu = gaussian2(0.5, 0.0, 0.05, 0.0, 0.0);
    QuadratureSpec spec;
    spec.reduction = Reduction::position_only;
    double weighted = interval_exit_prob(sys, safe, mu, 0.0, 0.5, spec,
                                         ExitProbMode::safe_weighted);
    CHECK(weighted <= 1e-8);
    // Without the indicator the same measure counts as (almost) fully exited.
    double plain = interval_exit_prob(sys, safe, mu, 0.0, 0.5, spec, ExitProbMode::plain);
    CHECK(plain > 0.99);
}

TEST_CASE("weighted measure scales the integrand") {
    ItoSystem sys = double_integrator_1d(0.4);
    Constraint wall = halfplane_constraint((Vec(1) << 1.0).finished(), 0.5);
    StateGaussian mu = gaussian2(0.0, 0.5, 0.2, 0.3, 0.0);
    QuadratureSpec spec;
    spec.reduction = Reduction::position_only;
    double base = interval_exit_prob_constraint(sys, wall, mu, nullptr, 0.0, 0.5, spec);
    mu.weight = 0.25;
    double scaled = interval_exit_prob_constraint(sys, wall, mu, nullptr, 0.0, 0.5, spec);
    CHECK(scaled == doctest::Approx(0.25 * base).epsilon(1e-12));
}

TEST_CASE("choose_reduction picks the cheapest valid quadrature") {
    ItoSystem dubins = dubins_system(0.05, 1e-4, 60.0);
    SafeSet walls;
    walls.constraints.push_back(
        halfplane_constraint((Vec(2) << 0.0, 1.0).finished(), 0.5));
    Vec probe = Vec::Zero(6);
    CHECK(choose_reduction(dubins, walls, probe) == Reduction::position_only);

    ItoSystem noisy_pos = scalar_system(0.7);
    SafeSet level;
    level.constraints.push_back(halfplane_constraint((Vec(1) << 1.0).finished(), 1.0));
    Vec probe1 = Vec::Zero(1);
    CHECK(choose_reduction(noisy_pos, level, probe1) == Reduction::full);
}
