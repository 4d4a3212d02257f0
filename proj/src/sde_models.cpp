#include "exitrisk/sde_models.hpp"

#include <cmath>

namespace exitrisk {

void ItoSystem::validate(const Vec& x_probe) const {
    if (state_dim <= 0 || control_dim < 0 || noise_dim <= 0) {
        throw std::invalid_argument("ItoSystem: bad dimensions");
    }
    if (control_rate_hz <= 0.0) {
        throw std::invalid_argument("ItoSystem: control_rate_hz must be positive");
    }
    Vec u = Vec::Zero(control_dim);
    Vec f = drift(0.0, x_probe, u);
    if (f.size() != state_dim) {
        throw std::invalid_argument("ItoSystem: drift output has wrong dimension");
    }
    Mat g = diffusion(0.0, x_probe, u);
    if (g.rows() != state_dim || g.cols() != noise_dim) {
        throw std::invalid_argument("ItoSystem: diffusion output has wrong shape");
    }
    if (observation_noise_cov.rows() != state_dim ||
        observation_noise_cov.cols() != state_dim) {
        throw std::invalid_argument("ItoSystem: observation_noise_cov has wrong shape");
    }
    require_psd(observation_noise_cov, 1e-12, "observation_noise_cov");
}

void FeedbackPolicy::validate(const ItoSystem& system, double horizon) const {
    const int ticks = static_cast<int>(std::llround(horizon * system.control_rate_hz));
    if (std::abs(horizon * system.control_rate_hz - ticks) > 1e-6) {
        throw std::invalid_argument(
            "FeedbackPolicy: horizon is not a whole number of control ticks");
    }
    if (static_cast<int>(nominal_controls.size()) < ticks ||
        static_cast<int>(nominal_states.size()) < ticks + 1 ||
        gains.size() < nominal_controls.size()) {
        throw std::invalid_argument("FeedbackPolicy: sequences do not cover the horizon");
    }
}

ItoSystem dubins_system(double noise_scale, double obs_noise_var,
                        double control_rate_hz) {
    if (noise_scale <= 0.0) {
        throw std::invalid_argument("dubins_system: noise_scale must be positive");
    }
    if (obs_noise_var < 0.0) {
        throw std::invalid_argument("dubins_system: obs_noise_var must be nonnegative");
    }

    ItoSystem sys;
    sys.state_dim = 6;
    sys.control_dim = 2;
    sys.noise_dim = 4;
    sys.control_rate_hz = control_rate_hz;

    // x = (p_x, p_y, v_x, v_y, theta, omega), u = (thrust c, angular accel).
    sys.drift = [](double, const Vec& x, const Vec& u) {
        Vec f(6);
        f(0) = x(2);
        f(1) = x(3);
        f(2) = u(0) * std::cos(x(4));
        f(3) = u(0) * std::sin(x(4));
        f(4) = x(5);
        f(5) = u(1);
        return f;
    };

    Mat g = Mat::Zero(6, 4);
    g(2, 0) = noise_scale;
    g(3, 1) = noise_scale;
    g(4, 2) = 0.1 * noise_scale;
    g(5, 3) = noise_scale;
    sys.diffusion = [g](double, const Vec&, const Vec&) { return g; };

    sys.observation_noise_cov = obs_noise_var * Mat::Identity(6, 6);
    return sys;
}

ItoSystem double_integrator_1d(double noise, double obs_noise_var,
                               double control_rate_hz) {
    if (noise <= 0.0) {
        throw std::invalid_argument("double_integrator_1d: noise must be positive");
    }
    ItoSystem sys;
    sys.state_dim = 2;
    sys.control_dim = 1;
    sys.noise_dim = 1;
    sys.control_rate_hz = control_rate_hz;
    sys.drift = [](double, const Vec& x, const Vec& u) {
        Vec f(2);
        f(0) = x(1);
        f(1) = u(0);
        return f;
    };
    Mat g = Mat::Zero(2, 1);
    g(1, 0) = noise;
    sys.diffusion = [g](double, const Vec&, const Vec&) { return g; };
    sys.observation_noise_cov = obs_noise_var * Mat::Identity(2, 2);
    return sys;
}

Constraint circle_obstacle(const Vec& center, double radius) {
    if (radius <= 0.0) {
        throw std::invalid_argument("circle_obstacle: radius must be positive");
    }
    const int np = static_cast<int>(center.size());
    Constraint c;
    c.name = "circle";
    std::vector<int> support(np);
    for (int i = 0; i < np; ++i) support[i] = i;
    c.workspace_support = support;

    c.g = [center, radius, np](const Vec& x) {
        return radius - (x.head(np) - center).norm();
    };
    c.gradient = [center, radius, np](const Vec& x) {
        Vec d = x.head(np) - center;
        double n = d.norm();
        if (n < 1e-12 * std::max(1.0, radius)) {
            throw SingularPointError("circle_obstacle: gradient at the center");
        }
        Vec grad = Vec::Zero(x.size());
        grad.head(np) = -d / n;
        return grad;
    };
    c.hessian = [center, radius, np](const Vec& x) {
        Vec d = x.head(np) - center;
        double n = d.norm();
        if (n < 1e-12 * std::max(1.0, radius)) {
            throw SingularPointError("circle_obstacle: hessian at the center");
        }
        Mat h = Mat::Zero(x.size(), x.size());
        h.topLeftCorner(np, np) =
            d * d.transpose() / (n * n * n) - Mat::Identity(np, np) / n;
        return h;
    };
    return c;
}

Constraint halfplane_constraint(const Vec& normal, double offset) {
    if (normal.norm() <= 0.0) {
        throw std::invalid_argument("halfplane_constraint: zero normal");
    }
    const int np = static_cast<int>(normal.size());
    Constraint c;
    c.name = "halfplane";
    c.linear = true;
    std::vector<int> support(np);
    for (int i = 0; i < np; ++i) support[i] = i;
    c.workspace_support = support;

    c.g = [normal, offset, np](const Vec& x) {
        return normal.dot(x.head(np)) - offset;
    };
    c.gradient = [normal, np](const Vec& x) {
        Vec grad = Vec::Zero(x.size());
        grad.head(np) = normal;
        return grad;
    };
    c.hessian = [](const Vec& x) { return Mat::Zero(x.size(), x.size()); };
    return c;
}

}  // namespace exitrisk
