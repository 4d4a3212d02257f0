#include "exitrisk/estimators.hpp"

#include <algorithm>
#include <cmath>

namespace exitrisk {

namespace {

void check_alignment(const std::vector<GaussianBelief>& beliefs,
                     const TimePartition& partition) {
    if (beliefs.size() != partition.times.size()) {
        throw std::invalid_argument("estimator: belief count does not match partition");
    }
    for (size_t i = 0; i < beliefs.size(); ++i) {
        if (std::abs(beliefs[i].time - partition.times[i]) > 1e-9) {
            throw std::invalid_argument("estimator: belief times misaligned with partition");
        }
    }
}

}  // namespace

std::string method_name(Method m) {
    switch (m) {
        case Method::dt_booles: return "dt_booles";
        case Method::dt_gauss: return "dt_gauss";
        case Method::ival_gauss: return "ival_gauss";
        case Method::ival_safe: return "ival_safe";
        case Method::mc: return "mc";
    }
    return "unknown";
}

Method method_from_name(const std::string& name) {
    if (name == "dt_booles") return Method::dt_booles;
    if (name == "dt_gauss") return Method::dt_gauss;
    if (name == "ival_gauss") return Method::ival_gauss;
    if (name == "ival_safe") return Method::ival_safe;
    if (name == "mc") return Method::mc;
    throw std::invalid_argument("unknown method: " + name);
}

TimePartition TimePartition::uniform(double horizon, double hz) {
    if (horizon <= 0.0 || hz <= 0.0) {
        throw std::invalid_argument("TimePartition: horizon and hz must be positive");
    }
    const double steps = horizon * hz;
    const int k = static_cast<int>(std::llround(steps));
    if (k < 1 || std::abs(steps - k) > 1e-6) {
        throw std::invalid_argument(
            "TimePartition: horizon is not a whole number of partition steps");
    }
    TimePartition p;
    p.times.resize(k + 1);
    for (int i = 0; i <= k; ++i) p.times[i] = horizon * i / k;
    return p;
}

void TimePartition::validate() const {
    if (times.size() < 2) {
        throw std::invalid_argument("TimePartition: need at least two times");
    }
    if (std::abs(times.front()) > 1e-12) {
        throw std::invalid_argument("TimePartition: must start at t = 0");
    }
    for (size_t i = 1; i < times.size(); ++i) {
        if (times[i] <= times[i - 1]) {
            throw std::invalid_argument("TimePartition: times must be strictly increasing");
        }
    }
}

void RiskReport::finalize_total() {
    double sum = 0.0;
    for (double c : per_interval) sum += c;
    total = std::min(1.0, sum);
}

void require_initially_safe(const SafeSet& safe_set, const GaussianBelief& initial,
                            const QuadratureSpec& spec, double tol) {
    StateGaussian mu = initial.state_marginal();
    double violation = 0.0;
    for (const auto& c : safe_set.constraints) {
        violation += pointwise_violation_prob(c, mu, spec);
    }
    if (violation >= tol) {
        throw std::invalid_argument(
            "initial belief is not certainly safe: P(x0 unsafe) ~ " +
            std::to_string(violation));
    }
}

RiskReport estimate_dt_booles(const ItoSystem& system, const SafeSet& safe_set,
                              const std::vector<GaussianBelief>& beliefs,
                              const TimePartition& partition,
                              const QuadratureSpec& spec) {
    (void)system;
    partition.validate();
    check_alignment(beliefs, partition);
    const int steps = static_cast<int>(partition.times.size());
    const int m = safe_set.size();

    RiskReport report;
    report.method = Method::dt_booles;
    report.partition = partition;
    report.per_interval.assign(steps, 0.0);
    report.per_constraint = Mat::Zero(steps, m);
    report.row_t_lo = partition.times;
    report.row_t_hi = partition.times;

    for (int i = 0; i < steps; ++i) {
        StateGaussian mu = beliefs[i].state_marginal();
        double step = 0.0;
        for (int j = 0; j < m; ++j) {
            double pj = pointwise_violation_prob(safe_set.constraints[j], mu, spec);
            report.per_constraint(i, j) = pj;
            step += pj;
        }
        report.per_interval[i] = step;
    }
    report.finalize_total();
    return report;
}

RiskReport estimate_dt_gauss(const ItoSystem& system, const SafeSet& safe_set,
                             const LqgDesign& design,
                             const GaussianBelief& initial_belief,
                             const TimePartition& partition) {
    partition.validate();
    const int steps = static_cast<int>(partition.times.size());
    const int m = safe_set.size();

    RiskReport report;
    report.method = Method::dt_gauss;
    report.partition = partition;
    report.per_interval.assign(steps, 0.0);
    report.per_constraint = Mat::Zero(steps, m);
    report.row_t_lo = partition.times;
    report.row_t_hi = partition.times;

    GaussianBelief cur = initial_belief;
    double mass_so_far = 1.0;
    for (int i = 0; i < steps; ++i) {
        if (i > 0) {
            cur = propagate_belief(system, design, cur, partition.times[i - 1],
                                   partition.times[i]);
        }
        cur.time = partition.times[i];
        bool degenerate = false;
        double step_mass = 1.0;
        GaussianBelief conditioned = cur;
        double mass_before_j = 1.0;
        try {
            // Sequential per-constraint conditioning; attribute the mass
            // decrement of each constraint to its column.
            for (int j = 0; j < m; ++j) {
                SafeSet single;
                single.constraints.push_back(safe_set.constraints[j]);
                auto [next, mj] = condition_on_safety(conditioned, single);
                conditioned = next;
                report.per_constraint(i, j) = mass_so_far * mass_before_j * (1.0 - mj);
                mass_before_j *= mj;
            }
            step_mass = mass_before_j;
        } catch (const DegenerateTruncationError&) {
            degenerate = true;
        }

        if (degenerate) {
            report.per_interval[i] = mass_so_far;  // everything remaining exits
            mass_so_far = 0.0;
            report.retained_mass.push_back(0.0);
            break;
        }
        report.per_interval[i] = mass_so_far * (1.0 - step_mass);
        mass_so_far *= step_mass;
        report.retained_mass.push_back(mass_so_far);
        cur = conditioned;
    }
    report.finalize_total();
    return report;
}

RiskReport estimate_ival_gauss(const ItoSystem& system, const SafeSet& safe_set,
                               const LqgDesign& design,
                               const GaussianBelief& initial_belief,
                               const TimePartition& partition,
                               const QuadratureSpec& spec) {
    partition.validate();
    const int k = partition.num_intervals();
    const int m = safe_set.size();

    RiskReport report;
    report.method = Method::ival_gauss;
    report.partition = partition;
    report.per_interval.assign(k, 0.0);
    report.per_constraint = Mat::Zero(k, m);
    report.row_t_lo.assign(partition.times.begin(), partition.times.end() - 1);
    report.row_t_hi.assign(partition.times.begin() + 1, partition.times.end());

    GaussianBelief cur = initial_belief;
    double mass_so_far = 1.0;
    for (int i = 0; i < k; ++i) {
        if (i > 0) {
            cur = propagate_belief(system, design, cur, partition.times[i - 1],
                                   partition.times[i]);
        }
        cur.time = partition.times[i];
        try {
            auto [conditioned, mass] = condition_on_safety(cur, safe_set);
            cur = conditioned;
            mass_so_far *= mass;
        } catch (const DegenerateTruncationError&) {
            report.per_interval[i] = mass_so_far;  // saturate: a.s. unsafe
            report.retained_mass.push_back(0.0);
            mass_so_far = 0.0;
            break;
        }
        report.retained_mass.push_back(mass_so_far);

        StateGaussian pi_hat = cur.state_marginal();
        pi_hat.weight = mass_so_far;
        double step = 0.0;
        for (int j = 0; j < m; ++j) {
            double pj = interval_exit_prob_constraint(
                system, safe_set.constraints[j], pi_hat, nullptr,
                partition.times[i], partition.times[i + 1], spec);
            report.per_constraint(i, j) = pj;
            step += pj;
        }
        report.per_interval[i] = std::min(step, 1.0);
    }
    report.finalize_total();
    return report;
}

RiskReport estimate_ival_safe(const ItoSystem& system, const SafeSet& safe_set,
                              const std::vector<GaussianBelief>& beliefs,
                              const TimePartition& partition,
                              const QuadratureSpec& spec) {
    partition.validate();
    check_alignment(beliefs, partition);
    const int k = partition.num_intervals();
    const int m = safe_set.size();

    RiskReport report;
    report.method = Method::ival_safe;
    report.partition = partition;
    report.per_interval.assign(k, 0.0);
    report.per_constraint = Mat::Zero(k, m);
    report.row_t_lo.assign(partition.times.begin(), partition.times.end() - 1);
    report.row_t_hi.assign(partition.times.begin() + 1, partition.times.end());

    for (int i = 0; i < k; ++i) {
        StateGaussian mu = beliefs[i].state_marginal();
        double step = 0.0;
        for (int j = 0; j < m; ++j) {
            double pj = interval_exit_prob_constraint(
                system, safe_set.constraints[j], mu, &safe_set,
                partition.times[i], partition.times[i + 1], spec);
            report.per_constraint(i, j) = pj;
            step += pj;
        }
        report.per_interval[i] = std::min(step, 1.0);
    }
    report.finalize_total();
    return report;
}

}  // namespace exitrisk
