#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mobgp/errors.hpp"

namespace mobgp {

/// Value and gradient of a smooth objective.
using Objective = std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)>;

struct AdamConfig {
    int max_iterations = 500;
    double learning_rate = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Step multipliers applied once 50% / 80% of the budget is spent.
    double mid_decay = 0.3;
    double late_decay = 0.09;
    double grad_tolerance = 1e-7;  ///< early exit on small gradients
};

struct BoxBounds {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

struct OptimResult {
    Eigen::VectorXd x;          ///< best iterate seen
    double value = 0.0;         ///< objective at x
    /// Objective value per evaluation, starting at x0; the last entry repeats the
    /// restored best value so the trace always ends at `value`.
    std::vector<double> trace;
    int iterations = 0;
};

/// Deterministic Adam with box projection. The returned iterate is the best one
/// evaluated, so the final value never exceeds the initial one. Throws
/// OptimizationFailed (carrying the trace) when the objective or gradient turns
/// non-finite.
inline OptimResult adam_minimize(const Objective& objective, const Eigen::VectorXd& x0,
                                 const AdamConfig& config, const BoxBounds* bounds = nullptr) {
    const auto project = [&](Eigen::VectorXd& x) {
        if (bounds == nullptr) return;
        x = x.cwiseMax(bounds->lower).cwiseMin(bounds->upper);
    };

    Eigen::VectorXd x = x0;
    project(x);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(x.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(x.size());

    OptimResult result;
    result.x = x;
    result.value = std::numeric_limits<double>::infinity();

    const int budget = config.max_iterations > 0 ? config.max_iterations : 1;
    for (int it = 0; it < budget; ++it) {
        auto [f, g] = objective(x);
        if (!std::isfinite(f) || !g.allFinite()) {
            throw OptimizationFailed("objective became non-finite at iteration " +
                                         std::to_string(it),
                                     std::move(result.trace));
        }
        result.trace.push_back(f);
        if (f < result.value) {
            result.value = f;
            result.x = x;
        }
        result.iterations = it + 1;
        if (g.norm() < config.grad_tolerance) break;

        double lr = config.learning_rate;
        if (it >= (8 * budget) / 10) {
            lr *= config.late_decay;
        } else if (it >= budget / 2) {
            lr *= config.mid_decay;
        }

        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g).eval();
        const double bc1 = 1.0 - std::pow(config.beta1, it + 1);
        const double bc2 = 1.0 - std::pow(config.beta2, it + 1);
        const Eigen::VectorXd step =
            (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + config.epsilon).matrix());
        x -= lr * step;
        project(x);
    }
    result.trace.push_back(result.value);
    return result;
}

}  // namespace mobgp
