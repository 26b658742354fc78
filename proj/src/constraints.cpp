#include "mobgp/constraints.hpp"

#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "mobgp/errors.hpp"

namespace mobgp {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void tally(ViolationStats& stats, double violation, double tolerance) {
    ++stats.evaluated;
    if (violation > stats.max) stats.max = violation;
    stats.mean += violation;  // finalized to an average afterwards
    if (violation > tolerance) ++stats.count;
}

void finalize(ViolationStats& stats) {
    if (stats.evaluated > 0) stats.mean /= static_cast<double>(stats.evaluated);
}

ConstraintReport summarize(const Eigen::MatrixXd& values, double tolerance,
                           double nonneg_margin) {
    ConstraintReport report;
    report.tolerance = tolerance;
    report.min_value = std::numeric_limits<double>::infinity();
    for (Eigen::Index u = 0; u < values.rows(); ++u) {
        tally(report.pause_row, std::abs(values(u, kTaskPP) + values(u, kTaskPM) - 1.0),
              tolerance);
        tally(report.move_row, std::abs(values(u, kTaskMM) + values(u, kTaskMP) - 1.0),
              tolerance);
        for (int l = 0; l < kNumTasks; ++l) {
            tally(report.nonneg, std::max(0.0, nonneg_margin - values(u, l)), tolerance);
            if (values(u, l) < report.min_value) report.min_value = values(u, l);
        }
    }
    finalize(report.pause_row);
    finalize(report.move_row);
    finalize(report.nonneg);
    if (!std::isfinite(report.min_value)) {
        report.min_value = std::numeric_limits<double>::quiet_NaN();
    }
    return report;
}

}  // namespace

Eigen::VectorXd uniform_constraint_points(int count) {
    if (count <= 0) throw InvalidCount("constraint point count must be positive");
    Eigen::VectorXd points(count);
    for (int u = 0; u < count; ++u) {
        points[u] = TimeBinScheme::hours_per_week * static_cast<double>(u) / count;
    }
    return points;
}

Eigen::VectorXd bin_center_constraint_points(TimeBinScheme scheme) {
    Eigen::VectorXd points(scheme.total_bins());
    for (int b = 0; b < scheme.total_bins(); ++b) points[b] = scheme.bin_center_hours(b);
    return points;
}

ConstrainedFitOutcome fit_constrained(const TrainingSet& data, const FitConfig& fit_config,
                                      const Eigen::VectorXd& points,
                                      const ConstraintConfig& constraints) {
    if (constraints.escalations < 0) throw InvalidCount("escalation count must be >= 0");
    const auto start = Clock::now();

    MeanPenalty penalty;
    penalty.points = points;
    penalty.weight = constraints.penalty_weight;
    penalty.nonneg_margin = constraints.nonneg_margin;

    const bool active = points.size() > 0 && constraints.penalty_weight > 0.0;
    const int stages = active ? constraints.escalations + 1 : 1;

    FitConfig stage_config = fit_config;
    FitReport report;
    std::optional<FitOutcome> outcome;
    for (int s = 0; s < stages; ++s) {
        FitOutcome fitted = fit(data, stage_config, active ? &penalty : nullptr);
        if (s == 0) {
            report.initial_nll = fitted.report.initial_nll;
            report.solver_used = fitted.report.solver_used;
        }
        report.loss_trace.insert(report.loss_trace.end(), fitted.report.loss_trace.begin(),
                                 fitted.report.loss_trace.end());
        report.iterations += fitted.report.iterations;
        report.final_nll = fitted.report.final_nll;
        stage_config.initial = fitted.model.hyper();  // warm start the next stage
        if (constraints.refine_iterations > 0) {
            stage_config.max_iterations = constraints.refine_iterations;
        }
        outcome = std::move(fitted);
        penalty.weight *= constraints.multiplier;
    }

    ConstraintReport final_report =
        evaluate_constraints(outcome->model, points, 1e-6, constraints.nonneg_margin);
    final_report.wall_time_ms = ms_since(start);
    return {std::move(outcome->model), std::move(report), std::move(final_report)};
}

ConstraintReport evaluate_constraints(const MultiTaskGP& model, const Eigen::VectorXd& points,
                                      double tolerance, double nonneg_margin) {
    const auto start = Clock::now();
    if (points.size() == 0) {
        ConstraintReport report;
        report.tolerance = tolerance;
        report.wall_time_ms = ms_since(start);
        return report;
    }
    if (model.training().tasks() != kNumTasks) {
        throw DimensionError("constraint evaluation expects the four transition tasks");
    }
    ConstraintReport report = summarize(model.posterior_mean(points), tolerance, nonneg_margin);
    report.wall_time_ms = ms_since(start);
    return report;
}

ConstraintReport evaluate_constraints(const TransitionDataset& dataset, double tolerance) {
    const auto start = Clock::now();
    std::vector<int> rows;
    for (int b = 0; b < static_cast<int>(dataset.rows.size()); ++b) {
        const TransitionRow& r = dataset.rows[b];
        if (!r.missing_pause && !r.missing_move) rows.push_back(b);
    }
    Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), kNumTasks);
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        const TransitionRow& r = dataset.rows[rows[static_cast<std::size_t>(i)]];
        values(i, kTaskPP) = r.a_pp;
        values(i, kTaskPM) = r.a_pm;
        values(i, kTaskMM) = r.a_mm;
        values(i, kTaskMP) = r.a_mp;
    }
    ConstraintReport report = summarize(values, tolerance, 0.0);
    report.wall_time_ms = ms_since(start);
    return report;
}

std::string report_to_json(const ConstraintReport& report, bool include_wall_time) {
    const auto stats = [](const ViolationStats& s) {
        return nlohmann::json{
            {"max", s.max}, {"mean", s.mean}, {"count", s.count}, {"evaluated", s.evaluated}};
    };
    nlohmann::json j;
    j["pause_row"] = stats(report.pause_row);
    j["move_row"] = stats(report.move_row);
    j["nonneg"] = stats(report.nonneg);
    j["min_value"] = report.min_value;
    j["tolerance"] = report.tolerance;
    if (include_wall_time) j["wall_time_ms"] = report.wall_time_ms;
    return j.dump(2) + "\n";
}

}  // namespace mobgp
