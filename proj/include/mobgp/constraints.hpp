#pragma once

#include <Eigen/Dense>
#include <string>

#include "mobgp/gp.hpp"
#include "mobgp/report.hpp"

namespace mobgp {

/// m week-phase hours spread uniformly over the cycle starting at 0: 168*u/m.
Eigen::VectorXd uniform_constraint_points(int count);

/// The training grid's bin centers.
Eigen::VectorXd bin_center_constraint_points(TimeBinScheme scheme);

/// Penalty escalation schedule: stages run the fit with weight
/// penalty_weight * multiplier^s for s = 0..escalations, each warm-started from the last.
struct ConstraintConfig {
    double penalty_weight = 10.0;
    double multiplier = 10.0;
    int escalations = 3;
    double nonneg_margin = 0.0;
    /// Iteration budget for the warm-started stages after the first (0 = same budget
    /// as the first stage).
    int refine_iterations = 150;
};

struct ConstrainedFitOutcome {
    MultiTaskGP model;
    FitReport report;  ///< loss trace concatenated over all stages
    ConstraintReport constraints;
};

/// Fits with a quadratic penalty on the posterior means at `points` (row sums to one,
/// non-negativity), escalating the weight per ConstraintConfig. A zero penalty weight
/// reduces to the plain fit. Records wall time in the constraint report.
ConstrainedFitOutcome fit_constrained(const TrainingSet& data, const FitConfig& fit_config,
                                      const Eigen::VectorXd& points,
                                      const ConstraintConfig& constraints);

/// Evaluates the stochasticity and non-negativity of the model's posterior means at
/// `points`; violations smaller than `tolerance` do not count. Measures wall time.
ConstraintReport evaluate_constraints(const MultiTaskGP& model, const Eigen::VectorXd& points,
                                      double tolerance = 1e-6, double nonneg_margin = 0.0);

/// Same summary for an empirical dataset's observed rows (both origins present).
ConstraintReport evaluate_constraints(const TransitionDataset& dataset, double tolerance = 1e-6);

/// JSON form of a report. Wall time is optional so byte-stable outputs can skip it.
std::string report_to_json(const ConstraintReport& report, bool include_wall_time);

}  // namespace mobgp
