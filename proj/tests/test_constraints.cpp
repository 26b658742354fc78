#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mobgp/constraints.hpp"
#include "mobgp/errors.hpp"
#include "mobgp/gp.hpp"
#include "mobgp/rng.hpp"
#include "oracles.hpp"

using namespace mobgp;

namespace {

TransitionDataset noisy_dataset(std::uint64_t seed, double noise_sd) {
    const TimeBinScheme scheme = make_scheme(1);
    Rng rng(seed, 0);
    TransitionDataset ds;
    ds.scheme = scheme;
    ds.rows.resize(168);
    for (int b = 0; b < 168; ++b) {
        const double h = scheme.bin_center_hours(b);
        const double w = 2.0 * M_PI * h / 168.0;
        const double pm = 0.3 + 0.15 * std::sin(w) + noise_sd * rng.normal();
        const double mp = 0.45 + 0.12 * std::cos(w) + noise_sd * rng.normal();
        ds.rows[b] = TransitionRow{1.0 - pm, pm, 1.0 - mp, mp, 60, 60, false, false};
    }
    return ds;
}

Hyperparameters some_hyper(const TrainingSet& data) {
    Hyperparameters h;
    h.kernel = KernelSpec{KernelFamily::RBF, 10.0, 0.05, true};
    Eigen::MatrixXd L = Eigen::MatrixXd::Identity(4, 4) * 0.25;
    L(1, 0) = 0.06;
    L(3, 2) = -0.04;
    h.task.cholesky_factor = L;
    h.noise_variance = Eigen::VectorXd::Constant(4, 0.003);
    h.mean = data.task_means();
    return h;
}

/// What the penalty should add, recomputed from the model's own posterior means.
double penalty_by_hand(const MultiTaskGP& model, const MeanPenalty& penalty) {
    const Eigen::MatrixXd post = model.posterior_mean(penalty.points);
    double total = 0.0;
    for (Eigen::Index u = 0; u < post.rows(); ++u) {
        const double rp = post(u, kTaskPP) + post(u, kTaskPM) - 1.0;
        const double rm = post(u, kTaskMM) + post(u, kTaskMP) - 1.0;
        total += rp * rp + rm * rm;
        for (int l = 0; l < kNumTasks; ++l) {
            const double h = penalty.nonneg_margin - post(u, l);
            if (h > 0.0) total += h * h;
        }
    }
    return penalty.weight * total;
}

}  // namespace

TEST_CASE("constraint point grids") {
    const Eigen::VectorXd u4 = uniform_constraint_points(4);
    REQUIRE(u4.size() == 4);
    CHECK(u4[0] == 0.0);
    CHECK(u4[1] == doctest::Approx(42.0));
    CHECK(u4[2] == doctest::Approx(84.0));
    CHECK(u4[3] == doctest::Approx(126.0));
    CHECK_THROWS_AS(uniform_constraint_points(0), InvalidCount);
    CHECK_THROWS_AS(uniform_constraint_points(-3), InvalidCount);

    const Eigen::VectorXd centers = bin_center_constraint_points(make_scheme(2));
    REQUIRE(centers.size() == 336);
    CHECK(centers[0] == doctest::Approx(0.25));
    CHECK(centers[1] == doctest::Approx(0.75));
    CHECK(centers[335] == doctest::Approx(167.75));
}

TEST_CASE("model constraint evaluation matches a hand tally") {
    const TrainingSet data = TrainingSet::from_dataset(noisy_dataset(31, 0.03));
    const MultiTaskGP model(some_hyper(data), data);
    const Eigen::VectorXd points = uniform_constraint_points(25);
    const double tolerance = 1e-4;
    const double margin = 0.01;
    const ConstraintReport report = evaluate_constraints(model, points, tolerance, margin);

    const Eigen::MatrixXd post = model.posterior_mean(points);
    double pmax = 0.0, psum = 0.0, mmax = 0.0, msum = 0.0, nmax = 0.0, nsum = 0.0;
    double lowest = std::numeric_limits<double>::infinity();
    std::int64_t pcount = 0, mcount = 0, ncount = 0;
    for (Eigen::Index u = 0; u < points.size(); ++u) {
        const double vp = std::abs(post(u, kTaskPP) + post(u, kTaskPM) - 1.0);
        const double vm = std::abs(post(u, kTaskMM) + post(u, kTaskMP) - 1.0);
        pmax = std::max(pmax, vp);
        mmax = std::max(mmax, vm);
        psum += vp;
        msum += vm;
        pcount += vp > tolerance ? 1 : 0;
        mcount += vm > tolerance ? 1 : 0;
        for (int l = 0; l < kNumTasks; ++l) {
            const double h = std::max(0.0, margin - post(u, l));
            nmax = std::max(nmax, h);
            nsum += h;
            ncount += h > tolerance ? 1 : 0;
            lowest = std::min(lowest, post(u, l));
        }
    }
    CHECK(report.pause_row.evaluated == 25);
    CHECK(report.move_row.evaluated == 25);
    CHECK(report.nonneg.evaluated == 100);
    CHECK(report.pause_row.max == doctest::Approx(pmax).epsilon(1e-12));
    CHECK(report.move_row.max == doctest::Approx(mmax).epsilon(1e-12));
    CHECK(report.pause_row.mean == doctest::Approx(psum / 25).epsilon(1e-12));
    CHECK(report.move_row.mean == doctest::Approx(msum / 25).epsilon(1e-12));
    CHECK(report.nonneg.max == doctest::Approx(nmax).epsilon(1e-12));
    CHECK(report.nonneg.mean == doctest::Approx(nsum / 100).epsilon(1e-12));
    CHECK(report.pause_row.count == pcount);
    CHECK(report.move_row.count == mcount);
    CHECK(report.nonneg.count == ncount);
    CHECK(report.min_value == doctest::Approx(lowest).epsilon(1e-12));
    CHECK(report.tolerance == tolerance);
    CHECK(report.wall_time_ms >= 0.0);

    const double worst = std::max(pmax, mmax);
    CHECK(report.worst_stochasticity() == doctest::Approx(worst).epsilon(1e-12));
    CHECK(report.mean_stochasticity() == doctest::Approx((psum + msum) / 50).epsilon(1e-12));
}

TEST_CASE("empirical dataset evaluation") {
    TransitionDataset ds;
    ds.scheme = make_scheme(1);
    ds.rows.resize(168);
    for (int b = 0; b < 168; ++b) ds.rows[b].a_pp = ds.rows[b].a_pm = ds.rows[b].a_mm = ds.rows[b].a_mp = 0.0;
    ds.rows[0] = TransitionRow{0.72, 0.30, 0.60, 0.40, 10, 10, false, false};  // pause row sums to 1.02
    ds.rows[1] = TransitionRow{1.05, -0.05, 0.50, 0.50, 10, 10, false, false};
    // a half-missing row is skipped entirely
    ds.rows[2] = TransitionRow{0.80, 0.20, 0.0, 0.0, 10, 0, false, true};

    const ConstraintReport report = evaluate_constraints(ds, 1e-6);
    CHECK(report.pause_row.evaluated == 2);
    CHECK(report.move_row.evaluated == 2);
    CHECK(report.pause_row.max == doctest::Approx(0.02));
    CHECK(report.pause_row.mean == doctest::Approx(0.01));
    CHECK(report.pause_row.count == 1);
    CHECK(report.move_row.max == doctest::Approx(0.0));
    CHECK(report.nonneg.evaluated == 8);
    CHECK(report.nonneg.max == doctest::Approx(0.05));
    CHECK(report.nonneg.count == 1);
    CHECK(report.min_value == doctest::Approx(-0.05));

    // a dataset built from exact complements has nothing to report
    const ConstraintReport clean = evaluate_constraints(noisy_dataset(32, 0.02), 1e-9);
    CHECK(clean.pause_row.max < 1e-12);
    CHECK(clean.move_row.max < 1e-12);
    CHECK(clean.nonneg.count == 0);
    CHECK(clean.min_value > 0.0);
}

TEST_CASE("penalized objective equals NLL plus the recomputed penalty") {
    MeanPenalty penalty;
    penalty.points = uniform_constraint_points(12);
    penalty.weight = 50.0;
    penalty.nonneg_margin = 0.35;  // high enough that the hinge is active somewhere

    SUBCASE("dense engine") {
        TransitionDataset ds = noisy_dataset(33, 0.04);
        ds.rows[7].missing_pause = true;
        ds.rows[90].missing_move = true;
        const TrainingSet data = TrainingSet::from_dataset(ds);
        const Hyperparameters h = some_hyper(data);
        const ParamLayout layout;
        const auto [value, grad] =
            nll_with_grad(h, data, layout, SolverKind::Dense, &penalty);
        const double base = nll(h, data, SolverKind::Dense);
        const double hand = penalty_by_hand(MultiTaskGP(h, data, SolverKind::Dense), penalty);
        CHECK(hand > 0.0);
        CHECK(value - base == doctest::Approx(hand).epsilon(1e-9));
    }
    SUBCASE("spectral engine") {
        const TrainingSet data = TrainingSet::from_dataset(noisy_dataset(34, 0.04));
        const Hyperparameters h = some_hyper(data);
        const ParamLayout layout;
        const auto [value, grad] =
            nll_with_grad(h, data, layout, SolverKind::Structured, &penalty);
        const double base = nll(h, data, SolverKind::Structured);
        const double hand =
            penalty_by_hand(MultiTaskGP(h, data, SolverKind::Structured), penalty);
        CHECK(value - base == doctest::Approx(hand).epsilon(1e-9));
    }
}

TEST_CASE("penalty gradient matches central differences") {
    const TrainingSet data = TrainingSet::from_dataset(noisy_dataset(35, 0.04));
    MeanPenalty penalty;
    penalty.points = uniform_constraint_points(8);
    penalty.weight = 40.0;
    penalty.nonneg_margin = 0.35;

    for (SolverKind solver : {SolverKind::Dense, SolverKind::Structured}) {
        ParamLayout layout;
        layout.fix_mean = false;
        Hyperparameters base = some_hyper(data);
        const Eigen::VectorXd theta = layout.pack(base);
        const auto [value, grad] = nll_with_grad(base, data, layout, solver, &penalty);
        CHECK(std::isfinite(value));
        const Eigen::VectorXd fd = oracle::central_fd(
            [&](const Eigen::VectorXd& t) {
                return nll_with_grad(layout.unpack(t, base), data, layout, solver, &penalty)
                    .first;
            },
            theta, 1e-5);
        for (Eigen::Index k = 0; k < theta.size(); ++k) {
            const double rel = std::abs(grad[k] - fd[k]) / std::max(1.0, std::abs(fd[k]));
            INFO("solver=", solver == SolverKind::Dense ? "dense" : "structured", " k=", k);
            CHECK(rel < 1e-5);
        }
    }
}

TEST_CASE("constrained fits tighten the row sums") {
    const TrainingSet data = TrainingSet::from_dataset(noisy_dataset(36, 0.05));
    const Eigen::VectorXd points = bin_center_constraint_points(data.scheme);

    FitConfig fit_config;
    fit_config.max_iterations = 60;

    // plain fit for reference
    const FitOutcome plain = fit(data, fit_config);
    const ConstraintReport before = evaluate_constraints(plain.model, points);

    ConstraintConfig cc;
    cc.penalty_weight = 10.0;
    cc.escalations = 2;
    cc.refine_iterations = 60;
    const ConstrainedFitOutcome out = fit_constrained(data, fit_config, points, cc);

    CHECK(out.constraints.mean_stochasticity() < before.mean_stochasticity());
    CHECK(out.constraints.mean_stochasticity() < 1e-2);
    CHECK(out.constraints.wall_time_ms > 0.0);
    CHECK(out.report.iterations > fit_config.max_iterations);  // escalation stages ran
    CHECK(out.report.final_nll <= out.report.loss_trace.front() + 1e-9);

    // the final report was taken at the same points
    CHECK(out.constraints.pause_row.evaluated == points.size());
}

TEST_CASE("zero penalty weight reduces to the plain fit") {
    const TrainingSet data = TrainingSet::from_dataset(noisy_dataset(37, 0.03));
    FitConfig fit_config;
    fit_config.max_iterations = 40;
    ConstraintConfig cc;
    cc.penalty_weight = 0.0;
    const ConstrainedFitOutcome constrained =
        fit_constrained(data, fit_config, uniform_constraint_points(10), cc);
    const FitOutcome plain = fit(data, fit_config);
    CHECK(constrained.report.final_nll == doctest::Approx(plain.report.final_nll).epsilon(1e-12));
    CHECK(constrained.report.iterations == plain.report.iterations);

    ConstraintConfig bad;
    bad.escalations = -1;
    CHECK_THROWS_AS(fit_constrained(data, fit_config, uniform_constraint_points(4), bad),
                    InvalidCount);
}

TEST_CASE("escalating the weight does not loosen the constraints") {
    const TrainingSet data = TrainingSet::from_dataset(noisy_dataset(38, 0.05));
    const Eigen::VectorXd points = bin_center_constraint_points(data.scheme);
    FitConfig fit_config;
    fit_config.max_iterations = 50;

    ConstraintConfig light;
    light.penalty_weight = 1.0;
    light.escalations = 0;
    ConstraintConfig heavy = light;
    heavy.escalations = 3;
    heavy.refine_iterations = 50;

    const ConstrainedFitOutcome a = fit_constrained(data, fit_config, points, light);
    const ConstrainedFitOutcome b = fit_constrained(data, fit_config, points, heavy);
    CHECK(b.constraints.mean_stochasticity() <= a.constraints.mean_stochasticity() + 1e-9);
}

TEST_CASE("reports serialize with and without timing") {
    ConstraintReport report;
    report.pause_row = {0.01, 0.004, 3, 25};
    report.move_row = {0.02, 0.005, 4, 25};
    report.nonneg = {0.0, 0.0, 0, 100};
    report.min_value = 0.012;
    report.tolerance = 1e-6;
    report.wall_time_ms = 12.5;

    const std::string timed = report_to_json(report, true);
    CHECK(timed.find("\"wall_time_ms\"") != std::string::npos);
    CHECK(timed.find("\"pause_row\"") != std::string::npos);
    CHECK(timed.find("\"min_value\"") != std::string::npos);

    const std::string stable = report_to_json(report, false);
    CHECK(stable.find("wall_time_ms") == std::string::npos);

    // identical reports with different timings serialize identically without it
    ConstraintReport other = report;
    other.wall_time_ms = 99.0;
    CHECK(report_to_json(other, false) == stable);
}
