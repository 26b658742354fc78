// Acceptance gate: one pass/fail line per release criterion, exit code = failures.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mobgp/constraints.hpp"
#include "mobgp/gp.hpp"
#include "mobgp/markov.hpp"
#include "mobgp/rng.hpp"
#include "mobgp/structured.hpp"
#include "mobgp/synth.hpp"
#include "oracles.hpp"

using namespace mobgp;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

int g_failures = 0;

void report(int index, const std::string& name, const Outcome& outcome, double elapsed,
            double budget_seconds) {
    bool ok = outcome.pass;
    std::string detail = outcome.detail;
    if (ok && budget_seconds > 0.0 && elapsed >= budget_seconds) {
        ok = false;
        detail += " [over the " + std::to_string(static_cast<int>(budget_seconds)) +
                  "s budget]";
    }
    if (!ok) ++g_failures;
    std::printf("%s  C%d %s: %s (%.1fs)\n", ok ? "PASS" : "FAIL", index, name.c_str(),
                detail.c_str(), elapsed);
    std::fflush(stdout);
}

void run_criterion(int index, const std::string& name, double budget_seconds,
                   const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome outcome;
    try {
        outcome = body();
    } catch (const std::exception& e) {
        outcome = {false, std::string("exception: ") + e.what()};
    }
    report(index, name, outcome, seconds_since(t0), budget_seconds);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

double rel_error(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
    const double scale = std::max(want.norm(), 1e-30);
    return (got - want).norm() / scale;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

Eigen::VectorXd decaying_column(int n, Rng& rng) {
    Eigen::VectorXd col(n);
    for (int i = 0; i < n; ++i) {
        col[i] = std::exp(-static_cast<double>(i) / (0.15 * n + 2.0)) *
                 (1.0 + 0.1 * rng.uniform());
    }
    return col;
}

// ---------------------------------------------------------------------------
// C1: structured operations against dense oracles

Outcome structured_oracles() {
    double worst = 0.0;
    int instances = 0;

    for (int i = 0; i < 60; ++i) {  // Toeplitz/circulant matvec
        Rng rng(7000 + static_cast<std::uint64_t>(i));
        const int n = 2 + static_cast<int>((static_cast<unsigned>(i) * 173u + 59u) % 1023u);
        const Eigen::VectorXd col = decaying_column(n, rng);
        Eigen::VectorXd x(n);
        for (int k = 0; k < n; ++k) x[k] = rng.normal();
        const ToeplitzMatrix t(col);
        const Eigen::VectorXd got = circulant_matvec(t, x);
        const Eigen::VectorXd want = oracle::toeplitz_dense(col) * x;
        worst = std::max(worst, rel_error(got, want));
        ++instances;
    }

    for (int i = 0; i < 60; ++i) {  // Kronecker matvec
        Rng rng(7100 + static_cast<std::uint64_t>(i));
        const int a = 2 + static_cast<int>(rng.uniform() * 9.0);
        const int b = 2 + static_cast<int>(rng.uniform() * 9.0);
        Eigen::MatrixXd A(a, a), B(b, b);
        for (int r = 0; r < a; ++r)
            for (int c = 0; c < a; ++c) A(r, c) = rng.normal();
        for (int r = 0; r < b; ++r)
            for (int c = 0; c < b; ++c) B(r, c) = rng.normal();
        std::vector<KroneckerFactor> factors{A, B};
        Eigen::MatrixXd dense = oracle::kron_dense(A, B);
        if (i % 3 == 0) {  // add a Toeplitz third factor
            const int m = 2 + static_cast<int>(rng.uniform() * 6.0);
            const ToeplitzMatrix t(decaying_column(m, rng));
            factors.emplace_back(t);
            dense = oracle::kron_dense(dense, oracle::toeplitz_dense(t.first_column()));
        }
        const KroneckerOperator op(std::move(factors));
        Eigen::VectorXd x(op.size());
        for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = rng.normal();
        worst = std::max(worst, rel_error(kron_matvec(op, x), dense * x));
        ++instances;
    }

    for (int i = 0; i < 55; ++i) {  // Kronecker solve
        Rng rng(7200 + static_cast<std::uint64_t>(i));
        const int a = 3 + static_cast<int>(rng.uniform() * 5.0);
        const int b = 4 + static_cast<int>(rng.uniform() * 12.0);
        Eigen::MatrixXd R(a, a);
        for (int r = 0; r < a; ++r)
            for (int c = 0; c < a; ++c) R(r, c) = rng.normal();
        const Eigen::MatrixXd A =
            R * R.transpose() / a + (0.5 + rng.uniform()) * Eigen::MatrixXd::Identity(a, a);
        Eigen::VectorXd kcol(b);
        for (int k = 0; k < b; ++k) kcol[k] = std::exp(-0.5 * k * k / 9.0);
        kcol[0] += 0.2;  // keep the factor well conditioned
        const ToeplitzMatrix B(kcol);
        const KroneckerOperator op({A, B});
        Eigen::VectorXd rhs(op.size());
        for (Eigen::Index k = 0; k < rhs.size(); ++k) rhs[k] = rng.normal();
        const Eigen::VectorXd got = kron_solve(op, rhs);
        const Eigen::VectorXd want = op.dense().ldlt().solve(rhs);
        worst = std::max(worst, rel_error(got, want));
        ++instances;
    }

    for (int i = 0; i < 55; ++i) {  // conjugate gradients
        Rng rng(7300 + static_cast<std::uint64_t>(i));
        const int n = 8 + static_cast<int>(rng.uniform() * 250.0);
        Eigen::MatrixXd R(n, n);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) R(r, c) = rng.normal();
        const Eigen::MatrixXd A = R * R.transpose() / n +
                                  0.5 * Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd rhs(n);
        for (int k = 0; k < n; ++k) rhs[k] = rng.normal();
        const Eigen::VectorXd got = cg_solve(StructuredOperator(A), rhs, 1e-12, 10 * n).x;
        const Eigen::VectorXd want = A.llt().solve(rhs);
        worst = std::max(worst, rel_error(got, want));
        ++instances;
    }

    return {worst < 1e-8, "max relative error " + fmt(worst) + " over " +
                              std::to_string(instances) + " randomized instances"};
}

// ---------------------------------------------------------------------------
// C2: structured matvec speed and scaling

Outcome speedup_scaling() {
    const std::vector<int> sizes = {1024, 2048, 4096, 8192, 16384};
    std::vector<double> dense_ms, structured_ms;

    for (int n : sizes) {
        Rng rng(8000 + static_cast<std::uint64_t>(n));
        const Eigen::VectorXd col = decaying_column(n, rng);
        Eigen::VectorXd x(n);
        for (int k = 0; k < n; ++k) x[k] = rng.normal();
        const ToeplitzMatrix t(col);

        // straight O(n^2) product from the first column; no materialized matrix
        const auto dense_once = [&]() {
            Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j) acc += col[std::abs(i - j)] * x[j];
                y[i] = acc;
            }
            return y;
        };
        const auto fast_once = [&]() { return circulant_matvec(t, x); };

        volatile double sink = 0.0;
        const int fast_iters = std::max(1, (1 << 20) / n);
        const int dense_iters = std::max(1, (1 << 25) / (n * n));
        sink = fast_once().sum() + dense_once().sum();  // warm caches and FFT plans

        std::vector<double> dtimes, stimes;
        for (int rep = 0; rep < 7; ++rep) {
            auto t0 = Clock::now();
            for (int it = 0; it < dense_iters; ++it) sink = dense_once()[0];
            dtimes.push_back(seconds_since(t0) * 1e3 / dense_iters);
            t0 = Clock::now();
            for (int it = 0; it < fast_iters; ++it) sink = fast_once()[0];
            stimes.push_back(seconds_since(t0) * 1e3 / fast_iters);
        }
        (void)sink;
        dense_ms.push_back(median(dtimes));
        structured_ms.push_back(median(stimes));
    }

    const double speedup_4096 = dense_ms[2] / structured_ms[2];
    double worst_structured_ratio = 0.0;
    double best_dense_ratio = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < sizes.size(); ++i) {
        worst_structured_ratio =
            std::max(worst_structured_ratio, structured_ms[i] / structured_ms[i - 1]);
        best_dense_ratio = std::min(best_dense_ratio, dense_ms[i] / dense_ms[i - 1]);
    }

    const bool pass =
        speedup_4096 >= 2.0 && worst_structured_ratio < 2.5 && best_dense_ratio >= 3.5;
    return {pass, "speedup at n=4096: " + fmt(speedup_4096) +
                      "x; doubling ratios: structured <= " + fmt(worst_structured_ratio) +
                      " (need < 2.5), dense >= " + fmt(best_dense_ratio) + " (need >= 3.5)"};
}

// ---------------------------------------------------------------------------
// C3: GP against direct Gaussian conditioning

TrainingSet random_instance(std::uint64_t seed, int points) {
    Rng rng(seed);
    TrainingSet data;
    data.scheme = make_scheme(1);
    data.inputs.resize(points);
    for (int i = 0; i < points; ++i) data.inputs[i] = 168.0 * rng.uniform();
    std::sort(data.inputs.data(), data.inputs.data() + points);
    for (int i = 1; i < points; ++i) {
        data.inputs[i] = std::max(data.inputs[i], data.inputs[i - 1] + 1e-3);
    }
    data.targets.resize(points, kNumTasks);
    data.mask.resize(points, kNumTasks);
    for (int i = 0; i < points; ++i) {
        for (int t = 0; t < kNumTasks; ++t) {
            data.targets(i, t) = 0.5 + 0.2 * rng.normal();
            data.mask(i, t) = rng.uniform() < 0.8;
        }
    }
    for (int t = 0; t < kNumTasks; ++t) {  // keep every task estimable
        if (!data.mask.col(t).any()) data.mask(points / 2, t) = true;
    }
    return data;
}

Hyperparameters random_hyper(std::uint64_t seed) {
    Rng rng(seed);
    Hyperparameters h;
    h.kernel = KernelSpec{rng.uniform() < 0.5 ? KernelFamily::RBF : KernelFamily::Matern32,
                          3.0 + 17.0 * rng.uniform(), 0.01 + 0.09 * rng.uniform(), true};
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(4, 4);
    for (int r = 0; r < 4; ++r) {
        L(r, r) = 0.1 + 0.3 * rng.uniform();
        for (int c = 0; c < r; ++c) L(r, c) = 0.1 * rng.normal();
    }
    h.task.cholesky_factor = L;
    h.noise_variance.resize(4);
    for (int t = 0; t < 4; ++t) h.noise_variance[t] = 1e-4 + 1e-2 * rng.uniform();
    h.mean = Eigen::VectorXd::Constant(4, 0.5);
    for (int t = 0; t < 4; ++t) h.mean[t] += 0.1 * rng.normal();
    return h;
}

Outcome gp_oracle_match() {
    double worst_nll = 0.0, worst_pred = 0.0, worst_grad = 0.0;
    for (int i = 0; i < 20; ++i) {
        const int points = 4 + i % 13;
        const TrainingSet data = random_instance(9000 + static_cast<std::uint64_t>(i), points);
        const Hyperparameters h = random_hyper(9500 + static_cast<std::uint64_t>(i));

        const double lib = nll(h, data, SolverKind::Dense);
        const double ref = oracle::multitask_nll(h, data);
        worst_nll = std::max(worst_nll, std::abs(lib - ref) / std::max(1.0, std::abs(ref)));

        Rng qrng(9900 + static_cast<std::uint64_t>(i));
        Eigen::VectorXd queries(5);
        for (int q = 0; q < 5; ++q) queries[q] = 168.0 * qrng.uniform();
        const MultiTaskGP model(h, data, SolverKind::Dense);
        const PredictiveDistribution pred = model.predict(queries);
        Eigen::MatrixXd mean, variance;
        oracle::condition(h, data, queries, mean, variance);
        worst_pred = std::max(worst_pred, (pred.mean - mean).cwiseAbs().maxCoeff());
        worst_pred = std::max(worst_pred, (pred.variance - variance).cwiseAbs().maxCoeff());

        ParamLayout layout;
        layout.fix_mean = false;
        const Eigen::VectorXd theta = layout.pack(h);
        const Eigen::VectorXd grad = nll_with_grad(h, data, layout, SolverKind::Dense).second;
        const Eigen::VectorXd fd = oracle::central_fd(
            [&](const Eigen::VectorXd& t) {
                return nll(layout.unpack(t, h), data, SolverKind::Dense);
            },
            theta, 1e-5);
        for (Eigen::Index k = 0; k < theta.size(); ++k) {
            worst_grad = std::max(worst_grad, std::abs(grad[k] - fd[k]) /
                                                  std::max(1.0, std::abs(fd[k])));
        }
    }

    // the spectral engine against the same oracle on one complete weekly grid
    {
        const TimeBinScheme scheme = make_scheme(1);
        Rng rng(9700);
        TransitionDataset ds;
        ds.scheme = scheme;
        ds.rows.resize(168);
        for (int b = 0; b < 168; ++b) {
            const double w = 2.0 * M_PI * scheme.bin_center_hours(b) / 168.0;
            const double pm = 0.35 + 0.1 * std::sin(w) + 0.02 * rng.normal();
            const double mp = 0.45 + 0.1 * std::cos(w) + 0.02 * rng.normal();
            ds.rows[b] = TransitionRow{1.0 - pm, pm, 1.0 - mp, mp, 50, 50, false, false};
        }
        const TrainingSet data = TrainingSet::from_dataset(ds);
        const Hyperparameters h = random_hyper(9701);
        const double lib = nll(h, data, SolverKind::Structured);
        const double ref = oracle::multitask_nll(h, data);
        worst_nll = std::max(worst_nll, std::abs(lib - ref) / std::max(1.0, std::abs(ref)));
        const MultiTaskGP model(h, data, SolverKind::Structured);
        Eigen::VectorXd queries(3);
        queries << 0.5, 77.25, 166.0;
        Eigen::MatrixXd mean, variance;
        oracle::condition(h, data, queries, mean, variance);
        const PredictiveDistribution pred = model.predict(queries);
        worst_pred = std::max(worst_pred, (pred.mean - mean).cwiseAbs().maxCoeff());
        worst_pred = std::max(worst_pred, (pred.variance - variance).cwiseAbs().maxCoeff());
    }

    const bool pass = worst_nll < 1e-8 && worst_pred < 1e-8 && worst_grad < 1e-4;
    return {pass, "NLL err " + fmt(worst_nll) + ", prediction err " + fmt(worst_pred) +
                      ", gradient err " + fmt(worst_grad) + " over 20 instances + 1 grid"};
}

// ---------------------------------------------------------------------------
// C4: interpolation at the noise floor

Outcome noise_floor_interpolation() {
    const TimeBinScheme scheme = make_scheme(1);
    TransitionDataset ds;
    ds.scheme = scheme;
    ds.rows.resize(168);
    for (int b = 0; b < 168; ++b) {
        const double w = 2.0 * M_PI * scheme.bin_center_hours(b) / 168.0;
        const double pm = 0.5 + 0.2 * std::sin(w);
        const double mp = 0.5 + 0.2 * std::cos(w);
        ds.rows[b] = TransitionRow{1.0 - pm, pm, 1.0 - mp, mp, 100, 100, false, false};
    }
    const TrainingSet data = TrainingSet::from_dataset(ds);

    Hyperparameters h;
    h.kernel = KernelSpec{KernelFamily::RBF, 10.0, 0.05, true};
    h.task.cholesky_factor = Eigen::MatrixXd::Identity(4, 4) * 0.25;
    h.noise_variance = Eigen::VectorXd::Constant(4, Hyperparameters::noise_floor);
    h.mean = data.task_means();

    const MultiTaskGP model(h, data);  // complete cyclic grid -> spectral engine
    const Eigen::MatrixXd post = model.posterior_mean(data.inputs);
    double worst = 0.0;
    for (int b = 0; b < 168; ++b) {
        for (int t = 0; t < kNumTasks; ++t) {
            worst = std::max(worst, std::abs(post(b, t) - data.targets(b, t)));
        }
    }

    // same property on the dense path with irregular inputs
    TrainingSet sparse;
    sparse.scheme = scheme;
    const int m = 30;
    sparse.inputs.resize(m);
    sparse.targets.resize(m, kNumTasks);
    sparse.mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(m, kNumTasks,
                                                                               true);
    Rng rng(9800);
    for (int i = 0; i < m; ++i) sparse.inputs[i] = 168.0 * rng.uniform();
    std::sort(sparse.inputs.data(), sparse.inputs.data() + m);
    for (int i = 1; i < m; ++i) {
        sparse.inputs[i] = std::max(sparse.inputs[i], sparse.inputs[i - 1] + 0.5);
    }
    for (int i = 0; i < m; ++i) {
        const double w = 2.0 * M_PI * sparse.inputs[i] / 168.0;
        const double pm = 0.5 + 0.2 * std::sin(w);
        const double mp = 0.5 + 0.2 * std::cos(w);
        sparse.targets(i, kTaskPP) = 1.0 - pm;
        sparse.targets(i, kTaskPM) = pm;
        sparse.targets(i, kTaskMM) = 1.0 - mp;
        sparse.targets(i, kTaskMP) = mp;
    }
    Hyperparameters hs = h;
    hs.kernel = KernelSpec{KernelFamily::Matern32, 6.0, 0.05, true};
    hs.mean = sparse.task_means();
    const MultiTaskGP dense_model(hs, sparse, SolverKind::Dense);
    const Eigen::MatrixXd sparse_post = dense_model.posterior_mean(sparse.inputs);
    double worst_dense = 0.0;
    for (int i = 0; i < m; ++i) {
        for (int t = 0; t < kNumTasks; ++t) {
            worst_dense = std::max(worst_dense,
                                   std::abs(sparse_post(i, t) - sparse.targets(i, t)));
        }
    }

    const bool pass = worst < 1e-4 && worst_dense < 1e-4;
    return {pass, "max |posterior - target| at training inputs: spectral " + fmt(worst) +
                      ", dense " + fmt(worst_dense) + " (need < 1e-4)"};
}

// ---------------------------------------------------------------------------
// C5: end-to-end recovery of a sinusoidal truth

TransitionFunctionSpec recovery_spec() {
    TransitionFunctionSpec spec;
    spec.a_pm = PeriodicFunction::sinusoid(0.5, 0.3, 0.0);
    spec.a_mp = PeriodicFunction::sinusoid(0.5, 0.3, 84.0);
    return spec;
}

TrainingSet simulate_training(const TransitionFunctionSpec& spec, int weeks,
                              std::uint64_t seed) {
    SimulationConfig cfg;
    cfg.weeks = weeks;
    cfg.steps_per_hour = 2;
    cfg.seed = seed;
    const StateSequence seq = simulate_chain(spec, cfg);
    const TimeBinScheme scheme = make_scheme(1);
    TransitionCounts counts(scheme);
    counts.merge(bin_observations(seq, scheme));
    return TrainingSet::from_dataset(estimate_empirical(counts));
}

Outcome sinusoid_recovery() {
    const TransitionFunctionSpec spec = recovery_spec();
    double worst_rmse = 0.0;
    std::string worst_tag = "-";

    for (std::uint64_t seed : {101u, 202u, 303u}) {
        const TrainingSet data = simulate_training(spec, 200, seed);
        FitConfig fc;
        fc.max_iterations = 80;
        const Eigen::VectorXd points = bin_center_constraint_points(data.scheme);
        const ConstrainedFitOutcome out = fit_constrained(data, fc, points, ConstraintConfig{});

        const Eigen::MatrixXd post = out.model.posterior_mean(data.inputs);
        for (int t = 0; t < kNumTasks; ++t) {
            double se = 0.0;
            for (int b = 0; b < 168; ++b) {
                const Eigen::Matrix2d truth = eval_truth(spec, data.inputs[b] / 168.0);
                const double want = t == kTaskPP   ? truth(0, 0)
                                    : t == kTaskPM ? truth(0, 1)
                                    : t == kTaskMM ? truth(1, 1)
                                                   : truth(1, 0);
                se += (post(b, t) - want) * (post(b, t) - want);
            }
            const double rmse = std::sqrt(se / 168.0);
            if (rmse > worst_rmse) {
                worst_rmse = rmse;
                worst_tag = std::string(kTaskNames[t]) + "@seed" + std::to_string(seed);
            }
        }
    }

    return {worst_rmse < 0.05, "worst task RMSE vs truth " + fmt(worst_rmse) + " (" +
                                   worst_tag + ", 3 seeds x 200 weeks, need < 0.05)"};
}

// ---------------------------------------------------------------------------
// C6: constraint satisfaction vs constraint density

Outcome constraint_density_trend() {
    // A switching schedule forces a short fitted lengthscale, so the posterior has
    // sub-hour structure near the jumps and constraint density genuinely matters
    // (a smooth sinusoid saturates: hourly points already oversample it).
    TransitionFunctionSpec spec;
    spec.a_pm = PeriodicFunction::piecewise(
        {{0.0, 0.15}, {40.0, 0.65}, {78.0, 0.2}, {118.0, 0.7}, {150.0, 0.3}});
    spec.a_mp = PeriodicFunction::piecewise(
        {{0.0, 0.6}, {30.0, 0.2}, {70.0, 0.55}, {104.0, 0.25}, {140.0, 0.5}});
    bool monotone = true;
    double densest_violation = 0.0;
    double min_posterior = std::numeric_limits<double>::infinity();

    for (std::uint64_t seed : {11u, 22u, 33u}) {
        const TrainingSet data = simulate_training(spec, 150, seed);
        const Eigen::VectorXd common = uniform_constraint_points(672);

        double previous = std::numeric_limits<double>::infinity();
        for (int density : {168, 336, 672}) {
            FitConfig fc;
            fc.max_iterations = 200;
            // one fixed-weight stage: total constraint pressure then scales with the
            // number of points, which is the effect under test
            ConstraintConfig cc;
            cc.nonneg_margin = 1e-3;
            cc.penalty_weight = 50.0;
            cc.escalations = 0;
            const ConstrainedFitOutcome out =
                fit_constrained(data, fc, uniform_constraint_points(density), cc);
            // compare all densities on the common (densest) grid
            const ConstraintReport report = evaluate_constraints(out.model, common);
            const double violation = report.mean_stochasticity();
            if (violation > previous + 1e-9) monotone = false;
            previous = violation;
            if (density == 672) {
                densest_violation = std::max(densest_violation, violation);
                min_posterior = std::min(min_posterior, report.min_value);
            }
        }
    }

    const bool pass = monotone && densest_violation < 1e-3 && min_posterior >= -1e-6;
    return {pass, std::string(monotone ? "nonincreasing" : "NOT monotone") +
                      " mean violation over 168/336/672 points; densest " +
                      fmt(densest_violation) + " (need < 1e-3); min posterior " +
                      fmt(min_posterior) + " (need >= -1e-6); 3 seeds"};
}

// ---------------------------------------------------------------------------
// CLI helpers for C7 and C9

const std::string kCli = MOBGP_CLI_PATH;

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = kCli + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in.good()) return "<missing: " + p.string() + ">";
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mobgp_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::pair<double, double> loss_endpoints(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    double first = 0.0, last = 0.0;
    bool have = false;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        last = std::stod(line.substr(comma + 1));
        if (!have) {
            first = last;
            have = true;
        }
    }
    if (!have) throw std::runtime_error("empty loss trace");
    return {first, last};
}

// C7: loss progression and the resolution sweep

Outcome loss_progression() {
    const fs::path dir = fresh_dir("c7");
    const fs::path log = dir / "cli.log";
    if (run_cli("simulate --spec default --weeks 100 --steps-per-hour 4 --seed 77 --out-dir " +
                    dir.string(),
                log) != 0) {
        return {false, "simulate failed: " + slurp(log)};
    }
    if (run_cli("evaluate --sweep --sequences " + (dir / "sequences.csv").string() +
                    " --truth-spec default --iterations 25 --constraints uniform:84 " +
                    "--threads 3 --out-dir " + dir.string(),
                log) != 0) {
        return {false, "sweep failed: " + slurp(log)};
    }

    std::string detail;
    for (int bph : {1, 2, 4}) {
        const fs::path loss = dir / ("loss_bph" + std::to_string(bph) + ".csv");
        if (!fs::exists(loss)) return {false, loss.filename().string() + " missing"};
        const auto [first, last] = loss_endpoints(slurp(loss));
        if (last > first) {
            return {false, loss.filename().string() + " final " + fmt(last) +
                               " above initial " + fmt(first)};
        }
        detail += (detail.empty() ? "final<=initial at bph " : ", ") + std::to_string(bph);
    }

    const std::string table = slurp(dir / "sweep_comparison.csv");
    const long rows = std::count(table.begin(), table.end(), '\n') - 1;
    if (rows != 3) return {false, "comparison table has " + std::to_string(rows) + " rows"};
    for (const char* name : {"sweep_satisfaction.svg", "sweep_error.svg", "sweep_loss.svg"}) {
        if (!fs::exists(dir / name) || fs::file_size(dir / name) == 0) {
            return {false, std::string(name) + " missing or empty"};
        }
    }
    return {true, detail + "; 3-level table and sweep SVGs emitted"};
}

// ---------------------------------------------------------------------------
// C8: multi-task sharing on strongly correlated tasks

Outcome multitask_benefit() {
    const TimeBinScheme scheme = make_scheme(1);
    Rng rng(880);
    TransitionDataset ds;
    ds.scheme = scheme;
    ds.rows.resize(168);
    Eigen::VectorXd pm_col(168), mp_col(168);
    for (int b = 0; b < 168; ++b) {
        const double u = std::sin(2.0 * M_PI * scheme.bin_center_hours(b) / 168.0);
        const double pm = 0.45 + 0.18 * u + 0.01 * rng.normal();
        const double mp = 0.45 + 0.18 * u + 0.01 * rng.normal();
        pm_col[b] = pm;
        mp_col[b] = mp;
        ds.rows[b] = TransitionRow{1.0 - pm, pm, 1.0 - mp, mp, 80, 80, false, false};
    }
    const Eigen::VectorXd centered_p = pm_col.array() - pm_col.mean();
    const Eigen::VectorXd centered_m = mp_col.array() - mp_col.mean();
    const double corr =
        centered_p.dot(centered_m) / (centered_p.norm() * centered_m.norm());
    if (corr < 0.9) return {false, "generated task correlation only " + fmt(corr)};

    const TrainingSet data = TrainingSet::from_dataset(ds);
    FitConfig independent;
    independent.max_iterations = 120;
    independent.diagonal_task = true;
    const FitOutcome ind = fit(data, independent);

    FitConfig multi;
    multi.max_iterations = 120;
    multi.initial = ind.model.hyper();  // start the coupled fit from the independent optimum
    const FitOutcome full = fit(data, multi);

    const double n_obs = static_cast<double>(data.observed_count());
    const double per_obs_ind = ind.report.final_nll / n_obs;
    const double per_obs_full = full.report.final_nll / n_obs;
    const bool pass = per_obs_full <= per_obs_ind + 1e-12;
    return {pass, "per-observation NLL multi-task " + fmt(per_obs_full) +
                      " vs independent " + fmt(per_obs_ind) + " (task corr " + fmt(corr) +
                      ")"};
}

// ---------------------------------------------------------------------------
// C9: byte-identical reruns of every CLI command

Outcome reproducibility() {
    const fs::path a = fresh_dir("c9_a");
    const fs::path b = fresh_dir("c9_b");
    const fs::path log = fresh_dir("c9_logs") / "cli.log";

    const auto twice = [&](const std::string& args) -> bool {
        return run_cli(args + " --out-dir " + a.string(), log) == 0 &&
               run_cli(args + " --out-dir " + b.string(), log) == 0;
    };
    const auto same = [&](const char* name) -> bool {
        return slurp(a / name) == slurp(b / name);
    };

    if (!twice("simulate --spec default --weeks 12 --seed 9 ")) {
        return {false, "simulate failed: " + slurp(log)};
    }
    if (!same("sequences.csv") || !same("dataset.csv")) {
        return {false, "simulate outputs differ between reruns"};
    }

    if (!twice("fit --data " + (a / "dataset.csv").string() +
               " --constraints uniform:24 --iterations 15 --seed 9")) {
        return {false, "fit failed: " + slurp(log)};
    }
    if (!same("model.json") || !same("loss.csv") || !same("constraint_report.json")) {
        return {false, "fit outputs differ between reruns"};
    }

    if (!twice("predict --model " + (a / "model.json").string())) {
        return {false, "predict failed: " + slurp(log)};
    }
    if (!same("predictions.csv")) return {false, "predictions differ between reruns"};

    if (!twice("evaluate --model " + (a / "model.json").string() + " --truth-spec default")) {
        return {false, "evaluate failed: " + slurp(log)};
    }
    if (!same("metrics.json") || !same("empirical.csv")) {
        return {false, "evaluate outputs differ between reruns"};
    }

    return {true, "simulate/fit/predict/evaluate reruns byte-identical on every CSV and "
                  "JSON output (manifests carry timestamps by design)"};
}

}  // namespace

int main() {
    std::printf("mobgp acceptance gate\n");
    run_criterion(1, "structured ops match dense oracles", 30.0, structured_oracles);
    run_criterion(2, "structured matvec speedup and scaling", 120.0, speedup_scaling);
    run_criterion(3, "GP matches direct conditioning", 60.0, gp_oracle_match);
    run_criterion(4, "noise-floor interpolation", 0.0, noise_floor_interpolation);
    run_criterion(5, "sinusoidal truth recovery", 180.0, sinusoid_recovery);
    run_criterion(6, "constraint density trend", 0.0, constraint_density_trend);
    run_criterion(7, "loss progression and sweep artifacts", 0.0, loss_progression);
    run_criterion(8, "multi-task benefit on correlated tasks", 0.0, multitask_benefit);
    run_criterion(9, "byte-identical CLI reruns", 0.0, reproducibility);

    if (g_failures == 0) {
        std::printf("acceptance: all 9 criteria passed\n");
    } else {
        std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
    }
    return g_failures == 0 ? 0 : 1;
}
