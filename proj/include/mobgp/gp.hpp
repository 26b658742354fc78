#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mobgp/kernels.hpp"
#include "mobgp/markov.hpp"
#include "mobgp/structured.hpp"

namespace mobgp {

/// Task indices used throughout: the four transition probabilities in the order the
/// dataset stores them.
enum TaskIndex : int { kTaskPP = 0, kTaskPM = 1, kTaskMM = 2, kTaskMP = 3 };
inline constexpr int kNumTasks = 4;
inline constexpr const char* kTaskNames[kNumTasks] = {"a_pp", "a_pm", "a_mm", "a_mp"};

/// Inter-task covariance K^f = L L^T via its lower-triangular Cholesky factor.
struct TaskCovariance {
    Eigen::MatrixXd cholesky_factor;

    int tasks() const { return static_cast<int>(cholesky_factor.rows()); }
    Eigen::MatrixXd matrix() const { return cholesky_factor * cholesky_factor.transpose(); }
    static TaskCovariance identity(int tasks);
    static TaskCovariance scaled_identity(int tasks, double variance);
};

void validate(const TaskCovariance& task);

enum class NoiseModel { Shared, PerTask };

struct Hyperparameters {
    KernelSpec kernel;
    TaskCovariance task;
    Eigen::VectorXd noise_variance;  ///< per task; all equal under NoiseModel::Shared
    NoiseModel noise_model = NoiseModel::PerTask;
    Eigen::VectorXd mean;  ///< per-task constant mean

    static constexpr double noise_floor = 1e-8;
};

void validate(const Hyperparameters& hyper);

/// Observed empirical probabilities on the weekly grid. Masked entries (missing origins)
/// are excluded from the likelihood.
struct TrainingSet {
    Eigen::VectorXd inputs;  ///< bin-center hours, ascending
    Eigen::MatrixXd targets;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask;  ///< true = observed
    TimeBinScheme scheme;

    static TrainingSet from_dataset(const TransitionDataset& ds);

    Eigen::Index points() const { return inputs.size(); }
    int tasks() const { return static_cast<int>(targets.cols()); }
    Eigen::Index observed_count() const { return mask.count(); }
    bool complete() const { return mask.all(); }
    /// Average of the observed targets per task (0.5 for fully masked tasks).
    Eigen::VectorXd task_means() const;
};

void validate(const TrainingSet& data);

enum class SolverKind { Auto, Dense, Structured };

/// Unconstrained parameter vector layout for gradient-based optimization:
/// [log lengthscale, log signal variance, task Cholesky factor (row-major lower triangle,
/// diagonal as log), noise as log(sigma^2 - floor), then per-task means when not fixed].
struct ParamLayout {
    int tasks = kNumTasks;
    bool diagonal_task = false;  ///< restrict K^f to a diagonal (independent tasks)
    bool fix_mean = true;
    NoiseModel noise_model = NoiseModel::PerTask;

    int task_param_count() const { return diagonal_task ? tasks : tasks * (tasks + 1) / 2; }
    int noise_param_count() const { return noise_model == NoiseModel::Shared ? 1 : tasks; }
    int mean_param_count() const { return fix_mean ? 0 : tasks; }
    int size() const { return 2 + task_param_count() + noise_param_count() + mean_param_count(); }

    int task_begin() const { return 2; }
    int noise_begin() const { return 2 + task_param_count(); }
    int mean_begin() const { return noise_begin() + noise_param_count(); }

    Eigen::VectorXd pack(const Hyperparameters& hyper) const;
    /// Rebuilds hyperparameters from theta; fields without parameters (means when fixed,
    /// kernel family/cyclic flag) are copied from `base`.
    Hyperparameters unpack(const Eigen::VectorXd& theta, const Hyperparameters& base) const;

    /// Box bounds keeping the optimizer in a numerically sane region
    /// (lengthscale within [min_ls, max_ls] hours).
    void bounds(double min_ls, double max_ls, Eigen::VectorXd& lower,
                Eigen::VectorXd& upper) const;
};

/// Quadratic penalty on the posterior means at fixed points: weight * sum over points of
/// squared row-sum defects plus squared hinge below `nonneg_margin`.
struct MeanPenalty {
    Eigen::VectorXd points;  ///< week-phase hours
    double weight = 0.0;
    double nonneg_margin = 0.0;
};

/// Negative marginal log-likelihood of the observed targets (Eq. 4 form with the noisy
/// covariance inside both the quadratic term and the determinant).
double nll(const Hyperparameters& hyper, const TrainingSet& data,
           SolverKind solver = SolverKind::Auto);

/// NLL (plus optional mean penalty) and its gradient in layout order.
std::pair<double, Eigen::VectorXd> nll_with_grad(const Hyperparameters& hyper,
                                                 const TrainingSet& data,
                                                 const ParamLayout& layout,
                                                 SolverKind solver = SolverKind::Auto,
                                                 const MeanPenalty* penalty = nullptr);

struct PredictiveDistribution {
    Eigen::MatrixXd mean;      ///< queries x tasks
    Eigen::MatrixXd variance;  ///< marginal, same shape
};

/// Fitted multi-task model with cached solve state.
class MultiTaskGP {
public:
    MultiTaskGP(Hyperparameters hyper, TrainingSet training,
                SolverKind solver = SolverKind::Auto);

    const Hyperparameters& hyper() const { return hyper_; }
    const TrainingSet& training() const { return training_; }
    SolverKind solver() const { return solver_; }
    double nll() const;

    /// Posterior mean and marginal variance at week-phase hours. Round-off negatives
    /// above -1e-10 clamp to zero; anything lower throws NotPositiveDefinite.
    PredictiveDistribution predict(const Eigen::VectorXd& queries) const;
    /// Mean-only fast path.
    Eigen::MatrixXd posterior_mean(const Eigen::VectorXd& queries) const;

private:
    Hyperparameters hyper_;
    TrainingSet training_;
    SolverKind solver_;
    struct Cache;
    std::shared_ptr<const Cache> cache_;
};

/// Scalar GP prediction (Eq. 3 closed form); the multi-task path must reduce to this
/// at T = 1.
void single_task_predict(const KernelSpec& kernel, const Eigen::VectorXd& inputs,
                         const Eigen::VectorXd& targets, double noise_variance, double mean,
                         const Eigen::VectorXd& queries, Eigen::VectorXd& out_mean,
                         Eigen::VectorXd& out_variance);

struct FitConfig {
    int max_iterations = 500;
    double learning_rate = 0.05;
    SolverKind solver = SolverKind::Auto;
    KernelFamily kernel_family = KernelFamily::RBF;
    bool cyclic = true;
    NoiseModel noise_model = NoiseModel::PerTask;
    bool diagonal_task = false;
    bool fix_mean = true;  ///< mean = training average
    double min_lengthscale_hours = 0.25;
    double max_lengthscale_hours = 60.0;
    double initial_lengthscale_hours = 12.0;
    double initial_noise_variance = 0.0025;  // 0.05^2
    std::optional<Hyperparameters> initial;  ///< warm start; overrides the defaults above
};

struct FitReport {
    std::vector<double> loss_trace;  ///< objective per iteration (concatenated over stages)
    double initial_nll = 0.0;
    double final_nll = 0.0;
    int iterations = 0;
    SolverKind solver_used = SolverKind::Dense;
};

struct FitOutcome {
    MultiTaskGP model;
    FitReport report;
};

/// Maximum-likelihood fit (optionally with a fixed mean penalty; the constraint module
/// layers the escalation schedule on top).
FitOutcome fit(const TrainingSet& data, const FitConfig& config,
               const MeanPenalty* penalty = nullptr);

/// Builds the covariance operator of the kernel over the weekly grid: flat_1d gives a
/// (circulant) Toeplitz matrix over all bins; day_hour_grid gives a Kronecker product of
/// a 7-point day factor and a per-day hour factor. For day_hour_grid the kernel is the
/// product k_day(24*(d-d')) * k_hour(h-h') with the signal variance on the day factor;
/// cyclic mode wraps days mod 7 and hours mod 24.
enum class GridLayout { Flat1D, DayHourGrid };
StructuredOperator build_grid_covariance(const KernelSpec& kernel, TimeBinScheme scheme,
                                         GridLayout layout);

/// Model serialization (versioned JSON with hyperparameters in log space, the scheme,
/// the training data, and a digest of the training set).
std::string model_to_json(const MultiTaskGP& model);
MultiTaskGP model_from_json(const std::string& text);
void save_model(const std::filesystem::path& path, const MultiTaskGP& model);
MultiTaskGP load_model(const std::filesystem::path& path);

/// FNV-1a digest of the training set's canonical serialization.
std::uint64_t training_digest(const TrainingSet& data);

}  // namespace mobgp
