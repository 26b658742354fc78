#include "mobgp/gp.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mobgp/csv.hpp"
#include "mobgp/errors.hpp"
#include "mobgp/fft.hpp"
#include "mobgp/optim.hpp"

namespace mobgp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// ---------------------------------------------------------------------------
// shared pieces

struct ObsEntry {
    int task;
    int point;
};

// Observed entries in task-major flat order (task * N + point), matching the
// vectorization K^f (x) K acts on.
std::vector<ObsEntry> observed_entries(const TrainingSet& data) {
    std::vector<ObsEntry> obs;
    obs.reserve(static_cast<std::size_t>(data.observed_count()));
    for (int t = 0; t < data.tasks(); ++t) {
        for (Eigen::Index i = 0; i < data.points(); ++i) {
            if (data.mask(i, t)) obs.push_back({t, static_cast<int>(i)});
        }
    }
    return obs;
}

// Targets minus the per-task mean, zeros at masked entries.
Eigen::MatrixXd centered_targets(const Hyperparameters& hyper, const TrainingSet& data) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(data.points(), data.tasks());
    for (int t = 0; t < data.tasks(); ++t) {
        for (Eigen::Index i = 0; i < data.points(); ++i) {
            if (data.mask(i, t)) y(i, t) = data.targets(i, t) - hyper.mean[t];
        }
    }
    return y;
}

bool on_bin_centers(const TrainingSet& data) {
    if (data.points() != data.scheme.total_bins()) return false;
    for (Eigen::Index i = 0; i < data.points(); ++i) {
        if (std::abs(data.inputs[i] - data.scheme.bin_center_hours(static_cast<int>(i))) > 1e-9) {
            return false;
        }
    }
    return true;
}

SolverKind resolve_solver(const Hyperparameters& hyper, const TrainingSet& data,
                          SolverKind requested) {
    const bool spectral_ok = data.complete() && hyper.kernel.cyclic && on_bin_centers(data);
    if (requested == SolverKind::Dense) return SolverKind::Dense;
    if (requested == SolverKind::Structured) {
        if (!spectral_ok) {
            throw NotRegularGrid(
                "structured solver requires the complete cyclic weekly grid (no missing bins)");
        }
        return SolverKind::Structured;
    }
    return spectral_ok ? SolverKind::Structured : SolverKind::Dense;
}

// ---------------------------------------------------------------------------
// dense engine: masked covariance, Cholesky with jitter escalation

struct DenseEngine {
    std::vector<ObsEntry> obs;
    Eigen::MatrixXd K;   // kernel matrix over all inputs
    Eigen::MatrixXd Kf;  // task covariance
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::VectorXd ytil;   // observed residuals, flat
    Eigen::VectorXd alpha;  // Sigma^{-1} ytil, flat
    Eigen::MatrixXd A;      // alpha scattered to points x tasks (zeros at masked)
    double value = 0.0;

    DenseEngine(const Hyperparameters& hyper, const TrainingSet& data) {
        const int N = static_cast<int>(data.points());
        const int T = data.tasks();
        obs = observed_entries(data);
        const int n_obs = static_cast<int>(obs.size());
        if (n_obs == 0) throw EmptyInput("no observed targets");

        K = kernel_matrix(hyper.kernel, data.inputs, data.inputs);
        Kf = hyper.task.matrix();
        const Eigen::MatrixXd y = centered_targets(hyper, data);

        Eigen::MatrixXd sigma(n_obs, n_obs);
        ytil.resize(n_obs);
        for (int a = 0; a < n_obs; ++a) {
            ytil[a] = y(obs[a].point, obs[a].task);
            for (int b = 0; b <= a; ++b) {
                double v = Kf(obs[a].task, obs[b].task) * K(obs[a].point, obs[b].point);
                if (a == b) v += hyper.noise_variance[obs[a].task];
                sigma(a, b) = v;
                sigma(b, a) = v;
            }
        }

        auto chol = dense_cholesky(sigma, 0.0);
        llt = std::move(chol.llt);
        alpha = llt.solve(ytil);
        const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        value = 0.5 * (ytil.dot(alpha) + logdet + n_obs * kLog2Pi);

        A = Eigen::MatrixXd::Zero(N, T);
        for (int a = 0; a < n_obs; ++a) A(obs[a].point, obs[a].task) = alpha[a];
        (void)N;
    }

    // Solve against a full points-x-tasks right-hand side, restricted to observed
    // entries and scattered back with zeros.
    Eigen::MatrixXd solve_full(const Eigen::MatrixXd& b) const {
        const int n_obs = static_cast<int>(obs.size());
        Eigen::VectorXd rhs(n_obs);
        for (int a = 0; a < n_obs; ++a) rhs[a] = b(obs[a].point, obs[a].task);
        const Eigen::VectorXd sol = llt.solve(rhs);
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(b.rows(), b.cols());
        for (int a = 0; a < n_obs; ++a) out(obs[a].point, obs[a].task) = sol[a];
        return out;
    }

    // Gradient of the NLL via G = Sigma^{-1} - alpha alpha^T contracted against the
    // per-parameter covariance derivatives.
    void add_nll_gradient(const Hyperparameters& hyper, const TrainingSet& data,
                          const ParamLayout& layout, Eigen::VectorXd& grad) const {
        const int n_obs = static_cast<int>(obs.size());
        const int T = data.tasks();
        Eigen::MatrixXd g_mat =
            llt.solve(Eigen::MatrixXd::Identity(n_obs, n_obs)) - alpha * alpha.transpose();

        Eigen::MatrixXd c_task = Eigen::MatrixXd::Zero(T, T);  // <G, dSigma/dKf> pieces
        Eigen::MatrixXd w_ker = Eigen::MatrixXd::Zero(K.rows(), K.cols());
        Eigen::VectorXd noise_diag = Eigen::VectorXd::Zero(T);
        for (int a = 0; a < n_obs; ++a) {
            for (int b = 0; b < n_obs; ++b) {
                const double g = g_mat(a, b);
                c_task(obs[a].task, obs[b].task) += g * K(obs[a].point, obs[b].point);
                w_ker(obs[a].point, obs[b].point) += g * Kf(obs[a].task, obs[b].task);
            }
            noise_diag[obs[a].task] += g_mat(a, a);
        }

        const Eigen::MatrixXd dk_logl =
            kernel_matrix_grad_log_lengthscale(hyper.kernel, data.inputs, data.inputs);
        grad[0] += 0.5 * (w_ker.cwiseProduct(dk_logl)).sum();
        grad[1] += 0.5 * (w_ker.cwiseProduct(K)).sum();

        add_task_gradient(0.5 * c_task, hyper.task.cholesky_factor, layout, grad);

        for (int t = 0; t < T; ++t) {
            const double chain = hyper.noise_variance[t] - Hyperparameters::noise_floor;
            const int slot = layout.noise_begin() +
                             (layout.noise_model == NoiseModel::Shared ? 0 : t);
            grad[slot] += 0.5 * noise_diag[t] * chain;
        }
        if (!layout.fix_mean) {
            for (int a = 0; a < n_obs; ++a) grad[layout.mean_begin() + obs[a].task] -= alpha[a];
        }
    }

    static void add_task_gradient(const Eigen::MatrixXd& contraction, const Eigen::MatrixXd& L,
                                  const ParamLayout& layout, Eigen::VectorXd& grad) {
        // d<C, LL^T>/dL_rc = 2 (sym(C) L)(r,c); diagonal entries are optimized as logs.
        const Eigen::MatrixXd sym = 0.5 * (contraction + contraction.transpose());
        const Eigen::MatrixXd cl = 2.0 * sym * L;
        int idx = layout.task_begin();
        for (int r = 0; r < layout.tasks; ++r) {
            if (layout.diagonal_task) {
                grad[idx++] += cl(r, r) * L(r, r);
            } else {
                for (int c = 0; c <= r; ++c) {
                    grad[idx++] += c == r ? cl(r, r) * L(r, r) : cl(r, c);
                }
            }
        }
    }
};

// ---------------------------------------------------------------------------
// spectral engine: the cyclic kernel on the complete weekly grid makes K circulant, so
// the joint covariance block-diagonalizes over DFT frequencies into T x T systems.

struct SpectralEngine {
    Eigen::VectorXd lambda_raw;  // circulant eigenvalues of K, by frequency
    Eigen::VectorXd lambda;      // clamped at zero (PSD guard for the wrapped kernel)
    Eigen::MatrixXd Kf;
    std::vector<Eigen::MatrixXd> P;  // per-frequency (lambda_j Kf + D)^{-1}
    Eigen::MatrixXcd Yhat;           // N x T, DFT of centered targets per task
    Eigen::MatrixXcd Ahat;           // N x T, rows P_j yhat_j (all frequencies)
    Eigen::MatrixXd A;               // real alpha, points x tasks, clamped frequencies dropped
    std::shared_ptr<const Fft> fft;
    double value = 0.0;

    SpectralEngine(const Hyperparameters& hyper, const TrainingSet& data) {
        const int N = static_cast<int>(data.points());
        const int T = data.tasks();
        const double width = data.scheme.bin_width_hours();

        const Eigen::VectorXd col = kernel_first_column(hyper.kernel, N, width);
        lambda_raw = circulant_eigenvalues(col);
        lambda = lambda_raw.cwiseMax(0.0);
        Kf = hyper.task.matrix();
        fft = std::make_shared<Fft>(N);

        const Eigen::MatrixXd y = centered_targets(hyper, data);
        Yhat.resize(N, T);
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXcd buf = y.col(t).cast<std::complex<double>>();
            fft->forward(buf.data());
            Yhat.col(t) = buf;
        }

        P.resize(N);
        Ahat.resize(N, T);
        double logdet = 0.0;
        double quad = 0.0;
        const Eigen::MatrixXd noise = hyper.noise_variance.asDiagonal();
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(T, T);
        for (int j = 0; j < N; ++j) {
            const Eigen::MatrixXd s = lambda[j] * Kf + noise;
            Eigen::LLT<Eigen::MatrixXd> llt(s);
            if (llt.info() != Eigen::Success) {
                throw NotPositiveDefinite("frequency block not positive definite");
            }
            logdet += 2.0 * llt.matrixLLT().diagonal().array().log().sum();
            P[j] = llt.solve(eye);
            const Eigen::VectorXcd yj = Yhat.row(j).transpose();
            const Eigen::VectorXcd aj = P[j] * yj;
            Ahat.row(j) = aj.transpose();
            quad += yj.dot(aj).real();  // dot conjugates its left operand: y^H a
        }
        // The unitary change of basis U/sqrt(N) turns the quadratic form into a
        // frequency sum scaled by 1/N; the determinant is basis-invariant.
        value = 0.5 * (quad / N + logdet + static_cast<double>(N) * T * kLog2Pi);

        // Posterior weights of the clamped prior: frequencies without prior mass
        // contribute nothing to the mean, so drop their coefficients before the
        // return to the time domain. Ahat keeps them; the noise and log-det
        // gradients of the clamped objective still need those rows.
        A.resize(N, T);
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXcd buf = Ahat.col(t);
            for (int j = 0; j < N; ++j) {
                if (lambda_raw[j] <= 0.0) buf[j] = 0.0;
            }
            fft->inverse(buf.data());
            A.col(t) = buf.real();
        }
    }

    Eigen::MatrixXd solve_full(const Eigen::MatrixXd& b) const {
        const int N = static_cast<int>(b.rows());
        const int T = static_cast<int>(b.cols());
        Eigen::MatrixXcd bhat(N, T);
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXcd buf = b.col(t).cast<std::complex<double>>();
            fft->forward(buf.data());
            bhat.col(t) = buf;
        }
        for (int j = 0; j < N; ++j) {
            if (lambda_raw[j] <= 0.0) {
                bhat.row(j).setZero();  // no prior mass at this frequency
                continue;
            }
            bhat.row(j) = (P[j] * bhat.row(j).transpose()).transpose();
        }
        Eigen::MatrixXd out(N, T);
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXcd buf = bhat.col(t);
            fft->inverse(buf.data());
            out.col(t) = buf.real();
        }
        return out;
    }

    void add_nll_gradient(const Hyperparameters& hyper, const TrainingSet& data,
                          const ParamLayout& layout, Eigen::VectorXd& grad) const {
        const int N = static_cast<int>(data.points());
        const int T = data.tasks();
        const double width = data.scheme.bin_width_hours();

        Eigen::VectorXd g_ker(N);
        Eigen::MatrixXd w_task = Eigen::MatrixXd::Zero(T, T);
        Eigen::VectorXd noise_diag = Eigen::VectorXd::Zero(T);
        for (int j = 0; j < N; ++j) {
            const Eigen::VectorXcd aj = Ahat.row(j).transpose();
            const Eigen::MatrixXd gj = P[j] - (aj * aj.adjoint()).real() / N;
            g_ker[j] = gj.cwiseProduct(Kf).sum();
            w_task += lambda[j] * gj;
            noise_diag += gj.diagonal();
        }

        // Derivative eigenvalues; frequencies clamped to zero contribute nothing
        // (consistent subgradient of the clamped objective).
        Eigen::VectorXd dlam_logl = circulant_eigenvalues(
            kernel_first_column_grad_log_lengthscale(hyper.kernel, N, width));
        Eigen::VectorXd dlam_logsf = lambda_raw;
        for (int j = 0; j < N; ++j) {
            if (lambda_raw[j] <= 0.0) {
                dlam_logl[j] = 0.0;
                dlam_logsf[j] = 0.0;
            }
        }
        grad[0] += 0.5 * g_ker.dot(dlam_logl);
        grad[1] += 0.5 * g_ker.dot(dlam_logsf);

        DenseEngine::add_task_gradient(0.5 * w_task, hyper.task.cholesky_factor, layout, grad);

        for (int t = 0; t < T; ++t) {
            const double chain = hyper.noise_variance[t] - Hyperparameters::noise_floor;
            const int slot = layout.noise_begin() +
                             (layout.noise_model == NoiseModel::Shared ? 0 : t);
            grad[slot] += 0.5 * noise_diag[t] * chain;
        }
        if (!layout.fix_mean) {
            for (int t = 0; t < T; ++t) grad[layout.mean_begin() + t] -= Ahat(0, t).real();
        }
    }
};

// Kernel matrix and its log-lengthscale gradient over the training inputs; regular
// grids fill from the first column instead of evaluating the kernel N^2 times.
void grid_kernel_matrices(const KernelSpec& spec, const TrainingSet& data, Eigen::MatrixXd& K,
                          Eigen::MatrixXd& dK) {
    const int N = static_cast<int>(data.points());
    if (on_bin_centers(data)) {
        const double width = data.scheme.bin_width_hours();
        const Eigen::VectorXd col = kernel_first_column(spec, N, width);
        const Eigen::VectorXd dcol = kernel_first_column_grad_log_lengthscale(spec, N, width);
        K.resize(N, N);
        dK.resize(N, N);
        for (int i = 0; i < N; ++i) {
            for (int j = 0; j < N; ++j) {
                const int d = i > j ? i - j : j - i;
                K(i, j) = col[d];
                dK(i, j) = dcol[d];
            }
        }
        return;
    }
    K = kernel_matrix(spec, data.inputs, data.inputs);
    dK = kernel_matrix_grad_log_lengthscale(spec, data.inputs, data.inputs);
}

// ---------------------------------------------------------------------------
// quadratic penalty on posterior means at fixed points (shared by both engines)

struct PenaltyTerms {
    double value = 0.0;
    Eigen::MatrixXd W;  // d penalty / d posterior-mean, points x tasks
};

PenaltyTerms penalty_residuals(const Eigen::MatrixXd& post_mean, const MeanPenalty& penalty) {
    const Eigen::Index m = post_mean.rows();
    PenaltyTerms out;
    out.W = Eigen::MatrixXd::Zero(m, post_mean.cols());
    for (Eigen::Index u = 0; u < m; ++u) {
        const double rp = post_mean(u, kTaskPP) + post_mean(u, kTaskPM) - 1.0;
        const double rm = post_mean(u, kTaskMM) + post_mean(u, kTaskMP) - 1.0;
        out.value += rp * rp + rm * rm;
        out.W(u, kTaskPP) += 2.0 * rp;
        out.W(u, kTaskPM) += 2.0 * rp;
        out.W(u, kTaskMM) += 2.0 * rm;
        out.W(u, kTaskMP) += 2.0 * rm;
        for (Eigen::Index l = 0; l < post_mean.cols(); ++l) {
            const double h = penalty.nonneg_margin - post_mean(u, l);
            if (h > 0.0) {
                out.value += h * h;
                out.W(u, l) -= 2.0 * h;
            }
        }
    }
    out.value *= penalty.weight;
    out.W *= penalty.weight;
    return out;
}

// Adds the penalty value and (optionally) its gradient. `solve_full` applies the inverse
// of the noisy covariance to a points-x-tasks block, matching the engine in use.
template <typename SolveFull>
double add_penalty(const Hyperparameters& hyper, const TrainingSet& data,
                   const ParamLayout& layout, const MeanPenalty& penalty,
                   const Eigen::MatrixXd& A, const SolveFull& solve_full,
                   Eigen::VectorXd* grad) {
    if (data.tasks() != kNumTasks) {
        throw DimensionError("mean penalty expects the four transition tasks");
    }
    const Eigen::MatrixXd Kf = hyper.task.matrix();
    const Eigen::MatrixXd k_star = kernel_matrix(hyper.kernel, penalty.points, data.inputs);
    const Eigen::MatrixXd E = A * Kf;
    Eigen::MatrixXd post = k_star * E;
    post.rowwise() += hyper.mean.transpose();

    PenaltyTerms terms = penalty_residuals(post, penalty);
    if (grad == nullptr || penalty.weight == 0.0) return terms.value;

    const Eigen::MatrixXd& W = terms.W;
    const Eigen::MatrixXd b = k_star.transpose() * W * Kf;
    const Eigen::MatrixXd B = solve_full(b);
    Eigen::MatrixXd K, dk_logl;
    grid_kernel_matrices(hyper.kernel, data, K, dk_logl);
    const Eigen::MatrixXd dkstar_logl =
        kernel_matrix_grad_log_lengthscale(hyper.kernel, penalty.points, data.inputs);

    const Eigen::MatrixXd we = W * E.transpose();          // queries x points
    const Eigen::MatrixXd c2 = B * Kf * A.transpose();     // points x points
    (*grad)[0] += we.cwiseProduct(dkstar_logl).sum() - c2.cwiseProduct(dk_logl).sum();
    (*grad)[1] += we.cwiseProduct(k_star).sum() - c2.cwiseProduct(K).sum();

    const Eigen::MatrixXd c_task =
        (k_star * A).transpose() * W - B.transpose() * K * A;  // contracted against dK^f
    const Eigen::MatrixXd sym = 0.5 * (c_task + c_task.transpose());
    const Eigen::MatrixXd cl = 2.0 * sym * hyper.task.cholesky_factor;
    int idx = layout.task_begin();
    for (int r = 0; r < layout.tasks; ++r) {
        if (layout.diagonal_task) {
            (*grad)[idx++] += cl(r, r) * hyper.task.cholesky_factor(r, r);
        } else {
            for (int c = 0; c <= r; ++c) {
                (*grad)[idx++] +=
                    c == r ? cl(r, r) * hyper.task.cholesky_factor(r, r) : cl(r, c);
            }
        }
    }

    for (int t = 0; t < data.tasks(); ++t) {
        const double chain = hyper.noise_variance[t] - Hyperparameters::noise_floor;
        const int slot =
            layout.noise_begin() + (layout.noise_model == NoiseModel::Shared ? 0 : t);
        (*grad)[slot] += -B.col(t).dot(A.col(t)) * chain;
    }
    if (!layout.fix_mean) {
        for (int t = 0; t < data.tasks(); ++t) {
            (*grad)[layout.mean_begin() + t] += W.col(t).sum() - B.col(t).sum();
        }
    }
    return terms.value;
}

}  // namespace

// ---------------------------------------------------------------------------
// basic types

TaskCovariance TaskCovariance::identity(int tasks) {
    return {Eigen::MatrixXd::Identity(tasks, tasks)};
}

TaskCovariance TaskCovariance::scaled_identity(int tasks, double variance) {
    return {std::sqrt(variance) * Eigen::MatrixXd::Identity(tasks, tasks)};
}

void validate(const TaskCovariance& task) {
    const auto& L = task.cholesky_factor;
    if (L.rows() == 0 || L.rows() != L.cols()) {
        throw DimensionError("task Cholesky factor must be square and nonempty");
    }
    for (Eigen::Index r = 0; r < L.rows(); ++r) {
        if (!(L(r, r) > 0.0)) throw NotPositiveDefinite("task Cholesky diagonal must be positive");
        for (Eigen::Index c = r + 1; c < L.cols(); ++c) {
            if (L(r, c) != 0.0) throw DimensionError("task Cholesky factor must be lower triangular");
        }
    }
}

void validate(const Hyperparameters& hyper) {
    validate(hyper.kernel);
    validate(hyper.task);
    const int T = hyper.task.tasks();
    if (hyper.noise_variance.size() != T || hyper.mean.size() != T) {
        throw DimensionError("noise/mean dimensions must match the task count");
    }
    for (int t = 0; t < T; ++t) {
        if (!(hyper.noise_variance[t] >= Hyperparameters::noise_floor)) {
            throw InvalidCount("noise variance below the 1e-8 floor");
        }
    }
    if (hyper.noise_model == NoiseModel::Shared) {
        for (int t = 1; t < T; ++t) {
            if (hyper.noise_variance[t] != hyper.noise_variance[0]) {
                throw InvalidCount("shared noise model requires equal task noise variances");
            }
        }
    }
}

TrainingSet TrainingSet::from_dataset(const TransitionDataset& ds) {
    const int n = ds.scheme.total_bins();
    TrainingSet out;
    out.scheme = ds.scheme;
    out.inputs.resize(n);
    out.targets = Eigen::MatrixXd::Zero(n, kNumTasks);
    out.mask.resize(n, kNumTasks);
    for (int b = 0; b < n; ++b) {
        out.inputs[b] = ds.scheme.bin_center_hours(b);
        const TransitionRow& r = ds.rows[b];
        out.mask(b, kTaskPP) = !r.missing_pause;
        out.mask(b, kTaskPM) = !r.missing_pause;
        out.mask(b, kTaskMM) = !r.missing_move;
        out.mask(b, kTaskMP) = !r.missing_move;
        if (!r.missing_pause) {
            out.targets(b, kTaskPP) = r.a_pp;
            out.targets(b, kTaskPM) = r.a_pm;
        }
        if (!r.missing_move) {
            out.targets(b, kTaskMM) = r.a_mm;
            out.targets(b, kTaskMP) = r.a_mp;
        }
    }
    return out;
}

Eigen::VectorXd TrainingSet::task_means() const {
    Eigen::VectorXd means(tasks());
    for (int t = 0; t < tasks(); ++t) {
        double sum = 0.0;
        std::int64_t n = 0;
        for (Eigen::Index i = 0; i < points(); ++i) {
            if (mask(i, t)) {
                sum += targets(i, t);
                ++n;
            }
        }
        means[t] = n > 0 ? sum / static_cast<double>(n) : 0.5;
    }
    return means;
}

void validate(const TrainingSet& data) {
    if (data.points() == 0) throw EmptyInput("training set has no inputs");
    if (data.targets.rows() != data.points() || data.mask.rows() != data.points() ||
        data.targets.cols() != data.mask.cols()) {
        throw DimensionError("training set shapes disagree");
    }
    for (Eigen::Index i = 1; i < data.points(); ++i) {
        if (!(data.inputs[i] > data.inputs[i - 1])) {
            throw NotRegularGrid("training inputs must be strictly ascending");
        }
    }
    if (data.observed_count() == 0) throw EmptyInput("training set has no observed targets");
}

// ---------------------------------------------------------------------------
// parameter packing

Eigen::VectorXd ParamLayout::pack(const Hyperparameters& hyper) const {
    Eigen::VectorXd theta(size());
    theta[0] = std::log(hyper.kernel.lengthscale);
    theta[1] = std::log(hyper.kernel.signal_variance);
    int idx = task_begin();
    const auto& L = hyper.task.cholesky_factor;
    for (int r = 0; r < tasks; ++r) {
        if (diagonal_task) {
            theta[idx++] = std::log(L(r, r));
        } else {
            for (int c = 0; c <= r; ++c) theta[idx++] = c == r ? std::log(L(r, r)) : L(r, c);
        }
    }
    for (int k = 0; k < noise_param_count(); ++k) {
        const double excess =
            std::max(hyper.noise_variance[k] - Hyperparameters::noise_floor, 1e-300);
        theta[noise_begin() + k] = std::log(excess);
    }
    for (int k = 0; k < mean_param_count(); ++k) theta[mean_begin() + k] = hyper.mean[k];
    return theta;
}

Hyperparameters ParamLayout::unpack(const Eigen::VectorXd& theta,
                                    const Hyperparameters& base) const {
    if (theta.size() != size()) throw DimensionError("parameter vector length mismatch");
    Hyperparameters h = base;
    h.kernel.lengthscale = std::exp(theta[0]);
    h.kernel.signal_variance = std::exp(theta[1]);
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(tasks, tasks);
    int idx = task_begin();
    for (int r = 0; r < tasks; ++r) {
        if (diagonal_task) {
            L(r, r) = std::exp(theta[idx++]);
        } else {
            for (int c = 0; c <= r; ++c) {
                L(r, c) = c == r ? std::exp(theta[idx++]) : theta[idx++];
            }
        }
    }
    h.task.cholesky_factor = std::move(L);
    h.noise_model = noise_model;
    h.noise_variance.resize(tasks);
    for (int t = 0; t < tasks; ++t) {
        const int k = noise_model == NoiseModel::Shared ? 0 : t;
        h.noise_variance[t] = Hyperparameters::noise_floor + std::exp(theta[noise_begin() + k]);
    }
    if (!fix_mean) {
        h.mean.resize(tasks);
        for (int t = 0; t < tasks; ++t) h.mean[t] = theta[mean_begin() + t];
    }
    return h;
}

void ParamLayout::bounds(double min_ls, double max_ls, Eigen::VectorXd& lower,
                         Eigen::VectorXd& upper) const {
    lower.resize(size());
    upper.resize(size());
    lower[0] = std::log(min_ls);
    upper[0] = std::log(max_ls);
    lower[1] = std::log(1e-8);
    upper[1] = std::log(100.0);
    int idx = task_begin();
    for (int r = 0; r < tasks; ++r) {
        if (diagonal_task) {
            lower[idx] = std::log(1e-4);
            upper[idx] = std::log(10.0);
            ++idx;
        } else {
            for (int c = 0; c <= r; ++c) {
                if (c == r) {
                    lower[idx] = std::log(1e-4);
                    upper[idx] = std::log(10.0);
                } else {
                    lower[idx] = -10.0;
                    upper[idx] = 10.0;
                }
                ++idx;
            }
        }
    }
    for (int k = 0; k < noise_param_count(); ++k) {
        lower[noise_begin() + k] = std::log(1e-10);
        upper[noise_begin() + k] = std::log(1.0);
    }
    for (int k = 0; k < mean_param_count(); ++k) {
        lower[mean_begin() + k] = -1.0;
        upper[mean_begin() + k] = 2.0;
    }
}

// ---------------------------------------------------------------------------
// objective

double nll(const Hyperparameters& hyper, const TrainingSet& data, SolverKind solver) {
    validate(hyper);
    validate(data);
    if (resolve_solver(hyper, data, solver) == SolverKind::Structured) {
        return SpectralEngine(hyper, data).value;
    }
    return DenseEngine(hyper, data).value;
}

std::pair<double, Eigen::VectorXd> nll_with_grad(const Hyperparameters& hyper,
                                                 const TrainingSet& data,
                                                 const ParamLayout& layout, SolverKind solver,
                                                 const MeanPenalty* penalty) {
    validate(hyper);
    validate(data);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.size());
    double value = 0.0;
    if (resolve_solver(hyper, data, solver) == SolverKind::Structured) {
        SpectralEngine engine(hyper, data);
        engine.add_nll_gradient(hyper, data, layout, grad);
        value = engine.value;
        if (penalty != nullptr && penalty->points.size() > 0) {
            value += add_penalty(hyper, data, layout, *penalty, engine.A,
                                 [&](const Eigen::MatrixXd& b) { return engine.solve_full(b); },
                                 &grad);
        }
    } else {
        DenseEngine engine(hyper, data);
        engine.add_nll_gradient(hyper, data, layout, grad);
        value = engine.value;
        if (penalty != nullptr && penalty->points.size() > 0) {
            value += add_penalty(hyper, data, layout, *penalty, engine.A,
                                 [&](const Eigen::MatrixXd& b) { return engine.solve_full(b); },
                                 &grad);
        }
    }
    return {value, std::move(grad)};
}

// ---------------------------------------------------------------------------
// fitted model

struct MultiTaskGP::Cache {
    bool spectral = false;
    double value = 0.0;
    Eigen::MatrixXd A;   // points x tasks
    Eigen::MatrixXd Kf;  // task covariance
    // dense path
    std::vector<ObsEntry> obs;
    Eigen::LLT<Eigen::MatrixXd> llt;
    // spectral path
    std::shared_ptr<const Fft> fft;
    Eigen::MatrixXd qtab;  // frequencies x tasks: kf_l^T P_j kf_l (zero at clamped rows)
    double prior0 = 0.0;   // clamped-spectrum k(0)
};

MultiTaskGP::MultiTaskGP(Hyperparameters hyper, TrainingSet training, SolverKind solver)
    : hyper_(std::move(hyper)), training_(std::move(training)), solver_(solver) {
    validate(hyper_);
    validate(training_);
    auto cache = std::make_shared<Cache>();
    if (resolve_solver(hyper_, training_, solver_) == SolverKind::Structured) {
        SpectralEngine engine(hyper_, training_);
        cache->spectral = true;
        cache->value = engine.value;
        cache->A = std::move(engine.A);
        cache->Kf = engine.Kf;
        cache->fft = engine.fft;
        const int N = static_cast<int>(training_.points());
        const int T = training_.tasks();
        cache->qtab = Eigen::MatrixXd::Zero(N, T);
        for (int j = 0; j < N; ++j) {
            if (engine.lambda_raw[j] <= 0.0) continue;  // clamped: skip, erring on the wide side
            for (int l = 0; l < T; ++l) {
                const Eigen::VectorXd kf_l = engine.Kf.col(l);
                cache->qtab(j, l) = kf_l.dot(engine.P[j] * kf_l);
            }
        }
        cache->prior0 = engine.lambda.sum() / N;
    } else {
        DenseEngine engine(hyper_, training_);
        cache->spectral = false;
        cache->value = engine.value;
        cache->A = std::move(engine.A);
        cache->Kf = engine.Kf;
        cache->obs = std::move(engine.obs);
        cache->llt = std::move(engine.llt);
    }
    cache_ = std::move(cache);
}

double MultiTaskGP::nll() const { return cache_->value; }

Eigen::MatrixXd MultiTaskGP::posterior_mean(const Eigen::VectorXd& queries) const {
    const Eigen::MatrixXd k_star = kernel_matrix(hyper_.kernel, queries, training_.inputs);
    Eigen::MatrixXd mean = k_star * cache_->A * cache_->Kf;
    mean.rowwise() += hyper_.mean.transpose();
    return mean;
}

PredictiveDistribution MultiTaskGP::predict(const Eigen::VectorXd& queries) const {
    const int T = training_.tasks();
    const Eigen::Index m = queries.size();
    PredictiveDistribution out;
    out.mean = posterior_mean(queries);
    out.variance.resize(m, T);

    const double k0 = kernel_eval(hyper_.kernel, 0.0);
    const int N = static_cast<int>(training_.points());
    for (Eigen::Index u = 0; u < m; ++u) {
        Eigen::VectorXd k_u(N);
        for (int i = 0; i < N; ++i) {
            k_u[i] = kernel_eval(hyper_.kernel, queries[u] - training_.inputs[i]);
        }
        if (cache_->spectral) {
            Eigen::VectorXcd buf = k_u.cast<std::complex<double>>();
            cache_->fft->forward(buf.data());
            const Eigen::VectorXd power = buf.cwiseAbs2();
            for (int l = 0; l < T; ++l) {
                const double q = power.dot(cache_->qtab.col(l)) / N;
                out.variance(u, l) = cache_->prior0 * cache_->Kf(l, l) - q;
            }
        } else {
            const int n_obs = static_cast<int>(cache_->obs.size());
            Eigen::MatrixXd bq(n_obs, T);
            for (int l = 0; l < T; ++l) {
                for (int a = 0; a < n_obs; ++a) {
                    bq(a, l) = cache_->Kf(l, cache_->obs[a].task) * k_u[cache_->obs[a].point];
                }
            }
            const Eigen::MatrixXd x = cache_->llt.solve(bq);
            for (int l = 0; l < T; ++l) {
                out.variance(u, l) = k0 * cache_->Kf(l, l) - bq.col(l).dot(x.col(l));
            }
        }
        for (int l = 0; l < T; ++l) {
            double& v = out.variance(u, l);
            if (v < 0.0) {
                if (v < -1e-10) {
                    throw NotPositiveDefinite("predictive variance below the round-off budget");
                }
                v = 0.0;
            }
        }
    }
    return out;
}

void single_task_predict(const KernelSpec& kernel, const Eigen::VectorXd& inputs,
                         const Eigen::VectorXd& targets, double noise_variance, double mean,
                         const Eigen::VectorXd& queries, Eigen::VectorXd& out_mean,
                         Eigen::VectorXd& out_variance) {
    if (inputs.size() != targets.size()) throw DimensionError("inputs/targets length mismatch");
    Eigen::MatrixXd k = kernel_matrix(kernel, inputs, inputs);
    k.diagonal().array() += noise_variance;
    const Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("noisy kernel matrix not PD");
    const Eigen::VectorXd alpha = llt.solve((targets.array() - mean).matrix());
    const Eigen::MatrixXd k_star = kernel_matrix(kernel, queries, inputs);
    out_mean = (k_star * alpha).array() + mean;
    out_variance.resize(queries.size());
    const double k0 = kernel_eval(kernel, 0.0);
    for (Eigen::Index u = 0; u < queries.size(); ++u) {
        const Eigen::VectorXd ks = k_star.row(u).transpose();
        out_variance[u] = k0 - ks.dot(llt.solve(ks));
    }
}

// ---------------------------------------------------------------------------
// fitting

FitOutcome fit(const TrainingSet& data, const FitConfig& config, const MeanPenalty* penalty) {
    validate(data);
    const int T = data.tasks();
    for (int t = 0; t < T; ++t) {
        Eigen::Index n = 0;
        for (Eigen::Index i = 0; i < data.points(); ++i) n += data.mask(i, t) ? 1 : 0;
        if (n == 1) {
            throw InvalidCount(std::string("task ") + std::to_string(t) +
                               " has a single observation; need at least 2 or none");
        }
    }

    Hyperparameters init;
    if (config.initial.has_value()) {
        init = *config.initial;
    } else {
        init.kernel.family = config.kernel_family;
        init.kernel.cyclic = config.cyclic;
        init.kernel.lengthscale = config.initial_lengthscale_hours;
        init.mean = data.task_means();
        // pooled variance of the centered observed targets seeds the signal variance
        double ss = 0.0;
        Eigen::Index n = 0;
        for (int t = 0; t < T; ++t) {
            for (Eigen::Index i = 0; i < data.points(); ++i) {
                if (data.mask(i, t)) {
                    const double d = data.targets(i, t) - init.mean[t];
                    ss += d * d;
                    ++n;
                }
            }
        }
        const double pooled = n > 0 ? ss / static_cast<double>(n) : 0.01;
        init.kernel.signal_variance = std::min(std::max(pooled, 1e-4), 4.0);
        init.task = TaskCovariance::identity(T);
        init.noise_model = config.noise_model;
        init.noise_variance = Eigen::VectorXd::Constant(T, config.initial_noise_variance);
    }
    validate(init);

    ParamLayout layout;
    layout.tasks = T;
    layout.diagonal_task = config.diagonal_task;
    layout.fix_mean = config.fix_mean;
    layout.noise_model = config.noise_model;
    if (config.diagonal_task) {
        // a warm start with off-diagonal structure cannot be represented
        for (int r = 0; r < T; ++r) {
            for (int c = 0; c < r; ++c) {
                if (init.task.cholesky_factor(r, c) != 0.0) {
                    throw DimensionError("diagonal task layout given a non-diagonal warm start");
                }
            }
        }
    }

    const SolverKind resolved = resolve_solver(init, data, config.solver);
    const Objective objective = [&](const Eigen::VectorXd& theta) {
        const Hyperparameters h = layout.unpack(theta, init);
        return nll_with_grad(h, data, layout, resolved, penalty);
    };

    AdamConfig adam;
    adam.max_iterations = config.max_iterations;
    adam.learning_rate = config.learning_rate;
    BoxBounds box;
    layout.bounds(config.min_lengthscale_hours, config.max_lengthscale_hours, box.lower,
                  box.upper);

    const OptimResult result = adam_minimize(objective, layout.pack(init), adam, &box);
    const Hyperparameters best = layout.unpack(result.x, init);

    FitReport report;
    report.loss_trace = result.trace;
    report.initial_nll = result.trace.front();
    report.final_nll = result.value;
    report.iterations = result.iterations;
    report.solver_used = resolved;
    return {MultiTaskGP(best, data, resolved), std::move(report)};
}

// ---------------------------------------------------------------------------
// grid covariance operators

namespace {
double wrap_distance(double d, double period) {
    d = std::fmod(std::abs(d), period);
    return std::min(d, period - d);
}
}  // namespace

StructuredOperator build_grid_covariance(const KernelSpec& kernel, TimeBinScheme scheme,
                                         GridLayout layout) {
    validate(kernel);
    if (layout == GridLayout::Flat1D) {
        const Eigen::VectorXd col =
            kernel_first_column(kernel, scheme.total_bins(), scheme.bin_width_hours());
        return StructuredOperator(ToeplitzMatrix(col));
    }

    KernelSpec unit = kernel;
    unit.signal_variance = 1.0;
    unit.cyclic = false;

    Eigen::VectorXd day_col(7);
    for (int i = 0; i < 7; ++i) {
        const double days = kernel.cyclic ? std::min(i, 7 - i) : i;
        day_col[i] = kernel.signal_variance * kernel_eval(unit, 24.0 * days);
    }
    const int hours_n = 24 * scheme.bins_per_hour;
    const double width = scheme.bin_width_hours();
    Eigen::VectorXd hour_col(hours_n);
    for (int j = 0; j < hours_n; ++j) {
        const double d = kernel.cyclic ? wrap_distance(j * width, 24.0) : j * width;
        hour_col[j] = kernel_eval(unit, d);
    }
    std::vector<KroneckerFactor> factors;
    factors.emplace_back(ToeplitzMatrix(day_col));
    factors.emplace_back(ToeplitzMatrix(hour_col));
    return StructuredOperator(KroneckerOperator(std::move(factors)));
}

// ---------------------------------------------------------------------------
// serialization

std::uint64_t training_digest(const TrainingSet& data) {
    std::string blob = std::to_string(data.scheme.bins_per_hour);
    blob.push_back('|');
    for (Eigen::Index i = 0; i < data.points(); ++i) {
        blob += format_double(data.inputs[i]);
        for (int t = 0; t < data.tasks(); ++t) {
            blob.push_back(',');
            blob += data.mask(i, t) ? format_double(data.targets(i, t)) : "NA";
        }
        blob.push_back(';');
    }
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const char c : blob) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

namespace {

std::string solver_name(SolverKind kind) {
    switch (kind) {
        case SolverKind::Auto: return "auto";
        case SolverKind::Dense: return "dense";
        case SolverKind::Structured: return "structured";
    }
    return "auto";
}

SolverKind solver_from_name(const std::string& name) {
    if (name == "auto") return SolverKind::Auto;
    if (name == "dense") return SolverKind::Dense;
    if (name == "structured") return SolverKind::Structured;
    throw ParseError("unknown solver '" + name + "'");
}

char hex_digit(std::uint64_t v) { return "0123456789abcdef"[v & 0xF]; }

std::string digest_hex(std::uint64_t digest) {
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = hex_digit(digest);
        digest >>= 4;
    }
    return out;
}

}  // namespace

std::string model_to_json(const MultiTaskGP& model) {
    const Hyperparameters& h = model.hyper();
    const TrainingSet& d = model.training();
    nlohmann::json j;
    j["format"] = "mobgp-model";
    j["version"] = 1;
    j["bins_per_hour"] = d.scheme.bins_per_hour;
    j["solver"] = solver_name(model.solver());
    j["kernel"] = {
        {"family", h.kernel.family == KernelFamily::RBF ? "rbf" : "matern32"},
        {"cyclic", h.kernel.cyclic},
        {"log_lengthscale", std::log(h.kernel.lengthscale)},
        {"log_signal_variance", std::log(h.kernel.signal_variance)},
    };
    auto l_rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < h.task.cholesky_factor.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < h.task.cholesky_factor.cols(); ++c) {
            row.push_back(h.task.cholesky_factor(r, c));
        }
        l_rows.push_back(std::move(row));
    }
    j["task_cholesky"] = std::move(l_rows);
    j["noise_model"] = h.noise_model == NoiseModel::Shared ? "shared" : "per_task";
    auto log_noise = nlohmann::json::array();
    for (Eigen::Index t = 0; t < h.noise_variance.size(); ++t) {
        log_noise.push_back(std::log(h.noise_variance[t]));
    }
    j["log_noise_variance"] = std::move(log_noise);
    auto mean = nlohmann::json::array();
    for (Eigen::Index t = 0; t < h.mean.size(); ++t) mean.push_back(h.mean[t]);
    j["mean"] = std::move(mean);

    auto inputs = nlohmann::json::array();
    for (Eigen::Index i = 0; i < d.points(); ++i) inputs.push_back(d.inputs[i]);
    auto targets = nlohmann::json::array();
    for (Eigen::Index i = 0; i < d.points(); ++i) {
        auto row = nlohmann::json::array();
        for (int t = 0; t < d.tasks(); ++t) {
            if (d.mask(i, t)) {
                row.push_back(d.targets(i, t));
            } else {
                row.push_back(nullptr);
            }
        }
        targets.push_back(std::move(row));
    }
    j["training"] = {
        {"inputs", std::move(inputs)},
        {"targets", std::move(targets)},
        {"digest", digest_hex(training_digest(d))},
    };
    return j.dump(2) + "\n";
}

MultiTaskGP model_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.value("format", "") != "mobgp-model") {
            throw ModelMismatch("not a model document");
        }
        if (j.at("version").get<int>() != 1) {
            throw ModelMismatch("unsupported model version");
        }
        TrainingSet data;
        data.scheme = make_scheme(j.at("bins_per_hour").get<int>());
        const auto& tr = j.at("training");
        const auto& inputs = tr.at("inputs");
        const auto& targets = tr.at("targets");
        const int n = static_cast<int>(inputs.size());
        const int tasks = n > 0 ? static_cast<int>(targets.at(0).size()) : 0;
        data.inputs.resize(n);
        data.targets = Eigen::MatrixXd::Zero(n, tasks);
        data.mask.resize(n, tasks);
        for (int i = 0; i < n; ++i) {
            data.inputs[i] = inputs.at(i).get<double>();
            const auto& row = targets.at(i);
            for (int t = 0; t < tasks; ++t) {
                if (row.at(t).is_null()) {
                    data.mask(i, t) = false;
                } else {
                    data.mask(i, t) = true;
                    data.targets(i, t) = row.at(t).get<double>();
                }
            }
        }
        if (digest_hex(training_digest(data)) != tr.at("digest").get<std::string>()) {
            throw ParseError("model training data does not match its digest");
        }

        Hyperparameters h;
        const auto& jk = j.at("kernel");
        h.kernel.family =
            jk.at("family").get<std::string>() == "rbf" ? KernelFamily::RBF : KernelFamily::Matern32;
        h.kernel.cyclic = jk.at("cyclic").get<bool>();
        h.kernel.lengthscale = std::exp(jk.at("log_lengthscale").get<double>());
        h.kernel.signal_variance = std::exp(jk.at("log_signal_variance").get<double>());
        const auto& lj = j.at("task_cholesky");
        Eigen::MatrixXd L(lj.size(), lj.size());
        for (Eigen::Index r = 0; r < L.rows(); ++r) {
            for (Eigen::Index c = 0; c < L.cols(); ++c) {
                L(r, c) = lj.at(r).at(c).get<double>();
            }
        }
        h.task.cholesky_factor = std::move(L);
        h.noise_model =
            j.at("noise_model").get<std::string>() == "shared" ? NoiseModel::Shared
                                                               : NoiseModel::PerTask;
        const auto& jn = j.at("log_noise_variance");
        h.noise_variance.resize(jn.size());
        for (Eigen::Index t = 0; t < h.noise_variance.size(); ++t) {
            h.noise_variance[t] = std::exp(jn.at(t).get<double>());
        }
        const auto& jm = j.at("mean");
        h.mean.resize(jm.size());
        for (Eigen::Index t = 0; t < h.mean.size(); ++t) h.mean[t] = jm.at(t).get<double>();

        return MultiTaskGP(std::move(h), std::move(data),
                           solver_from_name(j.at("solver").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad model JSON: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, const MultiTaskGP& model) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open " + path.string() + " for writing");
    os << model_to_json(model);
}

MultiTaskGP load_model(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    return model_from_json(buf.str());
}

}  // namespace mobgp
