#pragma once

#include <Eigen/Dense>
#include <functional>

namespace mobgp {

enum class KernelFamily { RBF, Matern32 };

/// Stationary kernel over hours; cyclic mode wraps lags to the weekly circle,
/// min(|dt| mod 168, 168 - |dt| mod 168).
struct KernelSpec {
    KernelFamily family = KernelFamily::RBF;
    double lengthscale = 12.0;     ///< hours
    double signal_variance = 1.0;  ///< k(0)
    bool cyclic = true;
};

void validate(const KernelSpec& spec);

double kernel_eval(const KernelSpec& spec, double dt);

/// d k(dt) / d log(lengthscale). (d k / d log(signal_variance) is kernel_eval itself.)
double kernel_grad_log_lengthscale(const KernelSpec& spec, double dt);

/// Covariance column over n regular points spaced `spacing` hours apart:
/// col[i] = k(i * spacing).
Eigen::VectorXd kernel_first_column(const KernelSpec& spec, int n, double spacing);
Eigen::VectorXd kernel_first_column_grad_log_lengthscale(const KernelSpec& spec, int n,
                                                         double spacing);

/// Cross-covariance matrix k(a_i, b_j).
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::VectorXd& a,
                              const Eigen::VectorXd& b);
Eigen::MatrixXd kernel_matrix_grad_log_lengthscale(const KernelSpec& spec, const Eigen::VectorXd& a,
                                                   const Eigen::VectorXd& b);

/// Lag callable for toeplitz_from_kernel.
std::function<double(double)> kernel_callable(const KernelSpec& spec);

}  // namespace mobgp
