#include "mobgp/kernels.hpp"

#include <cmath>

#include "mobgp/errors.hpp"
#include "mobgp/markov.hpp"

namespace mobgp {

namespace {

double wrapped_distance(const KernelSpec& spec, double dt) {
    double d = std::abs(dt);
    if (spec.cyclic) {
        d = std::fmod(d, static_cast<double>(TimeBinScheme::hours_per_week));
        d = std::min(d, TimeBinScheme::hours_per_week - d);
    }
    return d;
}

constexpr double kSqrt3 = 1.7320508075688772;

}  // namespace

void validate(const KernelSpec& spec) {
    if (!(spec.lengthscale > 0.0)) throw InvalidCount("kernel lengthscale must be positive");
    if (!(spec.signal_variance > 0.0)) throw InvalidCount("signal variance must be positive");
}

double kernel_eval(const KernelSpec& spec, double dt) {
    const double d = wrapped_distance(spec, dt);
    switch (spec.family) {
        case KernelFamily::RBF: {
            const double z = d / spec.lengthscale;
            return spec.signal_variance * std::exp(-0.5 * z * z);
        }
        case KernelFamily::Matern32: {
            const double s = kSqrt3 * d / spec.lengthscale;
            return spec.signal_variance * (1.0 + s) * std::exp(-s);
        }
    }
    return 0.0;  // unreachable
}

double kernel_grad_log_lengthscale(const KernelSpec& spec, double dt) {
    const double d = wrapped_distance(spec, dt);
    switch (spec.family) {
        case KernelFamily::RBF: {
            const double z = d / spec.lengthscale;
            return spec.signal_variance * std::exp(-0.5 * z * z) * z * z;
        }
        case KernelFamily::Matern32: {
            const double s = kSqrt3 * d / spec.lengthscale;
            return spec.signal_variance * s * s * std::exp(-s);
        }
    }
    return 0.0;  // unreachable
}

Eigen::VectorXd kernel_first_column(const KernelSpec& spec, int n, double spacing) {
    Eigen::VectorXd col(n);
    for (int i = 0; i < n; ++i) col[i] = kernel_eval(spec, i * spacing);
    return col;
}

Eigen::VectorXd kernel_first_column_grad_log_lengthscale(const KernelSpec& spec, int n,
                                                         double spacing) {
    Eigen::VectorXd col(n);
    for (int i = 0; i < n; ++i) col[i] = kernel_grad_log_lengthscale(spec, i * spacing);
    return col;
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::VectorXd& a,
                              const Eigen::VectorXd& b) {
    Eigen::MatrixXd m(a.size(), b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        for (Eigen::Index j = 0; j < b.size(); ++j) m(i, j) = kernel_eval(spec, a[i] - b[j]);
    }
    return m;
}

Eigen::MatrixXd kernel_matrix_grad_log_lengthscale(const KernelSpec& spec, const Eigen::VectorXd& a,
                                                   const Eigen::VectorXd& b) {
    Eigen::MatrixXd m(a.size(), b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        for (Eigen::Index j = 0; j < b.size(); ++j) {
            m(i, j) = kernel_grad_log_lengthscale(spec, a[i] - b[j]);
        }
    }
    return m;
}

std::function<double(double)> kernel_callable(const KernelSpec& spec) {
    return [spec](double dt) { return kernel_eval(spec, dt); };
}

}  // namespace mobgp
