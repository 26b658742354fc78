#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <variant>
#include <vector>

#include "mobgp/fft.hpp"

namespace mobgp {

/// Symmetric circulant extension of a symmetric Toeplitz matrix, stored as the spectrum of
/// the embedding so products reduce to two FFTs. The embedding is used only for matvec;
/// its eigenvalues may go negative without harm.
class CirculantEmbedding {
public:
    explicit CirculantEmbedding(const Eigen::VectorXd& first_column);

    int original_size() const { return n_; }
    int embedded_size() const { return n_emb_; }
    const Eigen::VectorXcd& spectrum() const { return spectrum_; }

    /// Dense-Toeplitz product in O(N_emb log N_emb).
    Eigen::VectorXd multiply(const Eigen::VectorXd& v) const;

private:
    int n_;
    int n_emb_;
    Eigen::VectorXcd spectrum_;
    std::shared_ptr<const Fft> fft_;
};

/// Smallest power of two >= 2n-2 (the minimal symmetric embedding, rounded up for
/// radix-2 transforms).
int embedding_size(int n);

/// Symmetric Toeplitz matrix defined by its first column.
class ToeplitzMatrix {
public:
    explicit ToeplitzMatrix(Eigen::VectorXd first_column);

    Eigen::Index size() const { return col_.size(); }
    const Eigen::VectorXd& first_column() const { return col_; }
    const CirculantEmbedding& embedding() const { return *embedding_; }

    Eigen::VectorXd matvec(const Eigen::VectorXd& v) const;
    Eigen::MatrixXd dense() const;

private:
    Eigen::VectorXd col_;
    std::shared_ptr<const CirculantEmbedding> embedding_;
};

/// Builds the Toeplitz covariance of a stationary kernel on a regular 1-D grid:
/// first_column[i] = kernel(i * spacing). Throws NotRegularGrid if spacing varies by more
/// than 1e-9 relative.
ToeplitzMatrix toeplitz_from_kernel(const std::function<double(double)>& kernel,
                                    const Eigen::VectorXd& grid);

/// FFT-backed product of a symmetric Toeplitz matrix with a vector.
Eigen::VectorXd circulant_matvec(const ToeplitzMatrix& t, const Eigen::VectorXd& v);

/// Eigenvalues of the circulant matrix whose first column is given, ordered by frequency
/// (the DFT of the column; real for symmetric circulants).
Eigen::VectorXd circulant_eigenvalues(const Eigen::VectorXd& first_column);

using KroneckerFactor = std::variant<Eigen::MatrixXd, ToeplitzMatrix>;

/// factor_1 (x) ... (x) factor_d without dense materialization. The first factor indexes
/// the slowest-varying coordinate of the operand vector.
class KroneckerOperator {
public:
    explicit KroneckerOperator(std::vector<KroneckerFactor> factors);

    Eigen::Index size() const { return total_; }
    const std::vector<KroneckerFactor>& factors() const { return factors_; }

    /// O(N * sum n_i) via the reshape-multiply identity.
    Eigen::VectorXd matvec(const Eigen::VectorXd& v) const;

    /// Applies the factorized inverse (per-factor solves). Dense factors go through LU
    /// (SingularFactor if not invertible); Toeplitz factors through CG on their fast
    /// matvec. Hot GP paths use the spectral engine instead, so factorizations are not
    /// cached here.
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;

    /// Guarded dense expansion for oracles; throws DimensionError above 4096.
    Eigen::MatrixXd dense() const;

private:
    std::vector<KroneckerFactor> factors_;
    Eigen::Index total_;
};

Eigen::VectorXd kron_matvec(const KroneckerOperator& op, const Eigen::VectorXd& v);
Eigen::VectorXd kron_solve(const KroneckerOperator& op, const Eigen::VectorXd& rhs);

/// Tagged union over the covariance shapes used here, plus an optional sigma^2 * I shift.
/// All variants are square, symmetric, and expose matvec.
class StructuredOperator {
public:
    StructuredOperator(Eigen::MatrixXd dense);          // NOLINT(google-explicit-constructor)
    StructuredOperator(ToeplitzMatrix toeplitz);        // NOLINT(google-explicit-constructor)
    StructuredOperator(KroneckerOperator kronecker);    // NOLINT(google-explicit-constructor)

    /// base + shift * I; nested shifts accumulate.
    static StructuredOperator shifted(StructuredOperator base, double shift);

    Eigen::Index size() const;
    double shift() const { return shift_; }
    Eigen::VectorXd matvec(const Eigen::VectorXd& v) const;
    /// Guarded dense expansion (includes the shift); throws DimensionError above 4096.
    Eigen::MatrixXd dense() const;

private:
    std::variant<Eigen::MatrixXd, ToeplitzMatrix, KroneckerOperator> base_;
    double shift_ = 0.0;
};

struct CgResult {
    Eigen::VectorXd x;
    int iterations = 0;
    double residual = 0.0;  ///< final relative residual
};

/// Conjugate gradients on a symmetric PSD operator. Throws MaxIterations when the
/// relative residual fails to reach tol, NotPositiveDefinite on a nonpositive curvature
/// direction.
CgResult cg_solve(const StructuredOperator& op, const Eigen::VectorXd& rhs, double tol,
                  int max_iter);

struct CholeskyResult {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter_used = 0.0;
};

/// LLT of (matrix + jitter * I), escalating jitter x10 at most 3 times; a zero starting
/// jitter escalates from 1e-6 times the mean diagonal. Throws NotPositiveDefinite once
/// escalation is exhausted.
CholeskyResult dense_cholesky(const Eigen::MatrixXd& matrix, double jitter = 0.0);

Eigen::VectorXd dense_cholesky_solve(const Eigen::MatrixXd& matrix, const Eigen::VectorXd& rhs,
                                     double jitter = 0.0);

}  // namespace mobgp
