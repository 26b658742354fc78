#include "mobgp/structured.hpp"

#include <cmath>
#include <complex>
#include <cstdlib>

#include "mobgp/errors.hpp"

namespace mobgp {

int embedding_size(int n) {
    if (n < 1) throw DimensionError("Toeplitz size must be positive");
    const int target = 2 * n - 2;
    int size = 1;
    while (size < target) size *= 2;
    return size;
}

CirculantEmbedding::CirculantEmbedding(const Eigen::VectorXd& first_column)
    : n_(static_cast<int>(first_column.size())), n_emb_(embedding_size(n_)) {
    Eigen::VectorXcd column = Eigen::VectorXcd::Zero(n_emb_);
    for (int i = 0; i < n_; ++i) column[i] = first_column[i];
    for (int j = 1; j < n_; ++j) column[n_emb_ - j] = first_column[j];
    fft_ = std::make_shared<Fft>(n_emb_);
    fft_->forward(column.data());
    spectrum_ = std::move(column);
}

Eigen::VectorXd CirculantEmbedding::multiply(const Eigen::VectorXd& v) const {
    if (v.size() != n_) throw DimensionError("circulant matvec: vector length mismatch");
    Eigen::VectorXcd buf = Eigen::VectorXcd::Zero(n_emb_);
    for (int i = 0; i < n_; ++i) buf[i] = v[i];
    fft_->forward(buf.data());
    buf.array() *= spectrum_.array();
    fft_->inverse(buf.data());
    return buf.head(n_).real();
}

ToeplitzMatrix::ToeplitzMatrix(Eigen::VectorXd first_column) : col_(std::move(first_column)) {
    if (col_.size() == 0) throw EmptyInput("Toeplitz first column is empty");
    embedding_ = std::make_shared<CirculantEmbedding>(col_);
}

Eigen::VectorXd ToeplitzMatrix::matvec(const Eigen::VectorXd& v) const {
    return embedding_->multiply(v);
}

Eigen::MatrixXd ToeplitzMatrix::dense() const {
    const Eigen::Index n = col_.size();
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) m(i, j) = col_[std::abs(i - j)];
    }
    return m;
}

ToeplitzMatrix toeplitz_from_kernel(const std::function<double(double)>& kernel,
                                    const Eigen::VectorXd& grid) {
    const Eigen::Index n = grid.size();
    if (n == 0) throw EmptyInput("empty grid");
    double spacing = 0.0;
    if (n > 1) {
        spacing = grid[1] - grid[0];
        if (!(spacing > 0.0)) throw NotRegularGrid("grid must be strictly increasing");
        for (Eigen::Index i = 1; i + 1 < n; ++i) {
            const double d = grid[i + 1] - grid[i];
            if (std::abs(d - spacing) > 1e-9 * spacing) {
                throw NotRegularGrid("grid spacing varies beyond 1e-9 relative");
            }
        }
    }
    Eigen::VectorXd col(n);
    for (Eigen::Index i = 0; i < n; ++i) col[i] = kernel(static_cast<double>(i) * spacing);
    return ToeplitzMatrix(std::move(col));
}

Eigen::VectorXd circulant_matvec(const ToeplitzMatrix& t, const Eigen::VectorXd& v) {
    return t.matvec(v);
}

Eigen::VectorXd circulant_eigenvalues(const Eigen::VectorXd& first_column) {
    const int n = static_cast<int>(first_column.size());
    if (n == 0) throw EmptyInput("empty circulant column");
    Eigen::VectorXcd buf = first_column.cast<std::complex<double>>();
    Fft(n).forward(buf.data());
    return buf.real();
}

namespace {

Eigen::Index factor_size(const KroneckerFactor& f) {
    if (const auto* d = std::get_if<Eigen::MatrixXd>(&f)) return d->rows();
    return std::get<ToeplitzMatrix>(f).size();
}

Eigen::MatrixXd factor_dense(const KroneckerFactor& f) {
    if (const auto* d = std::get_if<Eigen::MatrixXd>(&f)) return *d;
    return std::get<ToeplitzMatrix>(f).dense();
}

// Applies one factor to every column of X.
Eigen::MatrixXd factor_apply(const KroneckerFactor& f, const Eigen::MatrixXd& x) {
    if (const auto* d = std::get_if<Eigen::MatrixXd>(&f)) return *d * x;
    const auto& t = std::get<ToeplitzMatrix>(f);
    Eigen::MatrixXd y(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) y.col(j) = t.matvec(x.col(j));
    return y;
}

Eigen::MatrixXd factor_solve(const KroneckerFactor& f, const Eigen::MatrixXd& x) {
    if (const auto* d = std::get_if<Eigen::MatrixXd>(&f)) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(*d);
        if (!lu.isInvertible()) throw SingularFactor("Kronecker factor is singular");
        return lu.solve(x);
    }
    const auto& t = std::get<ToeplitzMatrix>(f);
    const int max_iter = static_cast<int>(10 * t.size()) + 100;
    Eigen::MatrixXd y(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        y.col(j) = cg_solve(StructuredOperator(t), x.col(j), 1e-12, max_iter).x;
    }
    return y;
}

// One sweep of the reshape-multiply identity: processing the factors last-to-first, each
// pass sends its coordinate from fastest- to slowest-varying, so d passes restore the
// original layout with every factor applied once.
template <typename Apply>
Eigen::VectorXd kron_sweep(const std::vector<KroneckerFactor>& factors, Eigen::Index total,
                           const Eigen::VectorXd& v, Apply&& apply) {
    Eigen::VectorXd x = v;
    for (auto it = factors.rbegin(); it != factors.rend(); ++it) {
        const Eigen::Index n = factor_size(*it);
        const Eigen::Index rest = total / n;
        const Eigen::Map<const Eigen::MatrixXd> xm(x.data(), n, rest);
        const Eigen::MatrixXd yt = apply(*it, xm).transpose();
        x = Eigen::Map<const Eigen::VectorXd>(yt.data(), total);
    }
    return x;
}

}  // namespace

KroneckerOperator::KroneckerOperator(std::vector<KroneckerFactor> factors)
    : factors_(std::move(factors)), total_(1) {
    if (factors_.empty()) throw EmptyInput("Kronecker operator needs at least one factor");
    for (const auto& f : factors_) {
        if (const auto* d = std::get_if<Eigen::MatrixXd>(&f)) {
            if (d->rows() == 0 || d->rows() != d->cols()) {
                throw DimensionError("Kronecker factors must be square and nonempty");
            }
        }
        total_ *= factor_size(f);
    }
}

Eigen::VectorXd KroneckerOperator::matvec(const Eigen::VectorXd& v) const {
    if (v.size() != total_) throw DimensionError("Kronecker matvec: vector length mismatch");
    return kron_sweep(factors_, total_, v,
                      [](const KroneckerFactor& f, const Eigen::MatrixXd& x) {
                          return factor_apply(f, x);
                      });
}

Eigen::VectorXd KroneckerOperator::solve(const Eigen::VectorXd& rhs) const {
    if (rhs.size() != total_) throw DimensionError("Kronecker solve: vector length mismatch");
    return kron_sweep(factors_, total_, rhs,
                      [](const KroneckerFactor& f, const Eigen::MatrixXd& x) {
                          return factor_solve(f, x);
                      });
}

Eigen::MatrixXd KroneckerOperator::dense() const {
    if (total_ > 4096) {
        throw DimensionError("refusing to materialize a Kronecker product larger than 4096");
    }
    Eigen::MatrixXd out = factor_dense(factors_.front());
    for (std::size_t k = 1; k < factors_.size(); ++k) {
        const Eigen::MatrixXd b = factor_dense(factors_[k]);
        Eigen::MatrixXd next(out.rows() * b.rows(), out.cols() * b.cols());
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            for (Eigen::Index j = 0; j < out.cols(); ++j) {
                next.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = out(i, j) * b;
            }
        }
        out = std::move(next);
    }
    return out;
}

Eigen::VectorXd kron_matvec(const KroneckerOperator& op, const Eigen::VectorXd& v) {
    return op.matvec(v);
}

Eigen::VectorXd kron_solve(const KroneckerOperator& op, const Eigen::VectorXd& rhs) {
    return op.solve(rhs);
}

StructuredOperator::StructuredOperator(Eigen::MatrixXd dense) : base_(std::move(dense)) {
    const auto& m = std::get<Eigen::MatrixXd>(base_);
    if (m.rows() != m.cols()) throw DimensionError("dense operator must be square");
}

StructuredOperator::StructuredOperator(ToeplitzMatrix toeplitz) : base_(std::move(toeplitz)) {}

StructuredOperator::StructuredOperator(KroneckerOperator kronecker)
    : base_(std::move(kronecker)) {}

StructuredOperator StructuredOperator::shifted(StructuredOperator base, double shift) {
    base.shift_ += shift;
    return base;
}

Eigen::Index StructuredOperator::size() const {
    return std::visit(
        [](const auto& b) -> Eigen::Index {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, Eigen::MatrixXd>) {
                return b.rows();
            } else {
                return b.size();
            }
        },
        base_);
}

Eigen::VectorXd StructuredOperator::matvec(const Eigen::VectorXd& v) const {
    if (v.size() != size()) throw DimensionError("operator matvec: vector length mismatch");
    Eigen::VectorXd out = std::visit(
        [&](const auto& b) -> Eigen::VectorXd {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, Eigen::MatrixXd>) {
                return b * v;
            } else {
                return b.matvec(v);
            }
        },
        base_);
    if (shift_ != 0.0) out += shift_ * v;
    return out;
}

Eigen::MatrixXd StructuredOperator::dense() const {
    if (size() > 4096) throw DimensionError("refusing to materialize an operator larger than 4096");
    Eigen::MatrixXd out = std::visit(
        [](const auto& b) -> Eigen::MatrixXd {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, Eigen::MatrixXd>) {
                return b;
            } else {
                return b.dense();
            }
        },
        base_);
    if (shift_ != 0.0) out.diagonal().array() += shift_;
    return out;
}

CgResult cg_solve(const StructuredOperator& op, const Eigen::VectorXd& rhs, double tol,
                  int max_iter) {
    if (!(tol > 0.0)) throw InvalidCount("cg tolerance must be positive");
    if (rhs.size() != op.size()) throw DimensionError("cg: rhs length mismatch");
    const double norm_b = rhs.norm();
    if (norm_b == 0.0) return {Eigen::VectorXd::Zero(rhs.size()), 0, 0.0};

    Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
    Eigen::VectorXd r = rhs;
    Eigen::VectorXd p = r;
    double rr = r.squaredNorm();
    for (int it = 1; it <= max_iter; ++it) {
        const Eigen::VectorXd ap = op.matvec(p);
        const double p_ap = p.dot(ap);
        if (!(p_ap > 0.0)) {
            throw NotPositiveDefinite("cg: operator has a nonpositive curvature direction");
        }
        const double alpha = rr / p_ap;
        x += alpha * p;
        r -= alpha * ap;
        const double rr_next = r.squaredNorm();
        const double rel = std::sqrt(rr_next) / norm_b;
        if (rel <= tol) return {std::move(x), it, rel};
        p = r + (rr_next / rr) * p;
        rr = rr_next;
    }
    throw MaxIterations("cg: no convergence in " + std::to_string(max_iter) + " iterations",
                        max_iter, std::sqrt(rr) / norm_b);
}

CholeskyResult dense_cholesky(const Eigen::MatrixXd& matrix, double jitter) {
    if (matrix.rows() != matrix.cols()) throw DimensionError("Cholesky needs a square matrix");
    if (jitter < 0.0) throw InvalidCount("jitter must be nonnegative");
    const double mean_diag = matrix.diagonal().mean();
    const double scale = mean_diag > 0.0 ? mean_diag : 1.0;
    double j = jitter;
    for (int attempt = 0; attempt <= 3; ++attempt) {
        Eigen::MatrixXd shifted = matrix;
        if (j > 0.0) shifted.diagonal().array() += j;
        Eigen::LLT<Eigen::MatrixXd> llt(shifted);
        if (llt.info() == Eigen::Success) return {std::move(llt), j};
        j = j == 0.0 ? 1e-6 * scale : j * 10.0;
    }
    throw NotPositiveDefinite("matrix not positive definite after jitter escalation");
}

Eigen::VectorXd dense_cholesky_solve(const Eigen::MatrixXd& matrix, const Eigen::VectorXd& rhs,
                                     double jitter) {
    if (rhs.size() != matrix.rows()) throw DimensionError("Cholesky solve: rhs length mismatch");
    return dense_cholesky(matrix, jitter).llt.solve(rhs);
}

}  // namespace mobgp
