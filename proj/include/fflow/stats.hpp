#pragma once

// Dense sample statistics: streaming moments, PCA pseudoinverse and the
// symmetric finite difference of mean vectors.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "fflow/errors.hpp"

namespace fflow {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Granularity of per-row random streams. Every chunked pass over rows uses
/// chunk boundaries that are multiples of this, so streamed and materialized
/// computations visit rows in the same groups.
inline constexpr Index kRowBlock = 256;

/// Rows per moment-accumulation chunk for data of dimension `dim`: about a
/// million entries per chunk, between 1 and 32 row blocks.
inline Index chunk_rows(Index dim) {
    const Index target = (Index{1} << 20) / std::max<Index>(dim, 1);
    const Index blocks = std::clamp<Index>(target / kRowBlock, 1, 32);
    return blocks * kRowBlock;
}

/// Observations stored row-wise; at least two rows, at least one column,
/// every entry finite.
class SampleMatrix {
public:
    SampleMatrix() = default;

    explicit SampleMatrix(RowMatrix data) : data_(std::move(data)) {
        if (data_.rows() < 2) {
            throw DegenerateSample("sample needs at least 2 rows, got " + std::to_string(data_.rows()));
        }
        require(data_.cols() >= 1, "sample dimension must be at least 1");
        require(data_.allFinite(), "sample contains non-finite entries");
    }

    Index rows() const noexcept { return data_.rows(); }
    Index dim() const noexcept { return data_.cols(); }
    const RowMatrix &data() const noexcept { return data_; }

    /// Moves the storage out; the sample is left empty.
    RowMatrix release() && { return std::move(data_); }

    friend bool operator==(const SampleMatrix &a, const SampleMatrix &b) {
        return a.data_.rows() == b.data_.rows() && a.data_.cols() == b.data_.cols() &&
               a.data_ == b.data_;
    }

private:
    RowMatrix data_;
};

struct MomentPair {
    Vector mean;
    Matrix cov;
};

/// Streaming mean and scatter accumulator.
///
/// Chunks are merged with the pairwise update of Chan, Golub and LeVeque:
/// the chunk's centered scatter is added to the running scatter together with
/// the weighted outer product of the mean shift. Only the lower triangle of
/// the scatter is maintained.
class MomentAccumulator {
public:
    explicit MomentAccumulator(Index dim) : mean_(Vector::Zero(dim)), scatter_(Matrix::Zero(dim, dim)) {}

    template <typename Derived>
    void add_rows(const Eigen::MatrixBase<Derived> &chunk) {
        require(chunk.cols() == mean_.size(), "chunk dimension mismatch");
        const Index m = chunk.rows();
        if (m == 0) {
            return;
        }
        const Vector chunk_mean = chunk.colwise().mean().transpose();
        const RowMatrix centered = chunk.rowwise() - chunk_mean.transpose();
        scatter_.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
        if (count_ > 0) {
            const Vector shift = chunk_mean - mean_;
            const double n_old = static_cast<double>(count_);
            const double n_new = static_cast<double>(count_ + m);
            scatter_.selfadjointView<Eigen::Lower>().rankUpdate(shift, n_old * static_cast<double>(m) / n_new);
            mean_ += shift * (static_cast<double>(m) / n_new);
        } else {
            mean_ = chunk_mean;
        }
        count_ += m;
    }

    Index count() const noexcept { return count_; }
    Index dim() const noexcept { return mean_.size(); }
    const Vector &mean() const noexcept { return mean_; }

    /// Unbiased (n-1) covariance, exactly symmetric.
    MomentPair finish() const {
        if (count_ < 2) {
            throw DegenerateSample("moments need at least 2 rows, got " + std::to_string(count_));
        }
        Matrix cov = scatter_.selfadjointView<Eigen::Lower>();
        cov /= static_cast<double>(count_ - 1);
        return {mean_, cov};
    }

private:
    Index count_ = 0;
    Vector mean_;
    Matrix scatter_;
};

/// Mean and unbiased sample covariance of the rows of `sample`.
inline MomentPair sample_moments(const RowMatrix &sample) {
    if (sample.rows() < 2) {
        throw DegenerateSample("moments need at least 2 rows, got " + std::to_string(sample.rows()));
    }
    MomentAccumulator acc(sample.cols());
    const Index step = chunk_rows(sample.cols());
    for (Index r = 0; r < sample.rows(); r += step) {
        acc.add_rows(sample.middleRows(r, std::min(step, sample.rows() - r)));
    }
    return acc.finish();
}

inline MomentPair sample_moments(const SampleMatrix &s) { return sample_moments(s.data()); }

inline Vector sample_mean(const RowMatrix &sample) { return sample.colwise().mean().transpose(); }

/// Default relative eigenvalue cutoff of the PCA pseudoinverse.
inline constexpr double kDefaultRelTol = 1e-10;

inline bool is_symmetric(const Matrix &m, double rel = 1e-12) {
    if (m.rows() != m.cols()) {
        return false;
    }
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel * scale;
}

/// Eigendecomposition of a symmetric PSD matrix with a relative cutoff:
/// components with eigenvalue >= rel_tol * lambda_max are retained.
class PcaSpectrum {
public:
    PcaSpectrum(const Matrix &m, double rel_tol) {
        require(rel_tol > 0.0 && rel_tol < 1.0, "rel_tol must lie in (0,1)");
        require(is_symmetric(m), "pseudoinverse input must be symmetric");
        Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
        require(solver.info() == Eigen::Success, "eigendecomposition failed");
        values_ = solver.eigenvalues();
        vectors_ = solver.eigenvectors();
        const double lambda_max = values_.size() > 0 ? values_.maxCoeff() : 0.0;
        cutoff_ = rel_tol * lambda_max;
        for (Index i = 0; i < values_.size(); ++i) {
            if (lambda_max > 0.0 && values_(i) >= cutoff_ && values_(i) > 0.0) {
                ++rank_;
            }
        }
    }

    Index rank() const noexcept { return rank_; }
    const Vector &eigenvalues() const noexcept { return values_; }
    const Matrix &eigenvectors() const noexcept { return vectors_; }

    bool retained(Index i) const noexcept { return rank_ > 0 && values_(i) >= cutoff_ && values_(i) > 0.0; }

    /// v^T M^+ v, summed over retained components.
    double quadratic_form(const Vector &v) const {
        require(v.size() == values_.size(), "quadratic form dimension mismatch");
        const Vector projected = vectors_.transpose() * v;
        double total = 0.0;
        for (Index i = 0; i < values_.size(); ++i) {
            if (retained(i)) {
                total += projected(i) * projected(i) / values_(i);
            }
        }
        return total;
    }

    Matrix pseudoinverse() const {
        Vector inv = Vector::Zero(values_.size());
        for (Index i = 0; i < values_.size(); ++i) {
            if (retained(i)) {
                inv(i) = 1.0 / values_(i);
            }
        }
        Matrix result = vectors_ * inv.asDiagonal() * vectors_.transpose();
        return 0.5 * (result + result.transpose());
    }

private:
    Vector values_;
    Matrix vectors_;
    double cutoff_ = 0.0;
    Index rank_ = 0;
};

/// Moore-Penrose inverse restricted to the principal components above
/// rel_tol * lambda_max. An all-zero input yields the zero matrix.
inline Matrix pca_pseudoinverse(const Matrix &m, double rel_tol = kDefaultRelTol) {
    return PcaSpectrum(m, rel_tol).pseudoinverse();
}

/// (mu(theta + dt) - mu(theta - dt)) / (2 dt).
inline Vector central_difference(const Vector &mean_plus, const Vector &mean_minus, double delta_theta) {
    if (!(delta_theta > 0.0)) {
        throw InvalidStep("finite-difference step must be positive, got " + std::to_string(delta_theta));
    }
    require(mean_plus.size() == mean_minus.size(), "central difference operands differ in length");
    return (mean_plus - mean_minus) / (2.0 * delta_theta);
}

}  // namespace fflow
