#pragma once

#include <cmath>
#include <string>

#include "confound_bench/linalg.hpp"

namespace confound_bench {

/// Random-intercept covariance V = sigma_within2 * I_n + sigma_between2 * J_n J_n'.
///
/// The within variance multiplies the identity; the closed-form inverse is
/// V^{-1} = (I_n - s J_n J_n') / sigma_within2 with
/// s = sigma_between2 / (sigma_within2 + n * sigma_between2).
class CompoundSymmetryKernel {
public:
    CompoundSymmetryKernel(double sigma_within2, double sigma_between2, Eigen::Index n)
        : within_(sigma_within2), between_(sigma_between2), n_(n) {
        if (n_ < 1) throw std::invalid_argument("CompoundSymmetryKernel: n must be positive");
        if (!(within_ > 0.0) || !(within_ + static_cast<double>(n_) * between_ > 0.0) ||
            !std::isfinite(within_) || !std::isfinite(between_)) {
            throw NotPositiveDefinite("compound symmetry kernel with sigma_within2=" + std::to_string(within_) +
                                      ", sigma_between2=" + std::to_string(between_) +
                                      " is not positive definite");
        }
    }

    double sigma_within2() const noexcept { return within_; }
    double sigma_between2() const noexcept { return between_; }
    Eigen::Index n() const noexcept { return n_; }

    /// Shrinkage weight s on the all-ones component of the inverse.
    double shrinkage() const noexcept { return between_ / (within_ + static_cast<double>(n_) * between_); }

    /// V^{-1} M for an n x q block, without forming any inverse.
    MatrixXd inverse_apply(const Eigen::Ref<const MatrixXd>& M) const {
        check_rows(M.rows());
        const Eigen::RowVectorXd colsum = M.colwise().sum();
        MatrixXd out = M;
        out.rowwise() -= shrinkage() * colsum;
        return out / within_;
    }

    /// V^{-1/2} M: (I_n - theta Q_n) M / sqrt(sigma_within2), Q_n the projection onto J_n.
    MatrixXd whiten(const Eigen::Ref<const MatrixXd>& M) const {
        check_rows(M.rows());
        const double theta = 1.0 - std::sqrt(within_ / (within_ + static_cast<double>(n_) * between_));
        const Eigen::RowVectorXd colmean = M.colwise().mean();
        MatrixXd out = M;
        out.rowwise() -= theta * colmean;
        return out / std::sqrt(within_);
    }

    /// Applies whiten() to every n-row cluster block of a stacked matrix.
    MatrixXd whiten_stacked(const Eigen::Ref<const MatrixXd>& M) const {
        if (M.rows() % n_ != 0) throw std::invalid_argument("whiten_stacked: rows not a multiple of n");
        MatrixXd out(M.rows(), M.cols());
        for (Eigen::Index r = 0; r < M.rows(); r += n_) out.middleRows(r, n_) = whiten(M.middleRows(r, n_));
        return out;
    }

    MatrixXd dense() const {
        return within_ * MatrixXd::Identity(n_, n_) + between_ * MatrixXd::Ones(n_, n_);
    }

private:
    void check_rows(Eigen::Index rows) const {
        if (rows != n_) throw std::invalid_argument("kernel applied to a block with the wrong number of rows");
    }

    double within_;
    double between_;
    Eigen::Index n_;
};

inline MatrixXd kernel_inverse_apply(const CompoundSymmetryKernel& k, const Eigen::Ref<const MatrixXd>& M) {
    return k.inverse_apply(M);
}

}  // namespace confound_bench
