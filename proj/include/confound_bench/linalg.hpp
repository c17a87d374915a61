#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "confound_bench/errors.hpp"

namespace confound_bench {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Cluster-major m x n layout: row i holds the n units of cluster i.
using ClusterMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Effective-rank cutoff relative to the largest singular value of the design.
inline constexpr double kRankTolerance = 1e-10;

struct LeastSquaresFit {
    VectorXd coef;
    VectorXd residuals;
    double rss = 0.0;
    /// (X'X)^{-1}; multiply by a residual variance for a covariance estimate.
    MatrixXd unscaled_cov;
    double condition_number = 1.0;
};

/// Householder QR fit of y on X. Rank is judged on the singular values of R,
/// which coincide with those of X.
inline LeastSquaresFit fit_least_squares(const Eigen::Ref<const MatrixXd>& X,
                                         const Eigen::Ref<const VectorXd>& y) {
    const Eigen::Index N = X.rows();
    const Eigen::Index p = X.cols();
    if (y.size() != N) throw std::invalid_argument("fit_least_squares: X and y row counts differ");
    if (p == 0) throw SingularDesign("design has no columns");
    if (N < p) {
        throw SingularDesign("design has fewer rows (" + std::to_string(N) + ") than columns (" +
                             std::to_string(p) + ")");
    }
    if (!X.allFinite() || !y.allFinite()) throw std::invalid_argument("fit_least_squares: non-finite input");

    Eigen::HouseholderQR<MatrixXd> qr(X);
    const MatrixXd R = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
    Eigen::JacobiSVD<MatrixXd> svd(R);
    const VectorXd& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(p - 1);
    if (!(smax > 0.0) || smin <= kRankTolerance * smax) {
        throw SingularDesign("design is rank deficient (sigma_min/sigma_max = " +
                             std::to_string(smax > 0.0 ? smin / smax : 0.0) + ")");
    }

    LeastSquaresFit fit;
    const VectorXd qty = qr.householderQ().transpose() * y;
    const auto Rt = R.triangularView<Eigen::Upper>();
    fit.coef = Rt.solve(qty.head(p));
    fit.residuals = y - X * fit.coef;
    fit.rss = fit.residuals.squaredNorm();
    const MatrixXd Rinv = Rt.solve(MatrixXd::Identity(p, p));
    fit.unscaled_cov = Rinv * Rinv.transpose();
    fit.condition_number = smax / smin;
    return fit;
}

inline VectorXd solve_least_squares(const Eigen::Ref<const MatrixXd>& X, const Eigen::Ref<const VectorXd>& y) {
    return fit_least_squares(X, y).coef;
}

/// Row means of a balanced cluster-by-unit matrix.
inline VectorXd cluster_means(const Eigen::Ref<const ClusterMatrix>& M) {
    if (M.cols() == 0) throw std::invalid_argument("cluster_means: clusters have no units");
    return M.rowwise().mean();
}

/// Per-cluster means of each column of a stacked (m*n) x k matrix.
inline MatrixXd stacked_cluster_means(const Eigen::Ref<const MatrixXd>& X, Eigen::Index m, Eigen::Index n) {
    if (X.rows() != m * n) throw std::invalid_argument("stacked_cluster_means: row count is not m*n");
    MatrixXd means = MatrixXd::Zero(m, X.cols());
    for (Eigen::Index i = 0; i < m; ++i) means.row(i) = X.middleRows(i * n, n).colwise().mean();
    return means;
}

}  // namespace confound_bench
