#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "confound_bench/kernel.hpp"
#include "confound_bench/linalg.hpp"
#include "confound_bench/model.hpp"

namespace confound_bench {

/// Below this partial F the cluster-preference instrument is flagged as weak.
inline constexpr double kWeakInstrumentF = 10.0;

struct Design {
    MatrixXd X;
    std::vector<std::string> names;
};

namespace detail {

inline void check_policy(const ClusteredDataset& d, const CovariatePolicy& policy) {
    if (policy.include_latent_w && !d.has_w())
        throw InvalidConfig("policy adjusts for latent W but the dataset carries no W");
    if (policy.include_latent_b && !d.has_b())
        throw InvalidConfig("policy adjusts for latent B but the dataset carries no B");
}

/// Adjustment columns selected by the policy, stacked (m*n) x k, intercept excluded.
inline Design adjustment_columns(const ClusteredDataset& d, const CovariatePolicy& policy) {
    check_policy(d, policy);
    const Eigen::Index N = d.rows();
    Eigen::Index k = 0;
    if (policy.include_measured) k += d.c.cols();
    if (policy.include_latent_w) k += d.w_latent.cols();
    if (policy.include_latent_b) k += d.b_latent.cols();

    Design out;
    out.X.resize(N, k);
    Eigen::Index col = 0;
    if (policy.include_measured) {
        for (Eigen::Index j = 0; j < d.c.cols(); ++j, ++col) {
            out.X.col(col) = d.c.col(j);
            out.names.push_back("c_" + std::to_string(j + 1));
        }
    }
    if (policy.include_latent_w) {
        for (Eigen::Index j = 0; j < d.w_latent.cols(); ++j, ++col) {
            out.X.col(col) = d.w_latent.col(j);
            out.names.push_back("w_" + std::to_string(j + 1));
        }
    }
    if (policy.include_latent_b) {
        for (Eigen::Index j = 0; j < d.b_latent.cols(); ++j, ++col) {
            for (Eigen::Index i = 0; i < d.m; ++i) out.X.col(col).segment(i * d.n, d.n).setConstant(d.b_latent(i, j));
            out.names.push_back("b_" + std::to_string(j + 1));
        }
    }
    return out;
}

/// [exposure, 1, adjustment columns...]
inline Design pooled_design(const ClusteredDataset& d, const CovariatePolicy& policy,
                            const Eigen::Ref<const VectorXd>& exposure, const std::string& exposure_name) {
    const Design adj = adjustment_columns(d, policy);
    Design out;
    out.X.resize(d.rows(), adj.X.cols() + 2);
    out.X.col(0) = exposure;
    out.X.col(1).setOnes();
    out.X.rightCols(adj.X.cols()) = adj.X;
    out.names = {exposure_name, "intercept"};
    out.names.insert(out.names.end(), adj.names.begin(), adj.names.end());
    return out;
}

inline VectorXd center_within(const Eigen::Ref<const VectorXd>& v, Eigen::Index m, Eigen::Index n) {
    VectorXd out = v;
    for (Eigen::Index i = 0; i < m; ++i) {
        auto seg = out.segment(i * n, n);
        seg.array() -= seg.mean();
    }
    return out;
}

/// A centered column counts as cluster-constant when nothing survives
/// centering beyond rounding.
inline bool no_within_variation(const Eigen::Ref<const VectorXd>& raw, const Eigen::Ref<const VectorXd>& centered) {
    const double scale = std::max(1.0, raw.cwiseAbs().maxCoeff());
    return centered.size() == 0 || centered.cwiseAbs().maxCoeff() <= 1e-10 * scale;
}

inline double residual_variance(double rss, Eigen::Index dof) {
    return dof > 0 ? rss / static_cast<double>(dof) : std::numeric_limits<double>::infinity();
}

inline ClusterMatrix as_cluster_matrix(const Eigen::Ref<const VectorXd>& v, Eigen::Index m, Eigen::Index n) {
    return Eigen::Map<const ClusterMatrix>(v.data(), m, n);
}

}  // namespace detail

/// Cluster-mean-centered outcome, exposure and adjustment columns. Columns
/// with no within-cluster variation (intercept, cluster-level covariates, B)
/// are dropped; their names are kept in `dropped`.
struct WithinDesign {
    VectorXd y;
    VectorXd t;
    MatrixXd X;
    std::vector<std::string> names;
    std::vector<std::string> dropped;
};

namespace detail {

inline WithinDesign center_design(const ClusteredDataset& d, const CovariatePolicy& policy) {
    const Design adj = adjustment_columns(d, policy);
    WithinDesign w;
    w.y = center_within(d.stacked_y(), d.m, d.n);
    w.t = center_within(d.stacked_t(), d.m, d.n);
    std::vector<VectorXd> kept;
    for (Eigen::Index j = 0; j < adj.X.cols(); ++j) {
        VectorXd col = center_within(adj.X.col(j), d.m, d.n);
        if (no_within_variation(adj.X.col(j), col)) {
            w.dropped.push_back(adj.names[static_cast<std::size_t>(j)]);
        } else {
            kept.push_back(std::move(col));
            w.names.push_back(adj.names[static_cast<std::size_t>(j)]);
        }
    }
    w.X.resize(d.rows(), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) w.X.col(static_cast<Eigen::Index>(j)) = kept[j];
    return w;
}

}  // namespace detail

inline WithinDesign within_transform(const ClusteredDataset& d, const CovariatePolicy& policy = {}) {
    if (d.n < 2) throw DegenerateWithin("within transform needs n >= 2; with n = 1 every centered value is 0");
    return detail::center_design(d, policy);
}

/// Pooled least squares of Y on (T, 1, covariates).
inline FitResult fit_ols(const ClusteredDataset& d, const CovariatePolicy& policy = {}) {
    const Design des = detail::pooled_design(d, policy, d.stacked_t(), "t");
    const LeastSquaresFit ls = fit_least_squares(des.X, d.stacked_y());
    const Eigen::Index dof = des.X.rows() - des.X.cols();
    const double s2 = detail::residual_variance(ls.rss, dof);

    FitResult r;
    r.method = Method::OLS;
    r.coef = ls.coef;
    r.coef_names = des.names;
    r.beta_hat = ls.coef(0);
    r.var_beta_hat = ls.unscaled_cov(0, 0) * s2;
    r.diagnostics["residual_variance"] = s2;
    r.diagnostics["condition_number"] = ls.condition_number;
    return r;
}

/// Within (fixed-effects) estimator; numerically the LSDV fit.
inline FitResult fit_fe(const ClusteredDataset& d, const CovariatePolicy& policy = {}) {
    const WithinDesign w = within_transform(d, policy);
    if (detail::no_within_variation(d.stacked_t(), w.t))
        throw SingularDesign("exposure has no within-cluster variation");

    MatrixXd X(w.t.size(), w.X.cols() + 1);
    X.col(0) = w.t;
    X.rightCols(w.X.cols()) = w.X;
    const LeastSquaresFit ls = fit_least_squares(X, w.y);
    const Eigen::Index dof = d.rows() - d.m - X.cols();
    const double s2 = detail::residual_variance(ls.rss, dof);

    FitResult r;
    r.method = Method::FE;
    r.coef = ls.coef;
    r.coef_names = {"t"};
    r.coef_names.insert(r.coef_names.end(), w.names.begin(), w.names.end());
    r.beta_hat = ls.coef(0);
    r.var_beta_hat = ls.unscaled_cov(0, 0) * s2;
    r.diagnostics["residual_variance"] = s2;
    r.diagnostics["condition_number"] = ls.condition_number;
    r.diagnostics["dropped_columns"] = static_cast<double>(w.dropped.size());
    return r;
}

/// Balanced one-way ANOVA moment estimators on an m x n residual matrix:
/// sigma_chi2 = within mean square, sigma_d2 = max(0, (between MS - within MS) / n).
inline VarianceComponents estimate_variance_components(const Eigen::Ref<const ClusterMatrix>& resid) {
    const Eigen::Index m = resid.rows();
    const Eigen::Index n = resid.cols();
    if (m < 2) throw std::invalid_argument("estimate_variance_components: need at least 2 clusters");
    if (n < 2) throw DegenerateWithin("estimate_variance_components: need cluster size >= 2");

    const VectorXd means = resid.rowwise().mean();
    const double grand = means.mean();
    double within_ss = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) within_ss += (resid.row(i).array() - means(i)).square().sum();
    const double between_ss = static_cast<double>(n) * (means.array() - grand).square().sum();

    const double within_ms = within_ss / static_cast<double>(m * (n - 1));
    const double between_ms = between_ss / static_cast<double>(m - 1);
    VarianceComponents vc;
    vc.sigma_chi2 = within_ms;
    const double raw = (between_ms - within_ms) / static_cast<double>(n);
    vc.truncated = raw < 0.0;
    vc.sigma_d2 = std::max(0.0, raw);
    return vc;
}

namespace detail {

/// True when the within component is too small to define a positive definite kernel.
inline bool within_variance_degenerate(const VarianceComponents& vc, const Eigen::Ref<const VectorXd>& y) {
    const double scale = std::max(1.0, y.cwiseAbs().maxCoeff());
    return !(vc.sigma_chi2 > 1e-24 * scale * scale);
}

struct GlsStep {
    LeastSquaresFit ls;
    CompoundSymmetryKernel kernel;
};

/// GLS with a compound-symmetry kernel: whiten each cluster block, then QR.
/// The unscaled covariance of the whitened fit is (X' V^{-1} X)^{-1}.
inline GlsStep gls(const MatrixXd& X, const VectorXd& y, const VarianceComponents& vc, Eigen::Index n) {
    CompoundSymmetryKernel k(vc.sigma_chi2, vc.sigma_d2, n);
    return {fit_least_squares(k.whiten_stacked(X), k.whiten_stacked(y)), k};
}

inline void record_components(FitResult& r, const VarianceComponents& vc) {
    r.varcomp = vc;
    r.diagnostics["sigma_d2_hat"] = vc.sigma_d2;
    r.diagnostics["sigma_chi2_hat"] = vc.sigma_chi2;
    r.diagnostics["varcomp_truncated"] = vc.truncated ? 1.0 : 0.0;
}

}  // namespace detail

/// Variance components for the LMM fit; `fixed_components` skips estimation.
struct LmmOptions {
    std::optional<VarianceComponents> fixed_components;
};

/// Two-step feasible GLS for the random-intercept model: pooled OLS
/// residuals give ANOVA variance components, then one GLS step. With n = 1
/// or a zero within component the OLS fit is returned, flagged.
inline FitResult fit_lmm(const ClusteredDataset& d, const CovariatePolicy& policy = {}, const LmmOptions& opts = {}) {
    const Design des = detail::pooled_design(d, policy, d.stacked_t(), "t");
    const VectorXd y = d.stacked_y();
    const LeastSquaresFit ols = fit_least_squares(des.X, y);

    FitResult r;
    r.method = Method::LMM;
    r.coef_names = des.names;

    auto fall_back = [&](const char* reason) {
        const double s2 = detail::residual_variance(ols.rss, des.X.rows() - des.X.cols());
        r.coef = ols.coef;
        r.beta_hat = ols.coef(0);
        r.var_beta_hat = ols.unscaled_cov(0, 0) * s2;
        r.diagnostics["fallback_ols"] = 1.0;
        r.diagnostics[reason] = 1.0;
        r.diagnostics["condition_number"] = ols.condition_number;
        return r;
    };

    VarianceComponents vc;
    if (opts.fixed_components) {
        vc = *opts.fixed_components;
    } else {
        if (d.n < 2) return fall_back("varcomp_unidentified");
        vc = estimate_variance_components(detail::as_cluster_matrix(ols.residuals, d.m, d.n));
    }
    if (detail::within_variance_degenerate(vc, y)) {
        detail::record_components(r, vc);
        return fall_back("within_variance_zero");
    }

    const auto step = detail::gls(des.X, y, vc, d.n);
    r.coef = step.ls.coef;
    r.beta_hat = step.ls.coef(0);
    r.var_beta_hat = step.ls.unscaled_cov(0, 0);
    detail::record_components(r, vc);
    r.diagnostics["condition_number"] = step.ls.condition_number;
    return r;
}

struct FirstStageResult {
    VectorXd gamma_hat;   // one exposure level per cluster
    ClusterMatrix t_hat;  // fitted exposure
    double partial_f = 0.0;
    VectorXd covariate_coef;  // within-cluster covariate effects on T
    std::vector<std::string> covariate_names;
    double df_num = 0.0;
    double df_den = 0.0;
};

/// LSDV regression of T on all m cluster indicators (no global intercept)
/// plus the covariates that vary within clusters. Cluster-constant columns are
/// collinear with the indicators and are left out. Solved through the within
/// transform: the covariate slopes come from the centered regression and
/// gamma_i = Tbar_i - Cbar_i' slope.
///
/// partial_f tests the indicators jointly against a model with one common
/// intercept and the same covariates (df m-1 and m*n - m - K).
inline FirstStageResult iv_first_stage(const ClusteredDataset& d, const CovariatePolicy& policy = {}) {
    const Eigen::Index m = d.m, n = d.n, N = d.rows();
    if (m < 2) throw SingularDesign("first stage needs at least 2 clusters");

    const WithinDesign w = detail::center_design(d, policy);
    const Eigen::Index K = w.X.cols();
    if (K > 0 && N <= m + K)
        throw SingularDesign("first stage has " + std::to_string(N) + " rows for " + std::to_string(m + K) +
                             " coefficients");

    FirstStageResult fs;
    fs.covariate_names = w.names;
    double rss_u = 0.0;
    MatrixXd X_raw(N, K);
    if (K > 0) {
        const Design adj = detail::adjustment_columns(d, policy);
        for (Eigen::Index j = 0, out = 0; j < adj.X.cols(); ++j) {
            if (out < K && adj.names[static_cast<std::size_t>(j)] == w.names[static_cast<std::size_t>(out)])
                X_raw.col(out++) = adj.X.col(j);
        }
        const LeastSquaresFit ls = fit_least_squares(w.X, w.t);
        fs.covariate_coef = ls.coef;
        rss_u = ls.rss;
    } else {
        fs.covariate_coef.resize(0);
        rss_u = w.t.squaredNorm();
    }

    const VectorXd t_means = cluster_means(d.t);
    fs.gamma_hat = t_means;
    if (K > 0) fs.gamma_hat -= stacked_cluster_means(X_raw, m, n) * fs.covariate_coef;

    fs.t_hat.resize(m, n);
    if (K > 0) {
        const VectorXd cov_part = X_raw * fs.covariate_coef;
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < n; ++j) fs.t_hat(i, j) = fs.gamma_hat(i) + cov_part(i * n + j);
    } else {
        for (Eigen::Index i = 0; i < m; ++i) fs.t_hat.row(i).setConstant(fs.gamma_hat(i));
    }

    // Restricted model: common intercept plus the same covariates.
    MatrixXd Xr(N, K + 1);
    Xr.col(0).setOnes();
    Xr.rightCols(K) = X_raw;
    const double rss_r = fit_least_squares(Xr, d.stacked_t()).rss;

    fs.df_num = static_cast<double>(m - 1);
    fs.df_den = static_cast<double>(N - m - K);
    const double gain = std::max(0.0, rss_r - rss_u);
    const double tiny = 1e-14 * std::max(1.0, rss_r);
    if (gain <= tiny) {
        fs.partial_f = 0.0;
    } else if (fs.df_den <= 0.0 || rss_u <= tiny) {
        fs.partial_f = std::numeric_limits<double>::infinity();
    } else {
        fs.partial_f = (gain / fs.df_num) / (rss_u / fs.df_den);
    }
    return fs;
}

/// Preference-based IV: first-stage fitted exposure replaces T in a
/// two-stage GLS. The outcome covariance is estimated from plain 2SLS
/// structural residuals by the ANOVA moment method; when that is not
/// possible (n = 1, zero within variance) the 2SLS fit is returned, flagged.
inline FitResult fit_iv(const ClusteredDataset& d, const CovariatePolicy& policy = {}) {
    const FirstStageResult fs = iv_first_stage(d, policy);
    const Eigen::Index N = d.rows();
    const VectorXd t_hat = Eigen::Map<const VectorXd>(fs.t_hat.data(), N);
    const Design second = detail::pooled_design(d, policy, t_hat, "t_hat");
    MatrixXd structural = second.X;
    structural.col(0) = d.stacked_t();
    const VectorXd y = d.stacked_y();

    const LeastSquaresFit tsls = fit_least_squares(second.X, y);
    const VectorXd resid = y - structural * tsls.coef;

    FitResult r;
    r.method = Method::IV;
    r.coef_names = second.names;
    r.diagnostics["partial_f"] = fs.partial_f;
    r.diagnostics["weak_instrument"] = fs.partial_f < kWeakInstrumentF ? 1.0 : 0.0;

    auto fall_back = [&](const char* reason) {
        const double s2 = detail::residual_variance(resid.squaredNorm(), N - second.X.cols());
        r.coef = tsls.coef;
        r.beta_hat = tsls.coef(0);
        r.var_beta_hat = tsls.unscaled_cov(0, 0) * s2;
        r.diagnostics["fallback_2sls"] = 1.0;
        r.diagnostics[reason] = 1.0;
        r.diagnostics["condition_number"] = tsls.condition_number;
        return r;
    };

    if (d.n < 2) return fall_back("varcomp_unidentified");
    const VarianceComponents vc = estimate_variance_components(detail::as_cluster_matrix(resid, d.m, d.n));
    detail::record_components(r, vc);
    if (detail::within_variance_degenerate(vc, y)) return fall_back("within_variance_zero");

    const auto step = detail::gls(second.X, y, vc, d.n);
    r.coef = step.ls.coef;
    r.beta_hat = step.ls.coef(0);
    r.var_beta_hat = step.ls.unscaled_cov(0, 0);
    r.diagnostics["condition_number"] = step.ls.condition_number;
    return r;
}

inline FitResult fit(Method method, const ClusteredDataset& d, const CovariatePolicy& policy = {}) {
    switch (method) {
        case Method::IV: return fit_iv(d, policy);
        case Method::OLS: return fit_ols(d, policy);
        case Method::FE: return fit_fe(d, policy);
        case Method::LMM: return fit_lmm(d, policy);
    }
    throw std::invalid_argument("unknown method");
}

}  // namespace confound_bench
