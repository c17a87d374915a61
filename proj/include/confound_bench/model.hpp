#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "confound_bench/linalg.hpp"

namespace confound_bench {

enum class ConfounderMode { none, W_only, B_only, W_and_B };
enum class CovariateLevel { within, between };
enum class Method { IV, OLS, FE, LMM };

inline constexpr std::array<Method, 4> kAllMethods = {Method::IV, Method::OLS, Method::FE, Method::LMM};

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::IV: return "IV";
        case Method::OLS: return "OLS";
        case Method::FE: return "FE";
        case Method::LMM: return "LMM";
    }
    return "?";
}

inline std::optional<Method> method_from_string(std::string_view s) {
    for (Method m : kAllMethods)
        if (to_string(m) == s) return m;
    return std::nullopt;
}

inline std::string_view to_string(ConfounderMode m) {
    switch (m) {
        case ConfounderMode::none: return "none";
        case ConfounderMode::W_only: return "W_only";
        case ConfounderMode::B_only: return "B_only";
        case ConfounderMode::W_and_B: return "W_and_B";
    }
    return "?";
}

inline std::optional<ConfounderMode> confounder_mode_from_string(std::string_view s) {
    for (auto m : {ConfounderMode::none, ConfounderMode::W_only, ConfounderMode::B_only, ConfounderMode::W_and_B})
        if (to_string(m) == s) return m;
    return std::nullopt;
}

inline std::string_view to_string(CovariateLevel l) { return l == CovariateLevel::within ? "within" : "between"; }

/// A measured covariate column (the intercept is not one of these).
struct MeasuredCovariate {
    CovariateLevel level = CovariateLevel::within;
    double mean = 0.0;
    double variance = 1.0;
};

/// Full parameterization of the exposure and outcome generating models.
///
/// Defaults reproduce the reference simulation design: two measured
/// covariates (one unit-level N(0,1), one cluster-level N(11,1)), one
/// within-cluster and one between-cluster unmeasured confounder, both N(1,1).
struct ScenarioConfig {
    int m = 200;
    int n = 20;
    double beta = 0.7;

    double intercept_t = 18.0;
    double intercept_y = 3.0;
    std::vector<MeasuredCovariate> covariates = {{CovariateLevel::within, 0.0, 1.0},
                                                 {CovariateLevel::between, 11.0, 1.0}};
    VectorXd alpha_c = VectorXd::Constant(2, -1.0);
    VectorXd beta_c = VectorXd::Constant(2, 1.0);

    VectorXd alpha_w = VectorXd::Constant(1, 0.6);
    VectorXd beta_w = VectorXd::Constant(1, 0.6);
    VectorXd alpha_b = VectorXd::Constant(1, 0.6);
    VectorXd beta_b = VectorXd::Constant(1, 0.6);

    double sigma_a2 = 0.09;
    double sigma_b2 = 1.0;
    double sigma_et2 = 1.0;
    double sigma_ey2 = 1.0;

    MatrixXd V_w = MatrixXd::Identity(1, 1);
    MatrixXd V_b = MatrixXd::Identity(1, 1);
    VectorXd mean_w = VectorXd::Constant(1, 1.0);
    VectorXd mean_b = VectorXd::Constant(1, 1.0);

    ConfounderMode confounder_mode = ConfounderMode::W_and_B;
    std::uint64_t seed = 20210611;

    bool generates_w() const noexcept {
        return confounder_mode == ConfounderMode::W_only || confounder_mode == ConfounderMode::W_and_B;
    }
    bool generates_b() const noexcept {
        return confounder_mode == ConfounderMode::B_only || confounder_mode == ConfounderMode::W_and_B;
    }

    /// Throws InvalidConfig (shape / range problems) or InvalidCovariance.
    void validate() const;
};

namespace detail {

inline constexpr double kPsdTolerance = 1e-12;

inline void check_covariance(const MatrixXd& V, const char* name) {
    if (V.rows() != V.cols()) throw InvalidCovariance(std::string(name) + " is not square");
    if (V.size() == 0) return;
    if (!V.allFinite()) throw InvalidCovariance(std::string(name) + " has non-finite entries");
    if ((V - V.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, V.cwiseAbs().maxCoeff()))
        throw InvalidCovariance(std::string(name) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(V, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -kPsdTolerance * scale)
        throw InvalidCovariance(std::string(name) + " has a negative eigenvalue");
}

}  // namespace detail

inline void ScenarioConfig::validate() const {
    if (m < 2) throw InvalidConfig("m must be at least 2");
    if (n < 1) throw InvalidConfig("n must be at least 1");
    const auto K_c = static_cast<Eigen::Index>(covariates.size());
    if (alpha_c.size() != K_c || beta_c.size() != K_c)
        throw InvalidConfig("alpha_c and beta_c must have one entry per measured covariate");
    for (const auto& c : covariates)
        if (!(c.variance >= 0.0)) throw InvalidConfig("measured covariate variance must be nonnegative");
    if (alpha_w.size() != beta_w.size() || alpha_w.size() != V_w.rows() || mean_w.size() != V_w.rows())
        throw InvalidConfig("alpha_w, beta_w, mean_w and V_w dimensions disagree");
    if (alpha_b.size() != beta_b.size() || alpha_b.size() != V_b.rows() || mean_b.size() != V_b.rows())
        throw InvalidConfig("alpha_b, beta_b, mean_b and V_b dimensions disagree");
    for (double v : {sigma_a2, sigma_b2, sigma_et2, sigma_ey2})
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidConfig("variance components must be finite and nonnegative");
    detail::check_covariance(V_w, "V_w");
    detail::check_covariance(V_b, "V_b");
}

/// Balanced simulated data. Row i of y and t is cluster i; the stacked
/// matrices use row index i * n + j.
struct ClusteredDataset {
    Eigen::Index m = 0;
    Eigen::Index n = 0;
    ClusterMatrix y;
    ClusterMatrix t;
    MatrixXd c;  // (m*n) x K_c, intercept excluded
    std::vector<CovariateLevel> c_levels;
    MatrixXd w_latent;  // (m*n) x K_w, zero columns when W was not generated
    MatrixXd b_latent;  // m x K_b, zero columns when B was not generated

    Eigen::Index rows() const noexcept { return m * n; }
    VectorXd stacked_y() const { return Eigen::Map<const VectorXd>(y.data(), rows()); }
    VectorXd stacked_t() const { return Eigen::Map<const VectorXd>(t.data(), rows()); }
    bool has_w() const noexcept { return w_latent.cols() > 0; }
    bool has_b() const noexcept { return b_latent.cols() > 0; }
};

/// Which columns enter a fit. Leaving a confounder out is what makes it
/// unmeasured.
struct CovariatePolicy {
    bool include_measured = true;
    bool include_latent_w = false;
    bool include_latent_b = false;
    /// FE always drops cluster-constant columns; kept for completeness.
    bool drop_between_cluster_covariates_for_fe = true;
};

struct VarianceComponents {
    double sigma_d2 = 0.0;    // between-cluster (random intercept) variance
    double sigma_chi2 = 0.0;  // within-cluster variance
    bool truncated = false;   // sigma_d2 was clipped at zero
};

struct FitResult {
    Method method = Method::OLS;
    double beta_hat = 0.0;
    VectorXd coef;
    std::vector<std::string> coef_names;
    double var_beta_hat = 0.0;
    std::optional<VarianceComponents> varcomp;
    std::map<std::string, double> diagnostics;
};

}  // namespace confound_bench
