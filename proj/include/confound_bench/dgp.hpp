#pragma once

#include <charconv>
#include <ostream>
#include <string>
#include <vector>

#include "confound_bench/format.hpp"
#include "confound_bench/model.hpp"
#include "confound_bench/rng.hpp"

namespace confound_bench {

namespace detail {

/// Square-root factor L with L L' = V. Eigenvalues within the PSD tolerance
/// of zero are floored, so rank-deficient covariances are accepted.
inline MatrixXd covariance_factor(const MatrixXd& V, const char* name) {
    if (V.size() == 0) return V;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(V);
    if (es.info() != Eigen::Success) throw InvalidCovariance(std::string(name) + ": eigendecomposition failed");
    const VectorXd& lambda = es.eigenvalues();
    const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
    if (lambda.minCoeff() < -kPsdTolerance * scale)
        throw InvalidCovariance(std::string(name) + " is not positive semidefinite");
    const VectorXd root = lambda.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

inline void fill_mvn_rows(MatrixXd& out, const VectorXd& mean, const MatrixXd& factor, NormalStream& stream) {
    VectorXd z(mean.size());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = stream();
        out.row(r) = (mean + factor * z).transpose();
    }
}

}  // namespace detail

/// One draw from the exposure/outcome models:
///   T_ij = a_0i + intercept_t + C_ij'alpha_c + W_ij'alpha_w + B_i'alpha_b + e^t_ij
///   Y_ij = b_0i + intercept_y + beta T_ij + C_ij'beta_c + W_ij'beta_w + B_i'beta_b + e^y_ij
/// Every random component reads its own stream, so the result is a pure
/// function of (cfg, rep).
inline ClusteredDataset simulate_dataset(const ScenarioConfig& cfg, ReplicationSeed rep) {
    cfg.validate();

    const Eigen::Index m = cfg.m;
    const Eigen::Index n = cfg.n;
    const Eigen::Index N = m * n;

    ClusteredDataset d;
    d.m = m;
    d.n = n;

    const auto K_c = static_cast<Eigen::Index>(cfg.covariates.size());
    d.c.resize(N, K_c);
    for (Eigen::Index k = 0; k < K_c; ++k) {
        const auto& cov = cfg.covariates[static_cast<std::size_t>(k)];
        d.c_levels.push_back(cov.level);
        NormalStream s(rep, measured_covariate_tag(static_cast<std::uint32_t>(k)));
        const double sd = std::sqrt(cov.variance);
        if (cov.level == CovariateLevel::within) {
            for (Eigen::Index r = 0; r < N; ++r) d.c(r, k) = cov.mean + sd * s();
        } else {
            for (Eigen::Index i = 0; i < m; ++i) d.c.col(k).segment(i * n, n).setConstant(cov.mean + sd * s());
        }
    }

    if (cfg.generates_w()) {
        d.w_latent.resize(N, cfg.V_w.rows());
        NormalStream s(rep, StreamTag::within_confounder);
        detail::fill_mvn_rows(d.w_latent, cfg.mean_w, detail::covariance_factor(cfg.V_w, "V_w"), s);
    } else {
        d.w_latent.resize(N, 0);
    }
    if (cfg.generates_b()) {
        d.b_latent.resize(m, cfg.V_b.rows());
        NormalStream s(rep, StreamTag::between_confounder);
        detail::fill_mvn_rows(d.b_latent, cfg.mean_b, detail::covariance_factor(cfg.V_b, "V_b"), s);
    } else {
        d.b_latent.resize(m, 0);
    }

    NormalStream s_a(rep, StreamTag::cluster_effect_t);
    NormalStream s_b(rep, StreamTag::cluster_effect_y);
    NormalStream s_et(rep, StreamTag::noise_t);
    NormalStream s_ey(rep, StreamTag::noise_y);
    const double sd_a = std::sqrt(cfg.sigma_a2), sd_b = std::sqrt(cfg.sigma_b2);
    const double sd_et = std::sqrt(cfg.sigma_et2), sd_ey = std::sqrt(cfg.sigma_ey2);

    const VectorXd c_t = d.c * cfg.alpha_c;
    const VectorXd c_y = d.c * cfg.beta_c;
    const VectorXd w_t = d.has_w() ? VectorXd(d.w_latent * cfg.alpha_w) : VectorXd::Zero(N);
    const VectorXd w_y = d.has_w() ? VectorXd(d.w_latent * cfg.beta_w) : VectorXd::Zero(N);
    const VectorXd b_t = d.has_b() ? VectorXd(d.b_latent * cfg.alpha_b) : VectorXd::Zero(m);
    const VectorXd b_y = d.has_b() ? VectorXd(d.b_latent * cfg.beta_b) : VectorXd::Zero(m);

    d.t.resize(m, n);
    d.y.resize(m, n);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double a0 = sd_a * s_a();
        const double b0 = sd_b * s_b();
        for (Eigen::Index j = 0; j < n; ++j) {
            const Eigen::Index r = i * n + j;
            const double t = cfg.intercept_t + a0 + c_t(r) + w_t(r) + b_t(i) + sd_et * s_et();
            d.t(i, j) = t;
            d.y(i, j) = cfg.intercept_y + b0 + cfg.beta * t + c_y(r) + w_y(r) + b_y(i) + sd_ey * s_ey();
        }
    }
    return d;
}

/// Replication `index` of the config's own master seed.
inline ClusteredDataset simulate_dataset(const ScenarioConfig& cfg, std::uint64_t index) {
    return simulate_dataset(cfg, ReplicationSeed{cfg.seed, index});
}

/// Configs for a one-parameter sweep. Seeds of successive points are
/// offset so the points draw independent data.
struct ScenarioGrid {
    std::string axis;
    std::vector<double> values;
    std::vector<ScenarioConfig> configs;
};

namespace detail {

inline int integral_axis_value(const std::string& axis, double v, int min_value) {
    if (v != std::floor(v) || v < min_value || v > 1e9)
        throw InvalidConfig("axis '" + axis + "' needs an integer >= " + std::to_string(min_value) + ", got " +
                            format_double(v));
    return static_cast<int>(v);
}

/// Parses "alpha_<k>w" style names into (family letter, is_alpha, k).
inline bool parse_effect_axis(const std::string& axis, char& family, bool& is_alpha, int& k) {
    std::string_view s = axis;
    if (s.starts_with("alpha_")) {
        is_alpha = true;
        s.remove_prefix(6);
    } else if (s.starts_with("beta_")) {
        is_alpha = false;
        s.remove_prefix(5);
    } else {
        return false;
    }
    if (s.size() < 2) return false;
    family = s.back();
    s.remove_suffix(1);
    if (family != 'w' && family != 'b' && family != 'c') return false;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), k);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size() && k >= 1;
}

}  // namespace detail

/// Sets one named numeric field. Effect names follow the alpha_<k><family>
/// convention: alpha_1w is the first W effect on T, alpha_1c the exposure
/// intercept and alpha_2c the first measured covariate effect.
inline void set_axis_value(ScenarioConfig& cfg, const std::string& axis, double v) {
    if (axis == "n") { cfg.n = detail::integral_axis_value(axis, v, 1); return; }
    if (axis == "m") { cfg.m = detail::integral_axis_value(axis, v, 2); return; }
    if (axis == "beta") { cfg.beta = v; return; }
    if (axis == "sigma_a2") { cfg.sigma_a2 = v; return; }
    if (axis == "sigma_b2") { cfg.sigma_b2 = v; return; }
    if (axis == "sigma_et2") { cfg.sigma_et2 = v; return; }
    if (axis == "sigma_ey2") { cfg.sigma_ey2 = v; return; }
    if (axis == "intercept_t") { cfg.intercept_t = v; return; }
    if (axis == "intercept_y") { cfg.intercept_y = v; return; }

    char family = 0;
    bool is_alpha = false;
    int k = 0;
    if (!detail::parse_effect_axis(axis, family, is_alpha, k)) throw UnknownAxis("unknown axis '" + axis + "'");
    if (family == 'c') {
        if (k == 1) {
            (is_alpha ? cfg.intercept_t : cfg.intercept_y) = v;
            return;
        }
        VectorXd& target = is_alpha ? cfg.alpha_c : cfg.beta_c;
        if (k - 2 >= target.size()) throw UnknownAxis("axis '" + axis + "' names a missing covariate");
        target(k - 2) = v;
        return;
    }
    VectorXd& target = family == 'w' ? (is_alpha ? cfg.alpha_w : cfg.beta_w) : (is_alpha ? cfg.alpha_b : cfg.beta_b);
    if (k - 1 >= target.size()) throw UnknownAxis("axis '" + axis + "' names a missing confounder");
    target(k - 1) = v;
}

inline bool is_known_axis(const std::string& axis) {
    ScenarioConfig probe;
    try {
        set_axis_value(probe, axis, axis == "m" ? 2.0 : 1.0);
        return true;
    } catch (const UnknownAxis&) {
        return false;
    }
}

inline ScenarioGrid scenario_grid(const ScenarioConfig& base, const std::string& axis,
                                  const std::vector<double>& values) {
    if (!is_known_axis(axis)) throw UnknownAxis("unknown axis '" + axis + "'");
    ScenarioGrid grid{axis, values, {}};
    grid.configs.reserve(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) {
        ScenarioConfig cfg = base;
        set_axis_value(cfg, axis, values[k]);
        cfg.seed = base.seed + 0x9E3779B97F4A7C15ull * k;
        grid.configs.push_back(std::move(cfg));
    }
    return grid;
}

/// Dataset dump: cluster,unit,y,t,c_1..,[w_1..,b_1..]. Latent confounders are
/// written only on request.
inline void write_dataset_csv(std::ostream& os, const ClusteredDataset& d, bool include_latents) {
    os << "cluster,unit,y,t";
    for (Eigen::Index k = 0; k < d.c.cols(); ++k) os << ",c_" << k + 1;
    if (include_latents) {
        for (Eigen::Index k = 0; k < d.w_latent.cols(); ++k) os << ",w_" << k + 1;
        for (Eigen::Index k = 0; k < d.b_latent.cols(); ++k) os << ",b_" << k + 1;
    }
    os << '\n';
    for (Eigen::Index i = 0; i < d.m; ++i) {
        for (Eigen::Index j = 0; j < d.n; ++j) {
            const Eigen::Index r = i * d.n + j;
            os << i << ',' << j << ',' << format_double(d.y(i, j)) << ',' << format_double(d.t(i, j));
            for (Eigen::Index k = 0; k < d.c.cols(); ++k) os << ',' << format_double(d.c(r, k));
            if (include_latents) {
                for (Eigen::Index k = 0; k < d.w_latent.cols(); ++k) os << ',' << format_double(d.w_latent(r, k));
                for (Eigen::Index k = 0; k < d.b_latent.cols(); ++k) os << ',' << format_double(d.b_latent(i, k));
            }
            os << '\n';
        }
    }
}

}  // namespace confound_bench
