#pragma once

#include <array>
#include <cmath>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "confound_bench/dgp.hpp"
#include "confound_bench/estimators.hpp"
#include "confound_bench/format.hpp"
#include "confound_bench/model.hpp"
#include "confound_bench/parallel.hpp"

namespace confound_bench {

enum class Scenario { W_only, B_only, W_and_B };
enum class Regime { m_infty_fixed_n, m_and_n_infty };

inline constexpr std::array<Scenario, 3> kAllScenarios = {Scenario::W_only, Scenario::B_only, Scenario::W_and_B};
inline constexpr std::array<Regime, 2> kAllRegimes = {Regime::m_infty_fixed_n, Regime::m_and_n_infty};

inline std::string_view to_string(Scenario s) {
    switch (s) {
        case Scenario::W_only: return "W_only";
        case Scenario::B_only: return "B_only";
        case Scenario::W_and_B: return "W_and_B";
    }
    return "?";
}

inline std::string_view to_string(Regime r) {
    return r == Regime::m_infty_fixed_n ? "m_infty_fixed_n" : "m_and_n_infty";
}

/// Second moments that enter every asymptotic bias expression.
struct BiasInputs {
    double w_tt = 0.0;  // alpha_w' V_w alpha_w
    double w_ty = 0.0;  // alpha_w' V_w beta_w
    double b_tt = 0.0;  // alpha_b' V_b alpha_b
    double b_ty = 0.0;  // alpha_b' V_b beta_b
    double sigma_a2 = 0.0;
    double sigma_et2 = 0.0;
    int n = 1;
};

inline BiasInputs bias_inputs(const ScenarioConfig& cfg, Scenario scenario) {
    cfg.validate();
    BiasInputs in;
    in.sigma_a2 = cfg.sigma_a2;
    in.sigma_et2 = cfg.sigma_et2;
    in.n = cfg.n;
    if (scenario != Scenario::B_only) {
        in.w_tt = cfg.alpha_w.dot(cfg.V_w * cfg.alpha_w);
        in.w_ty = cfg.alpha_w.dot(cfg.V_w * cfg.beta_w);
    }
    if (scenario != Scenario::W_only) {
        in.b_tt = cfg.alpha_b.dot(cfg.V_b * cfg.alpha_b);
        in.b_ty = cfg.alpha_b.dot(cfg.V_b * cfg.beta_b);
    }
    return in;
}

/// Inputs for what a fit under `policy` leaves unadjusted: generated W/B not
/// included as regressors, plus excluded measured covariates, which act as
/// within- or between-cluster confounders according to their level.
inline BiasInputs unadjusted_bias_inputs(const ScenarioConfig& cfg, const CovariatePolicy& policy) {
    cfg.validate();
    BiasInputs in;
    in.sigma_a2 = cfg.sigma_a2;
    in.sigma_et2 = cfg.sigma_et2;
    in.n = cfg.n;
    if (cfg.generates_w() && !policy.include_latent_w) {
        in.w_tt = cfg.alpha_w.dot(cfg.V_w * cfg.alpha_w);
        in.w_ty = cfg.alpha_w.dot(cfg.V_w * cfg.beta_w);
    }
    if (cfg.generates_b() && !policy.include_latent_b) {
        in.b_tt = cfg.alpha_b.dot(cfg.V_b * cfg.alpha_b);
        in.b_ty = cfg.alpha_b.dot(cfg.V_b * cfg.beta_b);
    }
    if (!policy.include_measured) {
        for (std::size_t k = 0; k < cfg.covariates.size(); ++k) {
            const auto idx = static_cast<Eigen::Index>(k);
            const double var = cfg.covariates[k].variance;
            const double tt = cfg.alpha_c(idx) * var * cfg.alpha_c(idx);
            const double ty = cfg.alpha_c(idx) * var * cfg.beta_c(idx);
            if (cfg.covariates[k].level == CovariateLevel::within) {
                in.w_tt += tt;
                in.w_ty += ty;
            } else {
                in.b_tt += tt;
                in.b_ty += ty;
            }
        }
    }
    return in;
}

/// Limits of the LMM variance-component estimators under misspecification.
struct LmmPlimConstants {
    double sigma_de2 = 0.0;    // between (random intercept) component
    double sigma_chie2 = 1.0;  // within component
    double se_de2 = 0.0;       // Monte Carlo standard errors of the averages
    double se_chie2 = 0.0;
    int m_cal = 0;
    int reps_cal = 0;
    std::uint64_t seed = 0;
    bool identified = true;  // false when n = 1
};

namespace detail {

inline constexpr double kMinDenominator = 1e-300;

inline double ratio(double num, double den, std::string_view what) {
    if (!(std::abs(den) >= kMinDenominator))
        throw ZeroDenominator(std::string(what) + ": bias denominator vanishes");
    return num / den;
}

inline void check_plims(const LmmPlimConstants& p) {
    if (!(p.sigma_chie2 > 0.0) || !(p.sigma_de2 >= 0.0) || !std::isfinite(p.sigma_chie2) ||
        !std::isfinite(p.sigma_de2))
        throw InvalidConfig("LMM plim constants must be finite with sigma_chie2 > 0 and sigma_de2 >= 0");
}

/// sigma_chie2 / (sigma_chie2 + (n - 1) sigma_de2): the weight the LMM
/// puts on between-cluster variation relative to within.
inline double lmm_between_weight(const LmmPlimConstants& p, int n) {
    return p.sigma_chie2 / (p.sigma_chie2 + static_cast<double>(n - 1) * p.sigma_de2);
}

}  // namespace detail

inline double bias_iv(const BiasInputs& in, Scenario s, Regime r) {
    const double n = in.n;
    if (r == Regime::m_and_n_infty) {
        if (s == Scenario::W_only) return 0.0;
        return detail::ratio(in.b_ty, in.sigma_a2 + in.b_tt, "IV");
    }
    switch (s) {
        case Scenario::W_only:
            return detail::ratio(in.w_ty / n, in.sigma_a2 + (in.w_tt + in.sigma_et2) / n, "IV");
        case Scenario::B_only:
            return detail::ratio(in.b_ty, (in.sigma_a2 + in.b_tt) + in.sigma_et2 / n, "IV");
        case Scenario::W_and_B:
            return detail::ratio(in.b_ty + in.w_ty / n, (in.sigma_a2 + in.b_tt) + (in.w_tt + in.sigma_et2) / n, "IV");
    }
    return 0.0;
}

/// Same in both regimes and for every n.
inline double bias_ols(const BiasInputs& in, Scenario s, Regime) {
    switch (s) {
        case Scenario::W_only: return detail::ratio(in.w_ty, in.sigma_a2 + in.w_tt + in.sigma_et2, "OLS");
        case Scenario::B_only: return detail::ratio(in.b_ty, in.sigma_a2 + in.b_tt + in.sigma_et2, "OLS");
        case Scenario::W_and_B:
            return detail::ratio(in.b_ty + in.w_ty, in.sigma_a2 + in.b_tt + in.w_tt + in.sigma_et2, "OLS");
    }
    return 0.0;
}

/// Only W matters; the cluster effects absorb B entirely.
inline double bias_fe(const BiasInputs& in, Scenario s, Regime) {
    if (s == Scenario::B_only) return 0.0;
    return detail::ratio(in.w_ty, in.w_tt + in.sigma_et2, "FE");
}

inline double bias_lmm(const BiasInputs& in, Scenario s, Regime r, const LmmPlimConstants& plims) {
    if (r == Regime::m_and_n_infty) {
        if (s == Scenario::B_only) return 0.0;
        return detail::ratio(in.w_ty, in.w_tt + in.sigma_et2, "LMM");
    }
    detail::check_plims(plims);
    const double rho = detail::lmm_between_weight(plims, in.n);
    switch (s) {
        case Scenario::W_only:
            return detail::ratio(in.w_ty, in.sigma_a2 * rho + (in.w_tt + in.sigma_et2), "LMM");
        case Scenario::B_only:
            return detail::ratio(in.b_ty, (in.sigma_a2 + in.b_tt) + in.sigma_et2 / rho, "LMM");
        case Scenario::W_and_B:
            return detail::ratio(in.b_ty * rho + in.w_ty, (in.sigma_a2 + in.b_tt) * rho + (in.w_tt + in.sigma_et2),
                                 "LMM");
    }
    return 0.0;
}

inline double bias_iv(const ScenarioConfig& cfg, Scenario s, Regime r) { return bias_iv(bias_inputs(cfg, s), s, r); }
inline double bias_ols(const ScenarioConfig& cfg, Scenario s, Regime r) { return bias_ols(bias_inputs(cfg, s), s, r); }
inline double bias_fe(const ScenarioConfig& cfg, Scenario s, Regime r) { return bias_fe(bias_inputs(cfg, s), s, r); }
inline double bias_lmm(const ScenarioConfig& cfg, Scenario s, Regime r, const LmmPlimConstants& plims) {
    return bias_lmm(bias_inputs(cfg, s), s, r, plims);
}

inline double bias_for(Method method, const BiasInputs& in, Scenario s, Regime r, const LmmPlimConstants& plims) {
    switch (method) {
        case Method::IV: return bias_iv(in, s, r);
        case Method::OLS: return bias_ols(in, s, r);
        case Method::FE: return bias_fe(in, s, r);
        case Method::LMM: return bias_lmm(in, s, r, plims);
    }
    return 0.0;
}

/// Fixed-n analytic bias for whatever a fit under `policy` leaves unadjusted.
inline double analytic_bias(Method method, const ScenarioConfig& cfg, const CovariatePolicy& policy,
                            const LmmPlimConstants& plims) {
    return bias_for(method, unadjusted_bias_inputs(cfg, policy), Scenario::W_and_B, Regime::m_infty_fixed_n, plims);
}

struct BiasCell {
    Method method = Method::IV;
    Scenario scenario = Scenario::W_only;
    Regime regime = Regime::m_infty_fixed_n;
    int n = 1;  // meaningful for the fixed-n regime only
    double value = 0.0;
};

/// All 24 cells: regime-major, then scenario, then method (IV, OLS, FE, LMM).
inline std::vector<BiasCell> bias_table(const ScenarioConfig& cfg, const LmmPlimConstants& plims) {
    std::vector<BiasCell> cells;
    cells.reserve(24);
    for (Regime r : kAllRegimes)
        for (Scenario s : kAllScenarios) {
            const BiasInputs in = bias_inputs(cfg, s);
            for (Method m : kAllMethods) cells.push_back({m, s, r, cfg.n, bias_for(m, in, s, r, plims)});
        }
    return cells;
}

/// Rows are (regime, scenario); one column per method.
inline void write_bias_table_csv(std::ostream& os, const std::vector<BiasCell>& cells) {
    os << "regime,scenario,n,IV,OLS,FE,LMM\n";
    for (Regime r : kAllRegimes)
        for (Scenario s : kAllScenarios) {
            std::array<std::string, 4> vals;
            int n = 0;
            for (const auto& c : cells)
                if (c.regime == r && c.scenario == s) {
                    vals[static_cast<std::size_t>(c.method)] = format_double(c.value);
                    n = c.n;
                }
            os << to_string(r) << ',' << to_string(s) << ',' << (r == Regime::m_infty_fixed_n ? std::to_string(n) : "inf");
            for (const auto& v : vals) os << ',' << v;
            os << '\n';
        }
}

struct CalibrationOptions {
    int m_cal = 2000;
    int reps_cal = 50;
    unsigned threads = 0;
};

/// Estimates the limits of the LMM variance components by simulation: draws
/// reps_cal datasets with m_cal clusters at the config's n, fits pooled OLS
/// under `policy`, and averages the ANOVA components of the residuals.
inline LmmPlimConstants calibrate_lmm_plims(const ScenarioConfig& cfg, const CalibrationOptions& opts = {},
                                            const CovariatePolicy& policy = {}) {
    if (opts.m_cal < 2 || opts.reps_cal < 2) throw InvalidConfig("calibration needs m_cal >= 2 and reps_cal >= 2");
    ScenarioConfig big = cfg;
    big.m = opts.m_cal;
    big.validate();

    LmmPlimConstants out;
    out.m_cal = opts.m_cal;
    out.reps_cal = opts.reps_cal;
    out.seed = cfg.seed ^ 0xC2B2AE3D27D4EB4Full;
    if (cfg.n < 2) {
        out.identified = false;
        return out;
    }

    std::vector<VarianceComponents> draws(static_cast<std::size_t>(opts.reps_cal));
    parallel_for(draws.size(), opts.threads, [&](std::size_t r) {
        const ClusteredDataset d = simulate_dataset(big, ReplicationSeed{out.seed, r});
        const Design des = detail::pooled_design(d, policy, d.stacked_t(), "t");
        const LeastSquaresFit ls = fit_least_squares(des.X, d.stacked_y());
        draws[r] = estimate_variance_components(detail::as_cluster_matrix(ls.residuals, d.m, d.n));
    });

    const double k = static_cast<double>(draws.size());
    double sd = 0.0, sc = 0.0;
    for (const auto& v : draws) {
        sd += v.sigma_d2;
        sc += v.sigma_chi2;
    }
    out.sigma_de2 = sd / k;
    out.sigma_chie2 = sc / k;
    double vd = 0.0, vcv = 0.0;
    for (const auto& v : draws) {
        vd += (v.sigma_d2 - out.sigma_de2) * (v.sigma_d2 - out.sigma_de2);
        vcv += (v.sigma_chi2 - out.sigma_chie2) * (v.sigma_chi2 - out.sigma_chie2);
    }
    out.se_de2 = std::sqrt(vd / (k - 1.0) / k);
    out.se_chie2 = std::sqrt(vcv / (k - 1.0) / k);
    return out;
}

}  // namespace confound_bench
