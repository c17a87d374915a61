// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fail.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "confound_bench.hpp"

using namespace confound_bench;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            notes.push_back(what);
        }
    }
};

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

ScenarioConfig defaults(ConfounderMode mode, int m = 200, int n = 20) {
    ScenarioConfig cfg;
    cfg.m = m;
    cfg.n = n;
    cfg.confounder_mode = mode;
    return cfg;
}

constexpr std::array<ConfounderMode, 3> kModes = {ConfounderMode::W_only, ConfounderMode::B_only,
                                                  ConfounderMode::W_and_B};

/// Every method at every default scenario, tolerance z Monte Carlo SEs.
void check_agreement(Outcome& o, int m, int reps, double z, std::uint64_t seed) {
    for (auto mode : kModes) {
        auto cfg = defaults(mode, m);
        cfg.seed = seed;
        MonteCarloOptions opts;
        opts.reps = reps;
        opts.z = z;
        const auto r = run_monte_carlo(std::vector<ScenarioConfig>{cfg}, {}, opts);
        for (const auto& c : r.cells) {
            const double dev = std::abs(c.mean_bias - c.analytic_bias) / c.mc_se;
            o.check(c.agreement.value_or(false) && c.failures == 0,
                    std::string(to_string(mode)) + "/" + std::string(to_string(c.method)) + ": mean " +
                        fmt(c.mean_bias) + " vs analytic " + fmt(c.analytic_bias) + " (" + fmt(dev) + " SE)");
        }
    }
}

Outcome criterion_1() {
    Outcome o;
    const auto cfg = defaults(ConfounderMode::W_and_B);
    LmmPlimConstants unused;
    const auto in_w = bias_inputs(cfg, Scenario::W_only);
    const auto in_b = bias_inputs(cfg, Scenario::B_only);
    const auto in_wb = bias_inputs(cfg, Scenario::W_and_B);
    const Regime fixed = Regime::m_infty_fixed_n, both = Regime::m_and_n_infty;
    struct Cell {
        const char* name;
        double got, expected;
    };
    // Hand-evaluated cells: alpha'V beta = 0.36 per family, sigma_a2 = 0.09, sigma_et2 = 1, n = 20.
    const Cell cells[] = {
        {"IV/W", bias_for(Method::IV, in_w, Scenario::W_only, fixed, unused), 0.018 / 0.158},
        {"OLS/W", bias_for(Method::OLS, in_w, Scenario::W_only, fixed, unused), 0.36 / 1.45},
        {"FE/W", bias_for(Method::FE, in_w, Scenario::W_only, fixed, unused), 0.36 / 1.36},
        {"IV/B", bias_for(Method::IV, in_b, Scenario::B_only, fixed, unused), 0.36 / 0.5},
        {"OLS/B", bias_for(Method::OLS, in_b, Scenario::B_only, fixed, unused), 0.36 / 1.45},
        {"FE/B", bias_for(Method::FE, in_b, Scenario::B_only, fixed, unused), 0.0},
        {"OLS/W+B", bias_for(Method::OLS, in_wb, Scenario::W_and_B, fixed, unused), 0.72 / 1.81},
        {"IV/W+B", bias_for(Method::IV, in_wb, Scenario::W_and_B, fixed, unused), 0.378 / 0.518},
        {"IV/B double limit", bias_for(Method::IV, in_b, Scenario::B_only, both, unused), 0.36 / 0.45},
    };
    const double printed[] = {0.113924, 0.248276, 0.264706, 0.72, 0.248276, 0.0, 0.397790, 0.729730, 0.8};
    for (std::size_t k = 0; k < std::size(cells); ++k) {
        o.check(std::abs(cells[k].got - cells[k].expected) <= 1e-9,
                std::string(cells[k].name) + " = " + fmt(cells[k].got) + ", expected " + fmt(cells[k].expected));
        o.check(std::abs(cells[k].got - printed[k]) <= 5e-7, std::string(cells[k].name) + " rounds differently");
    }
    return o;
}

Outcome criterion_2() {
    Outcome o;
    check_agreement(o, 200, 1000, 3.0, 20210611);
    return o;
}

Outcome criterion_3() {
    Outcome o;
    check_agreement(o, 10, 5000, 4.0, 20210611);
    return o;
}

Outcome criterion_4() {
    Outcome o;
    double prev = INFINITY;
    for (int n : {1, 2, 5, 20, 100, 400}) {
        const double b = bias_iv(defaults(ConfounderMode::W_only, 200, n), Scenario::W_only, Regime::m_infty_fixed_n);
        o.check(b < prev, "IV/W not decreasing at n=" + std::to_string(n));
        prev = b;
    }
    o.check(prev < 0.005, "IV/W at n=400 is " + fmt(prev));

    for (auto mode : kModes) {
        const auto cfg = defaults(mode, 200, 1);
        const auto plims = calibrate_lmm_plims(cfg);
        const double ols = analytic_bias(Method::OLS, cfg, {}, plims);
        const double iv = analytic_bias(Method::IV, cfg, {}, plims);
        const double lmm = analytic_bias(Method::LMM, cfg, {}, plims);
        o.check(std::abs(iv - ols) <= 1e-9 && std::abs(lmm - ols) <= 1e-9,
                std::string(to_string(mode)) + " n=1: IV " + fmt(iv) + ", LMM " + fmt(lmm) + ", OLS " + fmt(ols));
    }

    const auto cfg = defaults(ConfounderMode::W_and_B);
    for (auto s : {Scenario::W_only, Scenario::W_and_B}) {
        const double fe = bias_fe(cfg, s, Regime::m_and_n_infty);
        const double lmm = bias_lmm(cfg, s, Regime::m_and_n_infty, {});
        o.check(fe == lmm, std::string(to_string(s)) + " double limit FE " + fmt(fe) + " != LMM " + fmt(lmm));
    }
    return o;
}

/// Coefficient on T from an explicit dummy-variable regression.
double lsdv_beta(const ClusteredDataset& d) {
    std::vector<Eigen::Index> within;
    for (Eigen::Index k = 0; k < d.c.cols(); ++k)
        if (d.c_levels[static_cast<std::size_t>(k)] == CovariateLevel::within) within.push_back(k);
    const auto K = static_cast<Eigen::Index>(within.size());
    MatrixXd X = MatrixXd::Zero(d.rows(), 1 + d.m + K);
    X.col(0) = d.stacked_t();
    for (Eigen::Index r = 0; r < d.rows(); ++r) X(r, 1 + r / d.n) = 1.0;
    for (Eigen::Index k = 0; k < K; ++k) X.col(1 + d.m + k) = d.c.col(within[static_cast<std::size_t>(k)]);
    return (X.transpose() * X).ldlt().solve(X.transpose() * d.stacked_y())(0);
}

Outcome criterion_5() {
    Outcome o;
    std::mt19937_64 eng(5);
    std::uniform_int_distribution<int> mdist(3, 40), ndist(2, 10), mode(0, 3);
    double worst_fe = 0.0, worst_gls = 0.0, worst_fs = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        ScenarioConfig cfg;
        cfg.m = mdist(eng);
        cfg.n = ndist(eng);
        cfg.confounder_mode = static_cast<ConfounderMode>(mode(eng));
        cfg.seed = eng();
        const auto d = simulate_dataset(cfg, 0);
        worst_fe = std::max(worst_fe, std::abs(fit_fe(d).beta_hat - lsdv_beta(d)));

        LmmOptions zero;
        zero.fixed_components = VarianceComponents{0.0, 1.3, false};
        worst_gls = std::max(worst_gls, std::abs(fit_lmm(d, {}, zero).beta_hat - fit_ols(d).beta_hat));

        CovariatePolicy bare;
        bare.include_measured = false;
        const auto fs = iv_first_stage(d, bare);
        const VectorXd means = cluster_means(d.t);
        for (Eigen::Index i = 0; i < d.m; ++i)
            worst_fs = std::max(worst_fs, (fs.t_hat.row(i).array() - means(i)).abs().maxCoeff());
    }
    o.check(worst_fe <= 1e-8, "FE vs LSDV max gap " + fmt(worst_fe));
    o.check(worst_gls <= 1e-10, "GLS with zero between variance vs OLS max gap " + fmt(worst_gls));
    o.check(worst_fs <= 1e-12, "first stage vs cluster means max gap " + fmt(worst_fs));
    return o;
}

Outcome criterion_6() {
    Outcome o;
    double prev_gap = -INFINITY;
    for (int n : {2, 5, 20, 100}) {
        const auto cfg = defaults(ConfounderMode::B_only, 200, n);
        const double ols = std::abs(bias_ols(cfg, Scenario::B_only, Regime::m_infty_fixed_n));
        const double iv = std::abs(bias_iv(cfg, Scenario::B_only, Regime::m_infty_fixed_n));
        o.check(ols < iv, "n=" + std::to_string(n) + ": |OLS| " + fmt(ols) + " >= |IV| " + fmt(iv));
        o.check(iv - ols > prev_gap, "gap not increasing at n=" + std::to_string(n));
        prev_gap = iv - ols;
    }
    return o;
}

Outcome criterion_7() {
    Outcome o;
    for (auto mode : kModes) {
        const auto with_c = defaults(mode);
        auto without_c = with_c;
        without_c.alpha_c.setZero();
        without_c.beta_c.setZero();
        MonteCarloOptions opts;
        opts.reps = 1000;
        const auto a = run_monte_carlo(std::vector<ScenarioConfig>{with_c}, {}, opts);
        const auto b = run_monte_carlo(std::vector<ScenarioConfig>{without_c}, {}, opts);
        for (Method m : kAllMethods) {
            const auto& ca = a.cell(0, m);
            const auto& cb = b.cell(0, m);
            const double se = std::hypot(ca.mc_se, cb.mc_se);
            o.check(std::abs(ca.mean_bias - cb.mean_bias) <= 3.0 * se,
                    std::string(to_string(mode)) + "/" + std::string(to_string(m)) + ": with C " +
                        fmt(ca.mean_bias) + ", without C " + fmt(cb.mean_bias) + ", se " + fmt(se));
        }
    }
    return o;
}

Outcome criterion_8() {
    Outcome o;
    const auto cfg = defaults(ConfounderMode::W_and_B);
    CovariatePolicy oracle;
    oracle.include_latent_w = oracle.include_latent_b = true;
    MonteCarloOptions opts;
    opts.reps = 1000;
    const auto r = run_monte_carlo(std::vector<ScenarioConfig>{cfg}, oracle, opts);
    for (const auto& c : r.cells)
        o.check(std::abs(c.mean_bias) <= 3.0 * c.mc_se && c.failures == 0,
                std::string(to_string(c.method)) + ": mean bias " + fmt(c.mean_bias) + ", se " + fmt(c.mc_se));
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome criterion_9() {
    Outcome o;
    const fs::path dir = fs::temp_directory_path() / "confound_bench_acceptance";
    fs::remove_all(dir);
    ExperimentSpec spec;
    spec.name = "determinism";
    spec.base.m = 40;
    spec.base.n = 5;
    spec.axis = "n";
    spec.values = {2, 5, 10};
    spec.reps = 50;
    spec.calibration.m_cal = 300;
    spec.calibration.reps_cal = 6;
    std::vector<std::pair<std::string, std::string>> outputs;
    for (unsigned threads : {1u, 1u, 3u, 8u}) {
        const auto sub = dir / ("t" + std::to_string(outputs.size()));
        spec.csv_path = "out.csv";
        spec.svg_path = "out.svg";
        run_experiment(spec, sub, threads);
        outputs.emplace_back(slurp(sub / "out.csv"), slurp(sub / "out.svg"));
    }
    for (std::size_t k = 1; k < outputs.size(); ++k) {
        o.check(outputs[k].first == outputs[0].first, "CSV differs in run " + std::to_string(k));
        o.check(outputs[k].second == outputs[0].second, "SVG differs in run " + std::to_string(k));
    }
    o.check(!outputs[0].first.empty() && !outputs[0].second.empty(), "empty output");
    fs::remove_all(dir);
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"1 analytic bias table matches hand-evaluated cells", criterion_1},
        {"2 empirical vs analytic bias at m=200, 1000 reps, 3 SE", criterion_2},
        {"3 empirical vs analytic bias at m=10, 5000 reps, 4 SE", criterion_3},
        {"4 limit behaviour in n", criterion_4},
        {"5 structural identities", criterion_5},
        {"6 OLS below IV for between-cluster confounding", criterion_6},
        {"7 invariance to measured covariates", criterion_7},
        {"8 adjusting for the latent confounders removes bias", criterion_8},
        {"9 byte-identical outputs across runs and worker counts", criterion_9},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.notes.push_back(std::string("exception: ") + e.what());
        }
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << '\n';
        for (const auto& note : o.notes) std::cout << "     " << note << '\n';
        std::cout.flush();
        failed += o.pass ? 0 : 1;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << '\n';
    return failed == 0 ? 0 : 1;
}
