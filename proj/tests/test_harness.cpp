#include <sstream>

#include <gtest/gtest.h>

#include "confound_bench/harness.hpp"

using namespace confound_bench;

namespace {

MonteCarloOptions quick(int reps, unsigned threads) {
    MonteCarloOptions o;
    o.reps = reps;
    o.threads = threads;
    o.calibration.m_cal = 200;
    o.calibration.reps_cal = 4;
    o.calibration.threads = threads;
    return o;
}

}  // namespace

TEST(Replication, NoiselessUnconfoundedFitsAreExact) {
    ScenarioConfig cfg;
    cfg.m = 6;
    cfg.n = 4;
    cfg.confounder_mode = ConfounderMode::none;
    cfg.sigma_b2 = cfg.sigma_ey2 = 0.0;
    const auto rr = run_replication(cfg, 0);
    for (Method m : kAllMethods) {
        ASSERT_TRUE(rr[m].has_value()) << to_string(m) << ": " << rr.error(m);
        EXPECT_NEAR(rr[m]->beta_hat, 0.7, 1e-9) << to_string(m);
    }
}

TEST(Replication, BitIdenticalOnRerun) {
    const ScenarioConfig cfg;
    const auto a = run_replication(cfg, 17), b = run_replication(cfg, 17);
    for (Method m : kAllMethods) {
        ASSERT_TRUE(a[m] && b[m]);
        EXPECT_EQ(a[m]->beta_hat, b[m]->beta_hat);
        EXPECT_EQ(a[m]->coef, b[m]->coef);
        EXPECT_EQ(a[m]->var_beta_hat, b[m]->var_beta_hat);
    }
}

TEST(Replication, SingletonClustersFailOnlyFixedEffects) {
    ScenarioConfig cfg;
    cfg.n = 1;
    cfg.m = 50;
    const auto rr = run_replication(cfg, 0);
    EXPECT_FALSE(rr[Method::FE].has_value());
    EXPECT_NE(rr.error(Method::FE).find("n >= 2"), std::string::npos);
    EXPECT_TRUE(rr[Method::IV] && rr[Method::OLS] && rr[Method::LMM]);
}

TEST(MonteCarlo, IndependentOfWorkerCount) {
    ScenarioConfig base;
    base.m = 30;
    base.n = 5;
    const auto grid = scenario_grid(base, "alpha_1b", {0.0, 0.6});
    const auto one = run_monte_carlo(grid, {}, quick(20, 1));
    const auto four = run_monte_carlo(grid, {}, quick(20, 4));
    std::ostringstream a, b;
    write_report_csv(a, one);
    write_report_csv(b, four);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(one.cells.size(), 8u);
}

TEST(MonteCarlo, FailuresAreCountedNotDropped) {
    ScenarioConfig base;
    base.m = 20;
    const auto grid = scenario_grid(base, "n", {1, 3});
    const auto r = run_monte_carlo(grid, {}, quick(10, 1));
    const auto& fe1 = r.cell(0, Method::FE);
    EXPECT_EQ(fe1.reps, 0);
    EXPECT_EQ(fe1.failures, 10);
    EXPECT_FALSE(fe1.agreement.has_value());
    EXPECT_EQ(r.cell(1, Method::FE).reps, 10);
    EXPECT_EQ(r.failures.size(), 10u);
    EXPECT_TRUE(r.all_agree() || !r.cell(1, Method::FE).agreement.value_or(true));
}

TEST(MonteCarlo, StandardErrorShrinksWithReplications) {
    ScenarioConfig cfg;
    cfg.m = 40;
    cfg.n = 5;
    MonteCarloOptions o = quick(250, 0);
    o.methods = {Method::OLS, Method::FE};
    std::vector<double> se;
    for (int reps : {250, 1000, 4000}) {
        o.reps = reps;
        se.push_back(run_monte_carlo(std::vector<ScenarioConfig>{cfg}, {}, o).cell(0, Method::OLS).mc_se);
    }
    EXPECT_NEAR(se[0] / se[1], 2.0, 0.4);
    EXPECT_NEAR(se[1] / se[2], 2.0, 0.4);
}

TEST(MonteCarlo, AnalyticOnlySkipsSimulation) {
    MonteCarloOptions o = quick(2, 1);
    o.analytic_only = true;
    o.methods = {Method::IV, Method::FE};
    const auto r = run_monte_carlo(scenario_grid(ScenarioConfig{}, "beta_1w", {0.0, 1.0}), {}, o);
    ASSERT_EQ(r.cells.size(), 4u);
    EXPECT_EQ(r.cells[0].reps, 0);
    EXPECT_FALSE(r.cells[0].agreement.has_value());
    EXPECT_TRUE(r.all_agree());
    EXPECT_EQ(r.cell(0, Method::FE).analytic_bias, 0.0);
}

TEST(MonteCarlo, RejectsTooFewReplications) {
    EXPECT_THROW(run_monte_carlo(std::vector<ScenarioConfig>{ScenarioConfig{}}, {}, quick(1, 1)), InvalidConfig);
}

TEST(ReportCsv, RoundTripIsExact) {
    ScenarioConfig base;
    base.m = 20;
    base.n = 4;
    const auto r = run_monte_carlo(scenario_grid(base, "n", {1, 4}), {}, quick(5, 1));
    std::stringstream ss;
    write_report_csv(ss, r);
    const auto back = read_report_csv(ss);
    ASSERT_EQ(back.size(), r.cells.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        const auto& a = r.cells[i];
        const auto& b = back[i];
        EXPECT_EQ(a.method, b.method);
        EXPECT_EQ(a.axis_value, b.axis_value);
        EXPECT_EQ(a.analytic_bias, b.analytic_bias);
        EXPECT_EQ(a.agreement, b.agreement);
        EXPECT_EQ(a.reps, b.reps);
        if (a.reps > 0)
            EXPECT_EQ(a.mean_bias, b.mean_bias);
        else
            EXPECT_TRUE(std::isnan(b.mean_bias));
    }
}

TEST(ReportCsv, HeaderAndRowShape) {
    MonteCarloReport r;
    MonteCarloCell c;
    c.axis = "n";
    c.axis_value = 20;
    c.method = Method::FE;
    c.mean_bias = 0.25;
    c.mc_se = 0.01;
    c.analytic_bias = 0.2647058823529412;
    c.agreement = true;
    c.reps = 1000;
    r.cells.push_back(c);
    std::ostringstream os;
    write_report_csv(os, r);
    EXPECT_EQ(os.str(), std::string(kReportHeader) + "\nn,20,FE,0.25,0.01,0.2647058823529412,true,1000,0,0\n");
    std::istringstream bad("x,y\n");
    EXPECT_THROW(read_report_csv(bad), std::invalid_argument);
}
