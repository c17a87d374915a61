#include <sstream>

#include <gtest/gtest.h>

#include "confound_bench/bias.hpp"
#include "confound_bench/dgp.hpp"
#include "confound_bench/parallel.hpp"
#include "generators.hpp"

using namespace confound_bench;

namespace {

ScenarioConfig noiseless() {
    ScenarioConfig cfg;
    cfg.m = 4;
    cfg.n = 3;
    cfg.covariates.clear();
    cfg.alpha_c.resize(0);
    cfg.beta_c.resize(0);
    cfg.confounder_mode = ConfounderMode::none;
    cfg.sigma_a2 = cfg.sigma_b2 = cfg.sigma_et2 = cfg.sigma_ey2 = 0.0;
    return cfg;
}

}  // namespace

TEST(Simulate, NoiselessDegenerateCase) {
    const auto d = simulate_dataset(noiseless(), 0);
    EXPECT_TRUE((d.t.array() == 18.0).all());
    for (Eigen::Index i = 0; i < d.y.size(); ++i) EXPECT_DOUBLE_EQ(d.y.data()[i], 3.0 + 0.7 * 18.0);
    EXPECT_FALSE(d.has_w());
    EXPECT_FALSE(d.has_b());
}

TEST(Simulate, NoiselessIdentityHoldsExactly) {
    auto cfg = noiseless();
    cfg.covariates = {{CovariateLevel::within, 0.0, 1.0}};
    cfg.alpha_c = VectorXd::Constant(1, -1.0);
    cfg.beta_c = VectorXd::Constant(1, 2.0);
    const auto d = simulate_dataset(cfg, 3);
    for (Eigen::Index i = 0; i < d.m; ++i)
        for (Eigen::Index j = 0; j < d.n; ++j) {
            const double c = d.c(i * d.n + j, 0);
            EXPECT_EQ(d.t(i, j), 18.0 - c);
            EXPECT_EQ(d.y(i, j) - (3.0 + 0.7 * d.t(i, j) + 2.0 * c), 0.0);
        }
}

TEST(Simulate, MomentsOfExposure) {
    ScenarioConfig cfg;
    cfg.m = 100'000;
    cfg.n = 10;  // 10^6 units
    const auto d = simulate_dataset(cfg, 0);
    const VectorXd t = d.stacked_t();
    const double mean = t.mean();
    const double var = (t.array() - mean).square().sum() / static_cast<double>(t.size() - 1);
    // Cluster-level terms make units within a cluster dependent, so the
    // standard error of the mean is driven by the between-cluster variance.
    const double between = cfg.sigma_a2 + 1.0 + 0.36;
    EXPECT_LT(std::abs(mean - 8.2), 5.0 * std::sqrt(between / cfg.m + 3.81 / t.size()));
    EXPECT_LT(std::abs(var / 3.81 - 1.0), 0.01);
}

TEST(Simulate, LatentComponentMoments) {
    ScenarioConfig cfg;
    cfg.m = 1000;
    cfg.n = 1000;
    const auto d = simulate_dataset(cfg, 1);
    const VectorXd w = d.w_latent.col(0);
    EXPECT_LT(std::abs(w.mean() - 1.0), 5.0 / std::sqrt(static_cast<double>(w.size())));
    const VectorXd c2 = d.c.col(0);
    EXPECT_LT(std::abs(c2.mean()), 5.0 / std::sqrt(static_cast<double>(c2.size())));
    EXPECT_LT(std::abs(d.b_latent.col(0).mean() - 1.0), 5.0 / std::sqrt(1000.0));
    const VectorXd c3 = stacked_cluster_means(d.c.col(1), d.m, d.n).col(0);
    EXPECT_LT(std::abs(c3.mean() - 11.0), 5.0 / std::sqrt(1000.0));
}

TEST(Simulate, BetweenCovariateConstantWithinCluster) {
    const auto d = simulate_dataset(ScenarioConfig{}, 5);
    for (Eigen::Index i = 0; i < d.m; ++i) {
        const auto block = d.c.col(1).segment(i * d.n, d.n);
        EXPECT_EQ(block.maxCoeff(), block.minCoeff());
    }
}

TEST(Simulate, ReproducibleAcrossThreadCounts) {
    testgen::Gen g(41);
    for (int trial = 0; trial < 5; ++trial) {
        const auto cfg = g.scenario();
        std::vector<ClusteredDataset> serial(8), threaded(8);
        parallel_for(8, 1, [&](std::size_t r) { serial[r] = simulate_dataset(cfg, r); });
        parallel_for(8, 4, [&](std::size_t r) { threaded[r] = simulate_dataset(cfg, r); });
        for (std::size_t r = 0; r < 8; ++r) {
            EXPECT_EQ(serial[r].y, threaded[r].y);
            EXPECT_EQ(serial[r].t, threaded[r].t);
            EXPECT_EQ(serial[r].w_latent, threaded[r].w_latent);
        }
        EXPECT_NE(serial[0].y, serial[1].y);
    }
}

TEST(Simulate, ModeControlsLatents) {
    ScenarioConfig cfg;
    cfg.m = 3;
    cfg.n = 2;
    cfg.confounder_mode = ConfounderMode::W_only;
    auto d = simulate_dataset(cfg, 0);
    EXPECT_TRUE(d.has_w());
    EXPECT_FALSE(d.has_b());
    cfg.confounder_mode = ConfounderMode::B_only;
    d = simulate_dataset(cfg, 0);
    EXPECT_FALSE(d.has_w());
    EXPECT_EQ(d.b_latent.rows(), 3);
}

TEST(Simulate, RejectsBadCovariance) {
    ScenarioConfig cfg;
    cfg.V_w = MatrixXd::Constant(1, 1, -1.0);
    EXPECT_THROW(simulate_dataset(cfg, 0), InvalidCovariance);
    cfg.V_w = MatrixXd::Identity(2, 2);
    EXPECT_THROW(simulate_dataset(cfg, 0), InvalidConfig);
}

TEST(Simulate, SingularCovarianceAccepted) {
    ScenarioConfig cfg;
    cfg.m = 20;
    cfg.n = 4;
    cfg.alpha_w = cfg.beta_w = VectorXd::Constant(2, 0.3);
    cfg.mean_w = VectorXd::Zero(2);
    cfg.V_w = MatrixXd::Ones(2, 2);
    const auto d = simulate_dataset(cfg, 0);
    EXPECT_LT((d.w_latent.col(0) - d.w_latent.col(1)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Grid, ClusterSizeAxis) {
    const auto g = scenario_grid(ScenarioConfig{}, "n", {1, 5, 20});
    ASSERT_EQ(g.configs.size(), 3u);
    EXPECT_EQ(g.configs[0].n, 1);
    EXPECT_EQ(g.configs[1].n, 5);
    EXPECT_EQ(g.configs[2].n, 20);
    EXPECT_NE(g.configs[0].seed, g.configs[1].seed);
}

TEST(Grid, ZeroEffectDeactivatesPathway) {
    const auto g = scenario_grid(ScenarioConfig{}, "beta_1w", {-1, 0, 1});
    EXPECT_EQ(g.configs[1].beta_w(0), 0.0);
    EXPECT_EQ(g.configs[0].beta_w(0), -1.0);
    EXPECT_EQ(g.configs[1].alpha_w(0), 0.6);
}

TEST(Grid, ExposureEffectAxisMovesFeBias) {
    ScenarioConfig base;
    base.confounder_mode = ConfounderMode::W_only;
    const auto g = scenario_grid(base, "alpha_1w", {0.0, 0.6});
    EXPECT_EQ(bias_fe(g.configs[0], Scenario::W_only, Regime::m_infty_fixed_n), 0.0);
    EXPECT_NEAR(bias_fe(g.configs[1], Scenario::W_only, Regime::m_infty_fixed_n), 0.36 / 1.36, 1e-12);
}

TEST(Grid, AxisNames) {
    ScenarioConfig cfg;
    set_axis_value(cfg, "alpha_1c", 17.0);
    set_axis_value(cfg, "alpha_2c", -2.0);
    set_axis_value(cfg, "beta_3c", 4.0);
    EXPECT_EQ(cfg.intercept_t, 17.0);
    EXPECT_EQ(cfg.alpha_c(0), -2.0);
    EXPECT_EQ(cfg.beta_c(1), 4.0);
    EXPECT_THROW(scenario_grid(cfg, "gamma", {1}), UnknownAxis);
    EXPECT_THROW(set_axis_value(cfg, "alpha_2w", 1.0), UnknownAxis);
    EXPECT_THROW(set_axis_value(cfg, "n", 2.5), InvalidConfig);
    EXPECT_TRUE(is_known_axis("sigma_a2"));
    EXPECT_FALSE(is_known_axis("alpha_0w"));
}

TEST(DatasetCsv, LatentsOnlyOnRequest) {
    ScenarioConfig cfg;
    cfg.m = 2;
    cfg.n = 2;
    const auto d = simulate_dataset(cfg, 0);
    std::ostringstream plain, full;
    write_dataset_csv(plain, d, false);
    write_dataset_csv(full, d, true);
    EXPECT_EQ(plain.str().substr(0, plain.str().find('\n')), "cluster,unit,y,t,c_1,c_2");
    EXPECT_EQ(full.str().substr(0, full.str().find('\n')), "cluster,unit,y,t,c_1,c_2,w_1,b_1");
    const std::string text = full.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}
