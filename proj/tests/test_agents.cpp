#include <gtest/gtest.h>

#include "hierts/agents.hpp"
#include "hierts/oracle.hpp"
#include "hierts/verify.hpp"

using namespace hierts;

namespace {

const Eigen::VectorXd kNoContext;

}  // namespace

TEST(Agents, KindNames) {
    EXPECT_EQ(parse_agent_kind("HierTS"), AgentKind::HierTS);
    EXPECT_EQ(parse_agent_kind("FlatTS"), AgentKind::FlatTS);
    EXPECT_EQ(parse_agent_kind("TS"), AgentKind::TS);
    EXPECT_THROW((void)parse_agent_kind("ucb"), InputError);
    for (auto k : {AgentKind::HierTS, AgentKind::FlatTS, AgentKind::TS}) EXPECT_EQ(parse_agent_kind(to_string(k)), k);
}

TEST(Agents, ArgmaxAndTies) {
    EXPECT_EQ(argmax_lowest({0.1, 0.9}), 1u);
    EXPECT_EQ(argmax_lowest({0.5, 0.5}), 0u);
    EXPECT_EQ(argmax_lowest({-1.0, 2.0, 2.0, 1.0}), 1u);
}

TEST(Agents, TsConjugateUpdate) {
    const auto tree = flat_tree(2);
    ScalarTS ts(tree, ScalarPrior{0.0, {0.5, 0.5, 0.5}, 1.0}, 1);
    ts.update(NodeId(2), kNoContext, 2.0);
    // Prior N(0, 1) on the arm (0.5 + 0.5), one observation y = 2 with sigma^2 = 1.
    EXPECT_DOUBLE_EQ(ts.arm(NodeId(2)).mean, 1.0);
    EXPECT_DOUBLE_EQ(ts.arm(NodeId(2)).variance, 0.5);
    EXPECT_DOUBLE_EQ(ts.arm(NodeId(3)).variance, 1.0);
}

TEST(Agents, FlatTsLeafVariance) {
    // Three-level source tree: the flat leaves get sigma_bar^2 - sigma0_root^2.
    const auto tree = Hierarchy::balanced(2, 2);
    const auto prior = doubling_prior(tree);
    const auto flat = flat_prior(tree, prior);
    ASSERT_EQ(flat.node_variance.size(), 5u);
    EXPECT_DOUBLE_EQ(flat.node_variance[0], 4.0);
    for (std::size_t k = 1; k < 5; ++k) EXPECT_DOUBLE_EQ(flat.node_variance[k], 7.0 - 4.0);
    const auto ft = flat_tree(tree.num_actions());
    for (NodeId a : ft.actions()) EXPECT_DOUBLE_EQ(marginal_prior_variance(ft, flat, a), 7.0);
}

TEST(Agents, FlatTsMapsActionsBack) {
    const auto tree = Hierarchy::from_parents({{2, 1}, {3, 1}, {4, 3}, {5, 3}});
    auto agent = make_agent(AgentKind::FlatTS, tree, constant_prior(tree, 1.0), 3);
    for (int t = 0; t < 50; ++t) {
        const NodeId a = agent->act(kNoContext);
        EXPECT_TRUE(tree.is_leaf(a));
        agent->update(a, kNoContext, 0.0);
    }
    EXPECT_THROW(agent->update(NodeId(3), kNoContext, 0.0), InputError);
    EXPECT_EQ(agent->kind(), AgentKind::FlatTS);
}

TEST(Agents, PriorSamplesReproduceGenerativeProcess) {
    const auto tree = Hierarchy::balanced(2, 2);
    const auto prior = doubling_prior(tree, 0.7);
    ScalarHierTS agent(tree, prior, 5);
    constexpr int kDraws = 100000;
    std::vector<double> sum(tree.size(), 0.0), sq(tree.size(), 0.0);
    for (int s = 0; s < kDraws; ++s) {
        const auto theta = agent.sample();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            sum[i] += theta[i];
            sq[i] += theta[i] * theta[i];
        }
    }
    for (NodeId a : tree.actions()) {
        const double var = marginal_prior_variance(tree, prior, a);
        const double m = sum[a.index()] / kDraws;
        EXPECT_NEAR(m, 0.7, 3 * std::sqrt(var / kDraws));
        EXPECT_NEAR(sq[a.index()] / kDraws - m * m, var, 4 * var * std::sqrt(2.0 / kDraws));
    }
    EXPECT_EQ(agent.sampling_operations(), static_cast<std::uint64_t>(kDraws) * tree.size());
}

TEST(Agents, DegenerateVariancesCollapseToRoot) {
    const auto tree = Hierarchy::balanced(3, 2);
    ScalarPrior prior = constant_prior(tree, 1e-12);
    prior.node_variance[0] = 1.0;
    ScalarHierTS agent(tree, prior, 2);
    for (int s = 0; s < 100; ++s) {
        const auto theta = agent.sample();
        for (NodeId a : tree.actions()) EXPECT_NEAR(theta[a.index()], theta[0], 1e-5);
    }
}

TEST(Agents, PosteriorSampleMomentsTwoLeaf) {
    const auto tree = Hierarchy::balanced(2, 1);
    ScalarHierTS agent(tree, constant_prior(tree, 1.0), 9);
    agent.update(NodeId(2), kNoContext, 2.0);
    constexpr int kDraws = 100000;
    double s = 0, q = 0;
    for (int k = 0; k < kDraws; ++k) {
        const double v = agent.sample()[1];
        s += v;
        q += v * v;
    }
    const double m = s / kDraws;
    EXPECT_NEAR(m, 4.0 / 3.0, 3 * std::sqrt((2.0 / 3.0) / kDraws));
    EXPECT_NEAR(q / kDraws - m * m, 2.0 / 3.0, 3 * (2.0 / 3.0) * std::sqrt(2.0 / kDraws));
}

TEST(Agents, SameSeedSameActions) {
    Rng rng(1);
    const auto tree = verify::random_tree(rng, 4, 32);
    const auto prior = verify::random_scalar_prior(tree, rng);
    for (auto kind : {AgentKind::HierTS, AgentKind::FlatTS, AgentKind::TS}) {
        auto a = make_agent(kind, tree, prior, 77);
        auto b = make_agent(kind, tree, prior, 77);
        Rng env(3);
        for (int t = 0; t < 200; ++t) {
            const NodeId x = a->act(kNoContext);
            ASSERT_EQ(x, b->act(kNoContext));
            const double y = env.normal();
            a->update(x, kNoContext, y);
            b->update(x, kNoContext, y);
        }
    }
}

TEST(Agents, InitialMarginalsAgreeAcrossAgents) {
    const auto tree = Hierarchy::from_parents({{2, 1}, {3, 1}, {4, 2}, {5, 2}, {6, 2}, {7, 3}, {8, 3}});
    const auto prior = doubling_prior(tree, -0.4);
    ScalarHierTS hier(tree, prior, 1);
    ScalarTS ts(tree, prior, 1);
    const auto ft = flat_tree(tree.num_actions());
    ScalarHierTS flat(ft, flat_prior(tree, prior), 1, AgentKind::FlatTS);
    for (std::size_t k = 0; k < tree.num_actions(); ++k) {
        const NodeId a = tree.actions()[k];
        const auto h = hier.posterior().marginal_action_moments(a);
        const auto f = flat.posterior().marginal_action_moments(ft.actions()[k]);
        const auto t = ts.arm(a);
        EXPECT_DOUBLE_EQ(h.mean, -0.4);
        EXPECT_DOUBLE_EQ(f.mean, -0.4);
        EXPECT_DOUBLE_EQ(t.mean, -0.4);
        EXPECT_NEAR(h.variance, t.variance, 1e-14);
        EXPECT_NEAR(f.variance, t.variance, 1e-14);
    }
}

TEST(Agents, HierarchicalSampleIsExactForAnyHistory) {
    Rng rng(20);
    for (int k = 0; k < 10; ++k) {
        const auto tree = verify::random_tree(rng, 4, 32);
        const auto prior = verify::random_scalar_prior(tree, rng);
        ScalarHierTS agent(tree, prior, 1);
        std::vector<oracle::Observation> obs;
        for (int t = 0; t < 30; ++t) {
            const NodeId a = agent.act(kNoContext);
            const double y = rng.normal(0.0, 2.0);
            agent.update(a, kNoContext, y);
            obs.push_back(oracle::scalar_observation(a, y));
        }
        const auto dense = oracle::action_marginals_scalar(oracle::condition(oracle::joint_prior(tree, prior), obs, prior.noise_variance()), tree);
        for (std::size_t i = 0; i < tree.num_actions(); ++i) {
            const auto m = agent.posterior().marginal_action_moments(tree.actions()[i]);
            EXPECT_LE(verify::rel_dev(m.mean, dense[i].mean), 1e-8);
            EXPECT_LE(verify::rel_dev(m.variance, dense[i].variance), 1e-8);
        }
    }
}

TEST(LinearAgents, ContextSelectsAction) {
    const auto tree = Hierarchy::balanced(2, 1);
    const auto prior = isotropic_prior(constant_prior(tree, 1.0, 0.0, 0.1), 2);
    LinearTS ts(tree, prior, 4);
    const Eigen::Vector2d e1(1.0, 0.0), e2(0.0, 1.0);
    // Teach arm 2 that theta = (1, 0) and arm 3 that theta = (0, 1).
    for (int t = 0; t < 200; ++t) {
        ts.update(NodeId(2), e1, 1.0);
        ts.update(NodeId(2), e2, 0.0);
        ts.update(NodeId(3), e1, 0.0);
        ts.update(NodeId(3), e2, 1.0);
    }
    EXPECT_EQ(ts.act(e2), NodeId(3));
    EXPECT_EQ(ts.act(e1), NodeId(2));
    EXPECT_THROW(ts.update(NodeId(2), Eigen::VectorXd::Ones(3), 0.0), InputError);
}

TEST(LinearAgents, OneDimensionalHierTsMatchesScalar) {
    const auto tree = Hierarchy::balanced(3, 2);
    const auto prior = doubling_prior(tree, 0.2, 0.9);
    LinearHierTS lin(tree, to_linear(prior), 1);
    ScalarHierTS mab(tree, prior, 1);
    Rng env(2);
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
    for (int t = 0; t < 40; ++t) {
        const NodeId a = tree.actions()[env.uniform_index(tree.num_actions())];
        const double y = env.normal();
        lin.update(a, one, y);
        mab.update(a, kNoContext, y);
    }
    for (NodeId a : tree.actions()) {
        const auto l = lin.posterior().marginal_action_moments(a);
        const auto m = mab.posterior().marginal_action_moments(a);
        EXPECT_NEAR(l.mean[0], m.mean, 1e-12);
        EXPECT_NEAR(l.covariance(0, 0), m.variance, 1e-12);
    }
}

TEST(LinearAgents, TsPriorMatchesMarginalPrior) {
    Rng rng(6);
    const auto tree = verify::random_tree(rng, 3, 16);
    const auto prior = verify::random_linear_prior(tree, 3, rng);
    LinearTS ts(tree, prior, 1);
    LinearHierTS hier(tree, prior, 1);
    for (NodeId a : tree.actions()) {
        const auto t = ts.arm(a);
        const auto h = hier.posterior().marginal_action_moments(a);
        EXPECT_LE(verify::rel_dev(t.covariance, marginal_prior_covariance(tree, prior, a)), 1e-10);
        EXPECT_LE(verify::rel_dev(h.covariance, t.covariance), 1e-10);
        EXPECT_LE(verify::rel_dev(Eigen::MatrixXd(h.mean), Eigen::MatrixXd(t.mean)), 1e-10);
    }
}

TEST(LinearAgents, SamplingCountsDrawsPerNode) {
    const auto tree = Hierarchy::balanced(2, 3);
    LinearHierTS agent(tree, isotropic_prior(constant_prior(tree, 1.0), 4), 1);
    (void)agent.sample();
    EXPECT_EQ(agent.sampling_operations(), 4u * tree.size());
}
