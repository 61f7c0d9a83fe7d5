#include <gtest/gtest.h>

#include <array>

#include "hierts/oracle.hpp"
#include "hierts/posterior_linear.hpp"
#include "hierts/posterior_mab.hpp"
#include "hierts/rng.hpp"
#include "hierts/verify.hpp"

using namespace hierts;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }

double min_eigenvalue(const MatrixXd& m) {
    return Eigen::SelfAdjointEigenSolver<MatrixXd>(m).eigenvalues().minCoeff();
}

}  // namespace

TEST(LinearLeafMessage, ZeroGramIsZeroMessage) {
    const auto m = leaf_message_linear(LeafGram::zero(3), MatrixXd::Identity(3, 3));
    EXPECT_TRUE(m.is_zero());
}

TEST(LinearLeafMessage, IdentityExample) {
    LeafGram g{MatrixXd::Identity(2, 2), VectorXd::Zero(2), 2};
    g.xy_sum << 1.0, 0.0;
    const auto m = leaf_message_linear(g, MatrixXd::Identity(2, 2));
    EXPECT_LE((m.precision - 0.5 * MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(m.weighted_mean[0], 0.5, 1e-15);
    EXPECT_NEAR(m.weighted_mean[1], 0.0, 1e-15);
}

TEST(LinearLeafMessage, ReducesToScalarRecursion) {
    Rng rng(4);
    for (int k = 0; k < 100; ++k) {
        const double s0 = rng.uniform(0.1, 4.0);
        const double s2 = rng.uniform(0.25, 4.0);
        const long n = 1 + static_cast<long>(rng.uniform_index(30));
        const double sum = rng.normal(0.0, 5.0);
        const LeafGram g{scalar(static_cast<double>(n) / s2), VectorXd::Constant(1, sum / s2), n};
        const auto lin = leaf_message_linear(g, scalar(s0));
        const auto mab = leaf_message({n, sum}, s0, s2);
        EXPECT_NEAR(lin.precision(0, 0), mab.precision, 1e-12);
        EXPECT_NEAR(lin.weighted_mean[0], mab.weighted_mean, 1e-12);
    }
}

TEST(LinearLeafMessage, WoodburyMatchesDirectFormWhenInvertible) {
    Rng rng(9);
    for (int k = 0; k < 100; ++k) {
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.uniform_index(4));
        const MatrixXd sigma0 = verify::random_spd(d, rng);
        const MatrixXd gram = verify::random_spd(d, rng);
        const LeafGram g{gram, rng.normal_vector(d), 5};
        const auto m = leaf_message_linear(g, sigma0);
        // Variance form: (Sigma0 + G^-1)^-1, mean G^-1 xy.
        const MatrixXd direct = (sigma0 + gram.inverse()).inverse();
        const VectorXd direct_wmean = direct * gram.inverse() * g.xy_sum;
        EXPECT_LE(verify::rel_dev(m.precision, direct), 1e-9);
        EXPECT_LE(verify::rel_dev(MatrixXd(m.weighted_mean), MatrixXd(direct_wmean)), 1e-9);
    }
}

TEST(LinearLeafMessage, SingularGramIsFine) {
    // One observation in d = 3 gives a rank-one Gram, which the variance form cannot invert.
    VectorXd x(3);
    x << 1.0, -2.0, 0.5;
    const LeafGram g{x * x.transpose(), 0.7 * x, 1};
    const auto m = leaf_message_linear(g, MatrixXd::Identity(3, 3));
    EXPECT_GE(min_eigenvalue(m.precision), -1e-10);
    // Below the prior precision in the PSD order.
    EXPECT_GT(min_eigenvalue(MatrixXd::Identity(3, 3) - m.precision), 0.0);
}

TEST(LinearLeafMessage, IllConditionedSystemIsRejected) {
    MatrixXd sigma0 = MatrixXd::Identity(2, 2);
    sigma0(1, 1) = 1e-14;
    LeafGram g{MatrixXd::Identity(2, 2), VectorXd::Zero(2), 1};
    EXPECT_THROW((void)leaf_message_linear(g, sigma0), NumericalError);
}

TEST(LinearInternalMessage, ZeroChildren) {
    const std::array<NodeMessageVec, 2> kids{NodeMessageVec::zero(2), NodeMessageVec::zero(2)};
    EXPECT_TRUE(internal_message_linear(kids, MatrixXd::Identity(2, 2)).is_zero());
}

TEST(LinearInternalMessage, TwoHalfPrecisionChildren) {
    const NodeMessageVec half{0.5 * MatrixXd::Identity(2, 2), VectorXd::Zero(2)};
    const std::array<NodeMessageVec, 2> kids{half, half};
    const auto m = internal_message_linear(kids, MatrixXd::Identity(2, 2));
    EXPECT_LE((m.precision - 0.5 * MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LinearInternalMessage, ReducesToScalarRecursion) {
    const std::array<NodeMessageVec, 1> kids{NodeMessageVec{scalar(0.5), VectorXd::Constant(1, 1.0)}};
    const auto m = internal_message_linear(kids, scalar(1.0));
    EXPECT_NEAR(m.precision(0, 0), 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(m.weighted_mean[0], 2.0 / 3.0, 1e-12);
    EXPECT_THROW((void)internal_message_linear(std::span<const NodeMessageVec>{}, scalar(1.0)), InputError);
}

TEST(LinearNodePosterior, PriorWhenNoData) {
    const MatrixXd s0 = (MatrixXd(2, 2) << 2.0, 0.3, 0.3, 1.0).finished();
    const VectorXd parent = (VectorXd(2) << 1.0, -1.0).finished();
    const std::array<NodeMessageVec, 1> kids{NodeMessageVec::zero(2)};
    const auto [mean, cov] = node_posterior_linear(parent, kids, s0);
    EXPECT_LE((mean - parent).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((cov - s0).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LinearNodePosterior, ReducesToScalar) {
    const std::array<NodeMessageVec, 1> kids{NodeMessageVec{scalar(0.5), VectorXd::Constant(1, 1.0)}};
    const auto [mean, cov] = node_posterior_linear(VectorXd::Zero(1), kids, scalar(1.0));
    EXPECT_NEAR(mean[0], 2.0 / 3.0, 1e-14);
    EXPECT_NEAR(cov(0, 0), 2.0 / 3.0, 1e-14);
}

TEST(LinearPosterior, UpdateMatchesRebuildAndIsLocal) {
    const auto tree = Hierarchy::balanced(3, 2);
    Rng rng(6);
    LinearPosterior post(tree, verify::random_linear_prior(tree, 3, rng));
    for (int t = 0; t < 25; ++t) {
        post.update(tree.actions()[rng.uniform_index(tree.num_actions())], rng.normal_vector(3), rng.normal());
    }
    std::vector<MatrixXd> before;
    for (std::size_t i = 0; i < tree.size(); ++i) before.push_back(post.message(NodeId::from_index(i)).precision);
    const NodeId a = tree.actions()[4];
    post.update(a, rng.normal_vector(3), 0.3);
    const auto path = tree.path_to_root(a);
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const NodeId id = NodeId::from_index(i);
        if (std::find(path.begin(), path.end(), id) == path.end()) {
            EXPECT_TRUE((post.message(id).precision.array() == before[i].array()).all());
        }
    }
    LinearPosterior fresh = post;
    fresh.rebuild();
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const NodeId id = NodeId::from_index(i);
        EXPECT_LE((post.message(id).precision - fresh.message(id).precision).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((post.message(id).weighted_mean - fresh.message(id).weighted_mean).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(LinearPosterior, ZeroContextOnlyCounts) {
    const auto tree = Hierarchy::balanced(2, 1);
    LinearPosterior post(tree, isotropic_prior(constant_prior(tree, 1.0), 2));
    post.update(NodeId(2), VectorXd::Zero(2), 5.0);
    EXPECT_EQ(post.leaf_gram(NodeId(2)).count, 1);
    EXPECT_TRUE(post.leaf_gram(NodeId(2)).gram.isZero(0.0));
    EXPECT_TRUE(post.leaf_gram(NodeId(2)).xy_sum.isZero(0.0));
}

TEST(LinearPosterior, RejectsBadInput) {
    const auto tree = Hierarchy::balanced(2, 2);
    LinearPosterior post(tree, isotropic_prior(constant_prior(tree, 1.0), 2));
    EXPECT_THROW(post.update(NodeId(2), VectorXd::Zero(2), 1.0), InputError);
    EXPECT_THROW(post.update(NodeId(4), VectorXd::Zero(3), 1.0), InputError);
    EXPECT_THROW((void)post.marginal_action_moments(kRoot), InputError);
}

TEST(LinearPosterior, OneDimensionalEvolutionMatchesScalar) {
    Rng rng(10);
    const auto tree = verify::random_tree(rng, 4, 32);
    const auto prior = verify::random_scalar_prior(tree, rng);
    MabPosterior mab(tree, prior);
    LinearPosterior lin(tree, to_linear(prior));
    for (int t = 0; t < 60; ++t) {
        const NodeId a = tree.actions()[rng.uniform_index(tree.num_actions())];
        const double y = rng.normal(0.0, 2.0);
        mab.update(a, y);
        lin.update(a, VectorXd::Ones(1), y);
        for (std::size_t i = 0; i < tree.size(); ++i) {
            const NodeId id = NodeId::from_index(i);
            EXPECT_NEAR(lin.message(id).precision(0, 0), mab.message(id).precision, 1e-12);
            EXPECT_NEAR(lin.message(id).weighted_mean[0], mab.message(id).weighted_mean, 1e-12);
        }
        for (NodeId leaf : tree.actions()) {
            const auto ml = lin.marginal_action_moments(leaf);
            const auto mm = mab.marginal_action_moments(leaf);
            EXPECT_NEAR(ml.mean[0], mm.mean, 1e-12 * std::max(1.0, std::abs(mm.mean)));
            EXPECT_NEAR(ml.covariance(0, 0), mm.variance, 1e-12 * std::max(1.0, mm.variance));
        }
    }
}

TEST(LinearPosterior, MarginalsMatchDenseOracle) {
    Rng rng(12);
    for (int k = 0; k < 15; ++k) {
        const auto tree = verify::random_tree(rng, 3, 16);
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.uniform_index(4));
        const auto prior = verify::random_linear_prior(tree, d, rng);
        LinearPosterior post(tree, prior);
        std::vector<oracle::Observation> obs;
        for (int t = 0; t < 40; ++t) {
            const NodeId a = tree.actions()[rng.uniform_index(tree.num_actions())];
            const VectorXd x = rng.normal_vector(d);
            const double y = rng.normal(0.0, 2.0);
            post.update(a, x, y);
            obs.push_back({a, x, y});
            for (NodeId id : tree.path_to_root(a)) {
                EXPECT_GE(min_eigenvalue(post.message(id).precision), -1e-10);
            }
        }
        const auto dense = oracle::action_marginals(oracle::condition(oracle::joint_prior(tree, prior), obs, prior.noise_variance()), tree);
        for (std::size_t i = 0; i < tree.num_actions(); ++i) {
            const auto m = post.marginal_action_moments(tree.actions()[i]);
            EXPECT_LE(verify::rel_dev(MatrixXd(m.mean), MatrixXd(dense[i].mean)), 1e-8);
            EXPECT_LE(verify::rel_dev(m.covariance, dense[i].covariance), 1e-8);
        }
    }
}
