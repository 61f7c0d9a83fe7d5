#pragma once

// Dense joint-Gaussian reference model over the stacked parameters of every
// node. Used only to certify the recursive posterior and the analytic
// identities built on it; O(|V|^2 d^2) per observation.

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hierts/error.hpp"
#include "hierts/hierarchy.hpp"
#include "hierts/posterior_mab.hpp"
#include "hierts/posterior_linear.hpp"
#include "hierts/prior.hpp"
#include "hierts/rng.hpp"

namespace hierts::oracle {

struct JointGaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    Eigen::Index block = 1;  ///< parameter dimension d of every node

    [[nodiscard]] Eigen::Index offset(NodeId id) const { return static_cast<Eigen::Index>(id.index()) * block; }
};

struct Observation {
    NodeId action;
    Eigen::VectorXd context;  ///< unit vector [1] in the K-armed model
    double reward = 0.0;
};

inline Observation scalar_observation(NodeId action, double reward) {
    return {action, Eigen::VectorXd::Ones(1), reward};
}

/// Joint prior of the generative process: every node has mean mu_1, and the
/// covariance between nodes i and j is the sum of conditional covariances on
/// the root path of their lowest common ancestor.
inline JointGaussian joint_prior(const Hierarchy& tree, const LinearPrior& prior) {
    prior.validate(tree);
    const auto d = prior.dim();
    const auto n = static_cast<Eigen::Index>(tree.size());
    JointGaussian j;
    j.block = d;
    j.mean.resize(n * d);
    j.covariance = Eigen::MatrixXd::Zero(n * d, n * d);

    // Cumulative path covariance of each node, root first.
    std::vector<Eigen::MatrixXd> path_cov(tree.size());
    for (NodeId id : tree.topological_order()) {
        path_cov[id.index()] =
            tree.is_root(id) ? prior.covariance(id) : Eigen::MatrixXd(path_cov[tree.parent(id).index()] + prior.covariance(id));
    }
    for (std::size_t a = 0; a < tree.size(); ++a) {
        const NodeId ia = NodeId::from_index(a);
        j.mean.segment(j.offset(ia), d) = prior.hyper_mean;
        for (std::size_t b = a; b < tree.size(); ++b) {
            const NodeId ib = NodeId::from_index(b);
            const auto& c = path_cov[tree.lowest_common_ancestor(ia, ib).index()];
            j.covariance.block(j.offset(ia), j.offset(ib), d, d) = c;
            j.covariance.block(j.offset(ib), j.offset(ia), d, d) = c.transpose();
        }
    }
    return j;
}

inline JointGaussian joint_prior(const Hierarchy& tree, const ScalarPrior& prior) {
    return joint_prior(tree, to_linear(prior));
}

/// Sequential rank-1 Gaussian conditioning on noisy linear observations of leaf blocks.
inline JointGaussian condition(JointGaussian joint, const std::vector<Observation>& observations,
                               double noise_variance) {
    if (!(noise_variance > 0.0)) throw InputError("noise variance must be > 0");
    const auto d = joint.block;
    for (const auto& obs : observations) {
        if (obs.context.size() != d) throw InputError("observation context has wrong dimension");
        const auto off = joint.offset(obs.action);
        if (off + d > joint.mean.size()) throw InputError("observation refers to an unknown node");
        const Eigen::VectorXd cov_h = joint.covariance.middleCols(off, d) * obs.context;
        const double innovation = obs.context.dot(cov_h.segment(off, d)) + noise_variance;
        if (!(innovation > 0.0)) throw NumericalError("singular innovation variance");
        const double residual = obs.reward - obs.context.dot(joint.mean.segment(off, d));
        joint.mean += cov_h * (residual / innovation);
        joint.covariance.noalias() -= (cov_h / innovation) * cov_h.transpose();
        symmetrize(joint.covariance);
    }
    return joint;
}

/// Conditions on all observations at once: S = H C H^T + sigma^2 I.
inline JointGaussian condition_batch(JointGaussian joint, const std::vector<Observation>& observations,
                                     double noise_variance) {
    if (observations.empty()) return joint;
    const auto d = joint.block;
    const auto m = static_cast<Eigen::Index>(observations.size());
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m, joint.mean.size());
    Eigen::VectorXd y(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        const auto& obs = observations[static_cast<std::size_t>(r)];
        h.block(r, joint.offset(obs.action), 1, d) = obs.context.transpose();
        y[r] = obs.reward;
    }
    const Eigen::MatrixXd ch = joint.covariance * h.transpose();
    Eigen::MatrixXd s = h * ch;
    s.diagonal().array() += noise_variance;
    const auto llt = spd_factor(s, "batch conditioning");
    joint.mean += ch * llt.solve(y - h * joint.mean);
    joint.covariance -= ch * llt.solve(ch.transpose());
    symmetrize(joint.covariance);
    return joint;
}

inline MomentsVec block_marginal(const JointGaussian& joint, NodeId id) {
    const auto off = joint.offset(id);
    return {joint.mean.segment(off, joint.block), joint.covariance.block(off, off, joint.block, joint.block)};
}

/// Per-action marginals, in the order of Hierarchy::actions().
inline std::vector<MomentsVec> action_marginals(const JointGaussian& joint, const Hierarchy& tree) {
    std::vector<MomentsVec> out;
    for (NodeId a : tree.actions()) out.push_back(block_marginal(joint, a));
    return out;
}

inline std::vector<Moments> action_marginals_scalar(const JointGaussian& joint, const Hierarchy& tree) {
    if (joint.block != 1) throw InputError("scalar marginals need a d = 1 joint");
    std::vector<Moments> out;
    for (NodeId a : tree.actions()) {
        const auto off = joint.offset(a);
        out.push_back({joint.mean[off], joint.covariance(off, off)});
    }
    return out;
}

/// Lower Cholesky factor computed column by column, counting multiply-adds.
struct CountedCholesky {
    Eigen::MatrixXd lower;
    std::uint64_t operations = 0;
};

inline CountedCholesky counted_cholesky(const Eigen::MatrixXd& a) {
    const auto n = a.rows();
    CountedCholesky out{Eigen::MatrixXd::Zero(n, n), 0};
    auto& l = out.lower;
    for (Eigen::Index j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (Eigen::Index k = 0; k < j; ++k) {
            diag -= l(j, k) * l(j, k);
            ++out.operations;
        }
        if (!(diag > 0.0)) throw NumericalError("dense sampler: covariance is not positive definite");
        l(j, j) = std::sqrt(diag);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double v = a(i, j);
            for (Eigen::Index k = 0; k < j; ++k) {
                v -= l(i, k) * l(j, k);
                ++out.operations;
            }
            l(i, j) = v / l(j, j);
            ++out.operations;
        }
    }
    return out;
}

/// Draws the stacked action parameters from the dense conditioned joint.
struct DenseSample {
    Eigen::VectorXd actions;  ///< K*d values, action-major
    std::uint64_t factorization_operations = 0;
    std::uint64_t sampling_operations = 0;
};

inline DenseSample dense_action_sample(const JointGaussian& joint, const Hierarchy& tree, Rng& rng) {
    const auto d = joint.block;
    const auto k = static_cast<Eigen::Index>(tree.num_actions());
    Eigen::VectorXd mean(k * d);
    Eigen::MatrixXd cov(k * d, k * d);
    for (Eigen::Index a = 0; a < k; ++a) {
        const auto oa = joint.offset(tree.actions()[static_cast<std::size_t>(a)]);
        mean.segment(a * d, d) = joint.mean.segment(oa, d);
        for (Eigen::Index b = 0; b < k; ++b) {
            const auto ob = joint.offset(tree.actions()[static_cast<std::size_t>(b)]);
            cov.block(a * d, b * d, d, d) = joint.covariance.block(oa, ob, d, d);
        }
    }
    const auto chol = counted_cholesky(cov);
    const Eigen::VectorXd z = rng.normal_vector(k * d);
    DenseSample s;
    s.actions = mean + chol.lower.triangularView<Eigen::Lower>() * z;
    s.factorization_operations = chol.operations;
    s.sampling_operations = static_cast<std::uint64_t>(k * d) * static_cast<std::uint64_t>(k * d + 1) / 2;
    return s;
}

}  // namespace hierts::oracle
