#pragma once

// Gaussian hierarchy priors: a hyper-prior mean at the root, one conditional
// prior (co)variance per node, and the reward noise level.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hierts/error.hpp"
#include "hierts/hierarchy.hpp"

namespace hierts {

/// K-armed model: every node carries a scalar parameter.
struct ScalarPrior {
    double hyper_mean = 0.0;
    std::vector<double> node_variance;  ///< indexed by NodeId::index()
    double noise_std = 1.0;

    [[nodiscard]] double variance(NodeId id) const { return node_variance.at(id.index()); }
    [[nodiscard]] double noise_variance() const { return noise_std * noise_std; }

    void validate(const Hierarchy& tree) const {
        if (node_variance.size() != tree.size()) {
            throw InputError("prior has " + std::to_string(node_variance.size()) + " variances for a tree with " +
                             std::to_string(tree.size()) + " nodes");
        }
        for (std::size_t i = 0; i < node_variance.size(); ++i) {
            if (!(node_variance[i] > 0.0) || !std::isfinite(node_variance[i])) {
                throw InputError("conditional prior variance of node " + std::to_string(i + 1) + " must be > 0");
            }
        }
        if (!(noise_std > 0.0) || !std::isfinite(noise_std)) throw InputError("noise_std must be > 0");
        if (!std::isfinite(hyper_mean)) throw InputError("hyper_mean must be finite");
    }

    /// Largest conditional prior standard deviation over all nodes.
    [[nodiscard]] double max_node_std() const {
        double v = 0.0;
        for (double s : node_variance) v = std::max(v, s);
        return std::sqrt(v);
    }
};

/// Contextual linear model: every node carries a d-vector.
struct LinearPrior {
    Eigen::VectorXd hyper_mean;
    std::vector<Eigen::MatrixXd> node_covariance;  ///< indexed by NodeId::index()
    double noise_std = 1.0;

    [[nodiscard]] Eigen::Index dim() const { return hyper_mean.size(); }
    [[nodiscard]] const Eigen::MatrixXd& covariance(NodeId id) const { return node_covariance.at(id.index()); }
    [[nodiscard]] double noise_variance() const { return noise_std * noise_std; }

    void validate(const Hierarchy& tree) const {
        if (hyper_mean.size() < 1) throw InputError("hyper_mean must have dimension >= 1");
        if (node_covariance.size() != tree.size()) {
            throw InputError("prior has " + std::to_string(node_covariance.size()) + " covariances for a tree with " +
                             std::to_string(tree.size()) + " nodes");
        }
        for (std::size_t i = 0; i < node_covariance.size(); ++i) {
            const auto& m = node_covariance[i];
            const std::string who = "covariance of node " + std::to_string(i + 1);
            if (m.rows() != dim() || m.cols() != dim()) throw InputError(who + " has wrong shape");
            if (!m.allFinite()) throw InputError(who + " is not finite");
            if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
                throw InputError(who + " is not symmetric");
            }
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
            if (eig.eigenvalues().minCoeff() <= 1e-10) throw InputError(who + " is not positive definite");
        }
        if (!(noise_std > 0.0) || !std::isfinite(noise_std)) throw InputError("noise_std must be > 0");
    }
};

/// Embeds a scalar prior as the d = 1 linear model.
inline LinearPrior to_linear(const ScalarPrior& prior) {
    LinearPrior out;
    out.hyper_mean = Eigen::VectorXd::Constant(1, prior.hyper_mean);
    out.noise_std = prior.noise_std;
    for (double v : prior.node_variance) out.node_covariance.push_back(Eigen::MatrixXd::Constant(1, 1, v));
    return out;
}

/// Sum of conditional prior variances on the root-to-leaf path, i.e. the
/// marginal prior variance of an action's mean reward.
inline double marginal_prior_variance(const Hierarchy& tree, const ScalarPrior& prior, NodeId action) {
    if (!tree.contains(action)) throw InputError("unknown node id " + std::to_string(action.value));
    if (!tree.is_leaf(action)) throw InputError("node " + std::to_string(action.value) + " is not an action node");
    double total = 0.0;
    for (NodeId i : tree.path_to_root(action)) total += prior.variance(i);
    return total;
}

inline Eigen::MatrixXd marginal_prior_covariance(const Hierarchy& tree, const LinearPrior& prior, NodeId action) {
    if (!tree.contains(action)) throw InputError("unknown node id " + std::to_string(action.value));
    if (!tree.is_leaf(action)) throw InputError("node " + std::to_string(action.value) + " is not an action node");
    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(prior.dim(), prior.dim());
    for (NodeId i : tree.path_to_root(action)) total += prior.covariance(i);
    return total;
}

/// Constant conditional variance at every node.
inline ScalarPrior constant_prior(const Hierarchy& tree, double variance, double hyper_mean = 0.0,
                                  double noise_std = 1.0) {
    return ScalarPrior{hyper_mean, std::vector<double>(tree.size(), variance), noise_std};
}

/// Conditional variance doubling with node height: sigma0_i^2 = 2^{h_i}.
inline ScalarPrior doubling_prior(const Hierarchy& tree, double hyper_mean = 0.0, double noise_std = 1.0) {
    ScalarPrior p{hyper_mean, {}, noise_std};
    for (std::size_t i = 0; i < tree.size(); ++i) {
        p.node_variance.push_back(std::ldexp(1.0, tree.height(NodeId::from_index(i))));
    }
    return p;
}

/// Isotropic linear prior: Sigma_0i = sigma0_i^2 I_d for a scalar variance scheme.
inline LinearPrior isotropic_prior(const ScalarPrior& scalar, Eigen::Index dim) {
    LinearPrior out;
    out.hyper_mean = Eigen::VectorXd::Constant(dim, scalar.hyper_mean);
    out.noise_std = scalar.noise_std;
    for (double v : scalar.node_variance) out.node_covariance.push_back(v * Eigen::MatrixXd::Identity(dim, dim));
    return out;
}

}  // namespace hierts
