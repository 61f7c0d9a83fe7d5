#pragma once

// Exact posterior of the K-armed Gaussian hierarchy.
//
// Every node j sends its parent a Gaussian likelihood message
//     L~_j(theta) ∝ exp(-precision/2 * theta^2 + weighted_mean * theta)
// summarising the observations below j, with the node's own parameter
// integrated out. Messages are kept in precision form (precision,
// precision * mean) so that a node with no data below it sends the exact zero
// message instead of an undefined mean.
//
// The conditional posterior of node i given its parent value theta_p is
//     precision_i = 1/sigma0_i^2 + sum_j precision_j
//     mean_i      = (theta_p/sigma0_i^2 + sum_j weighted_mean_j) / precision_i
// where the sum runs over children (internal node) or over the node's own
// observations (leaf). Only nodes on the updated leaf's root path change after
// an observation.

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "hierts/error.hpp"
#include "hierts/hierarchy.hpp"
#include "hierts/prior.hpp"

namespace hierts {

struct LeafStats {
    long count = 0;
    double reward_sum = 0.0;
};

/// Gaussian likelihood factor in precision form.
struct NodeMessage {
    double precision = 0.0;
    double weighted_mean = 0.0;

    [[nodiscard]] bool is_zero() const { return precision == 0.0 && weighted_mean == 0.0; }

    NodeMessage& operator+=(const NodeMessage& o) {
        precision += o.precision;
        weighted_mean += o.weighted_mean;
        return *this;
    }
};

/// Conditional posterior N(slope * theta_p + intercept, variance).
struct PosteriorParams {
    double slope = 1.0;
    double intercept = 0.0;
    double variance = 1.0;

    [[nodiscard]] double mean(double parent_value) const { return slope * parent_value + intercept; }
    [[nodiscard]] double precision() const { return 1.0 / variance; }
};

/// Raw likelihood of a leaf's own observations (before integrating out the leaf).
inline NodeMessage observation_message(const LeafStats& stats, double noise_variance) {
    if (stats.count == 0) return {};
    return {static_cast<double>(stats.count) / noise_variance, stats.reward_sum / noise_variance};
}

/// Integrates a node's parameter out of (aggregated likelihood) x N(theta | theta_p, sigma0^2),
/// giving the message as a function of theta_p.
inline NodeMessage integrate_out(const NodeMessage& aggregated, double sigma0_sq) {
    if (aggregated.precision == 0.0) return {};
    const double prior_precision = 1.0 / sigma0_sq;
    const double denom = aggregated.precision + prior_precision;
    return {aggregated.precision * prior_precision / denom, prior_precision / denom * aggregated.weighted_mean};
}

inline NodeMessage leaf_message(const LeafStats& stats, double sigma0_sq, double noise_variance) {
    return integrate_out(observation_message(stats, noise_variance), sigma0_sq);
}

inline NodeMessage aggregate(std::span<const NodeMessage> messages) {
    NodeMessage total;
    for (const auto& m : messages) total += m;
    return total;
}

inline NodeMessage internal_message(std::span<const NodeMessage> child_messages, double sigma0_sq) {
    if (child_messages.empty()) throw InputError("internal_message needs at least one child message");
    return integrate_out(aggregate(child_messages), sigma0_sq);
}

/// Conditional posterior from the aggregated likelihood of a node's children
/// (or of a leaf's own observations).
inline PosteriorParams node_posterior(const NodeMessage& aggregated, double sigma0_sq) {
    const double prior_precision = 1.0 / sigma0_sq;
    const double variance = 1.0 / (prior_precision + aggregated.precision);
    return {variance * prior_precision, variance * aggregated.weighted_mean, variance};
}

inline PosteriorParams node_posterior(std::span<const NodeMessage> child_messages, double sigma0_sq) {
    return node_posterior(aggregate(child_messages), sigma0_sq);
}

/// Marginal posterior moments of a single node.
struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

/// Sufficient statistics plus cached messages for the K-armed hierarchy.
class MabPosterior {
public:
    MabPosterior(Hierarchy tree, ScalarPrior prior) : tree_(std::move(tree)), prior_(std::move(prior)) {
        prior_.validate(tree_);
        stats_.assign(tree_.size(), {});
        aggregated_.assign(tree_.size(), {});
        message_.assign(tree_.size(), {});
    }

    [[nodiscard]] const Hierarchy& tree() const { return tree_; }
    [[nodiscard]] const ScalarPrior& prior() const { return prior_; }

    [[nodiscard]] const LeafStats& leaf_stats(NodeId leaf) const {
        require_leaf(leaf);
        return stats_[leaf.index()];
    }

    /// Message node `id` sends to its parent. The root's entry is computed the
    /// same way but never consumed.
    [[nodiscard]] const NodeMessage& message(NodeId id) const { return message_.at(id.index()); }

    /// Sum of child messages (internal node) or raw observation likelihood (leaf).
    [[nodiscard]] const NodeMessage& aggregated(NodeId id) const { return aggregated_.at(id.index()); }

    [[nodiscard]] PosteriorParams posterior(NodeId id) const {
        return node_posterior(aggregated(id), prior_.variance(id));
    }

    [[nodiscard]] double posterior_precision(NodeId id) const {
        return 1.0 / prior_.variance(id) + aggregated(id).precision;
    }

    /// Adds one observation and refreshes the messages on the leaf's root path.
    void update(NodeId action, double reward) {
        require_leaf(action);
        auto& s = stats_[action.index()];
        s.count += 1;
        s.reward_sum += reward;
        refresh_path(action);
    }

    /// Replaces a leaf's statistics wholesale (batch ingestion).
    void set_leaf_stats(NodeId action, LeafStats stats) {
        require_leaf(action);
        if (stats.count < 0) throw InputError("negative observation count");
        if (stats.count == 0) stats.reward_sum = 0.0;
        stats_[action.index()] = stats;
        refresh_path(action);
    }

    /// Recomputes every cache bottom-up from the leaf statistics alone.
    void rebuild() {
        const auto& order = tree_.topological_order();
        for (auto it = order.rbegin(); it != order.rend(); ++it) recompute_node(*it);
    }

    /// Exact marginal posterior of any node, composing the affine conditional
    /// means and the variances down the root path.
    [[nodiscard]] Moments marginal(NodeId id) const {
        Moments m{prior_.hyper_mean, 0.0};
        for (NodeId node : tree_.path_to_root(id)) {
            const auto p = posterior(node);
            m.mean = p.mean(m.mean);
            m.variance = p.variance + p.slope * p.slope * m.variance;
        }
        return m;
    }

    [[nodiscard]] Moments marginal_action_moments(NodeId action) const {
        require_leaf(action);
        return marginal(action);
    }

    /// Test hook: shifts a cached message's precision and re-propagates above
    /// it, leaving leaf statistics untouched.
    void perturb_message(NodeId id, double delta) {
        message_.at(id.index()).precision += delta;
        if (tree_.is_root(id)) return;
        for (NodeId p = tree_.parent(id);; p = tree_.parent(p)) {
            NodeMessage agg;
            for (NodeId c : tree_.children(p)) agg += message_[c.index()];
            aggregated_[p.index()] = agg;
            message_[p.index()] = integrate_out(agg, prior_.variance(p));
            if (tree_.is_root(p)) break;
        }
    }

private:
    void require_leaf(NodeId id) const {
        if (!tree_.contains(id)) throw InputError("unknown node id " + std::to_string(id.value));
        if (!tree_.is_leaf(id)) throw InputError("node " + std::to_string(id.value) + " is not an action node");
    }

    void recompute_node(NodeId id) {
        const std::size_t i = id.index();
        if (tree_.is_leaf(id)) {
            aggregated_[i] = observation_message(stats_[i], prior_.noise_variance());
        } else {
            NodeMessage agg;
            for (NodeId c : tree_.children(id)) agg += message_[c.index()];
            aggregated_[i] = agg;
        }
        message_[i] = integrate_out(aggregated_[i], prior_.variance(id));
    }

    void refresh_path(NodeId leaf) {
        const auto path = tree_.path_to_root(leaf);
        for (auto it = path.rbegin(); it != path.rend(); ++it) recompute_node(*it);
    }

    Hierarchy tree_;
    ScalarPrior prior_;
    std::vector<LeafStats> stats_;
    std::vector<NodeMessage> aggregated_;
    std::vector<NodeMessage> message_;
};

/// Marginal posterior variance of an action written as a sum over its root
/// path of conditional variances weighted by products of squared shrinkage
/// factors (sigma_hat_j^2 / sigma0_j^2)^2 of the nodes below.
inline double decomposed_marginal_variance(const MabPosterior& post, NodeId action) {
    const auto path = post.tree().path_to_root(action);
    const std::size_t len = path.size();
    std::vector<double> hat_var(len);
    std::vector<double> ratio_sq(len);
    for (std::size_t k = 0; k < len; ++k) {
        hat_var[k] = post.posterior(path[k]).variance;
        const double r = hat_var[k] / post.prior().variance(path[k]);
        ratio_sq[k] = r * r;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
        double weight = 1.0;
        for (std::size_t j = i + 1; j < len; ++j) weight *= ratio_sq[j];
        total += weight * hat_var[i];
    }
    return total;
}

}  // namespace hierts
