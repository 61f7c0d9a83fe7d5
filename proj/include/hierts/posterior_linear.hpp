#pragma once

// Exact posterior of the contextual linear Gaussian hierarchy, the d-vector
// counterpart of posterior_mab.hpp.
//
// Messages are (precision matrix, precision * mean). Integrating a node out of
// its aggregated likelihood (M, v) and prior N(theta_p, Sigma0) uses the
// Woodbury form
//     precision     = M - M (M + Lambda0)^{-1} M
//     weighted_mean = Lambda0 (M + Lambda0)^{-1} v
// which equals (Sigma0 + M^{-1})^{-1} whenever M is invertible and stays
// well-defined for the rank-deficient Gram matrices seen before a leaf has d
// observations. Only (M + Lambda0), which is SPD, is ever factored.

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hierts/error.hpp"
#include "hierts/hierarchy.hpp"
#include "hierts/prior.hpp"

namespace hierts {

/// Factorisations whose reciprocal condition estimate falls below this are rejected.
inline constexpr double kMinReciprocalCondition = 1e-12;

inline Eigen::LLT<Eigen::MatrixXd> spd_factor(const Eigen::MatrixXd& m, const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": matrix is not positive definite");
    if (llt.rcond() < kMinReciprocalCondition) {
        throw NumericalError(std::string(what) + ": condition number exceeds 1e12");
    }
    return llt;
}

inline void symmetrize(Eigen::MatrixXd& m) { m = 0.5 * (m + m.transpose()).eval(); }

struct LeafGram {
    Eigen::MatrixXd gram;    ///< sigma^-2 sum x x^T
    Eigen::VectorXd xy_sum;  ///< sigma^-2 sum x y
    long count = 0;

    static LeafGram zero(Eigen::Index d) {
        return {Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d), 0};
    }
};

struct NodeMessageVec {
    Eigen::MatrixXd precision;
    Eigen::VectorXd weighted_mean;

    static NodeMessageVec zero(Eigen::Index d) { return {Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d)}; }

    [[nodiscard]] bool is_zero() const {
        return (precision.array() == 0.0).all() && (weighted_mean.array() == 0.0).all();
    }

    NodeMessageVec& operator+=(const NodeMessageVec& o) {
        precision += o.precision;
        weighted_mean += o.weighted_mean;
        return *this;
    }
};

/// Conditional posterior N(slope * theta_p + intercept, covariance).
struct PosteriorParamsVec {
    Eigen::MatrixXd precision;
    Eigen::MatrixXd covariance;
    Eigen::MatrixXd slope;  ///< covariance * Lambda0
    Eigen::VectorXd intercept;
    Eigen::MatrixXd cholesky;  ///< lower factor of covariance, for sampling

    [[nodiscard]] Eigen::VectorXd mean(const Eigen::VectorXd& parent_value) const {
        return slope * parent_value + intercept;
    }
};

inline Eigen::MatrixXd precision_of(const Eigen::MatrixXd& covariance) {
    auto llt = spd_factor(covariance, "prior covariance");
    Eigen::MatrixXd p = llt.solve(Eigen::MatrixXd::Identity(covariance.rows(), covariance.cols()));
    symmetrize(p);
    return p;
}

inline NodeMessageVec integrate_out(const NodeMessageVec& aggregated, const Eigen::MatrixXd& prior_precision) {
    const auto d = prior_precision.rows();
    if (aggregated.is_zero()) return NodeMessageVec::zero(d);
    const auto llt = spd_factor(aggregated.precision + prior_precision, "message update");
    NodeMessageVec out;
    out.precision = aggregated.precision - aggregated.precision * llt.solve(aggregated.precision);
    symmetrize(out.precision);
    out.weighted_mean = prior_precision * llt.solve(aggregated.weighted_mean);
    return out;
}

inline NodeMessageVec observation_message(const LeafGram& g) { return {g.gram, g.xy_sum}; }

inline NodeMessageVec leaf_message_linear(const LeafGram& g, const Eigen::MatrixXd& sigma0) {
    return integrate_out(observation_message(g), precision_of(sigma0));
}

inline NodeMessageVec aggregate(std::span<const NodeMessageVec> messages, Eigen::Index d) {
    auto total = NodeMessageVec::zero(d);
    for (const auto& m : messages) total += m;
    return total;
}

inline NodeMessageVec internal_message_linear(std::span<const NodeMessageVec> child_messages,
                                              const Eigen::MatrixXd& sigma0) {
    if (child_messages.empty()) throw InputError("internal_message_linear needs at least one child message");
    return integrate_out(aggregate(child_messages, sigma0.rows()), precision_of(sigma0));
}

inline PosteriorParamsVec node_posterior_linear(const NodeMessageVec& aggregated,
                                                const Eigen::MatrixXd& prior_precision) {
    const auto d = prior_precision.rows();
    PosteriorParamsVec p;
    p.precision = prior_precision + aggregated.precision;
    symmetrize(p.precision);
    const auto llt = spd_factor(p.precision, "node posterior");
    p.covariance = llt.solve(Eigen::MatrixXd::Identity(d, d));
    symmetrize(p.covariance);
    p.slope = p.covariance * prior_precision;
    p.intercept = p.covariance * aggregated.weighted_mean;
    Eigen::LLT<Eigen::MatrixXd> cov_llt(p.covariance);
    if (cov_llt.info() != Eigen::Success) throw NumericalError("node posterior covariance is not positive definite");
    p.cholesky = cov_llt.matrixL();
    return p;
}

/// Concrete conditional posterior (mean, covariance) for a given parent value.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> node_posterior_linear(
    const Eigen::VectorXd& parent_value, std::span<const NodeMessageVec> child_messages,
    const Eigen::MatrixXd& sigma0) {
    const auto p = node_posterior_linear(aggregate(child_messages, sigma0.rows()), precision_of(sigma0));
    return {p.mean(parent_value), p.covariance};
}

struct MomentsVec {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

class LinearPosterior {
public:
    LinearPosterior(Hierarchy tree, LinearPrior prior) : tree_(std::move(tree)), prior_(std::move(prior)) {
        prior_.validate(tree_);
        const auto d = prior_.dim();
        const std::size_t n = tree_.size();
        prior_precision_.reserve(n);
        for (std::size_t i = 0; i < n; ++i) prior_precision_.push_back(precision_of(prior_.node_covariance[i]));
        grams_.assign(n, LeafGram::zero(d));
        aggregated_.assign(n, NodeMessageVec::zero(d));
        message_.assign(n, NodeMessageVec::zero(d));
        posterior_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            posterior_[i] = node_posterior_linear(aggregated_[i], prior_precision_[i]);
        }
    }

    [[nodiscard]] const Hierarchy& tree() const { return tree_; }
    [[nodiscard]] const LinearPrior& prior() const { return prior_; }
    [[nodiscard]] Eigen::Index dim() const { return prior_.dim(); }

    [[nodiscard]] const LeafGram& leaf_gram(NodeId leaf) const {
        require_leaf(leaf);
        return grams_[leaf.index()];
    }
    [[nodiscard]] const NodeMessageVec& message(NodeId id) const { return message_.at(id.index()); }
    [[nodiscard]] const NodeMessageVec& aggregated(NodeId id) const { return aggregated_.at(id.index()); }
    [[nodiscard]] const PosteriorParamsVec& posterior(NodeId id) const { return posterior_.at(id.index()); }
    [[nodiscard]] const Eigen::MatrixXd& prior_precision(NodeId id) const { return prior_precision_.at(id.index()); }

    void update(NodeId action, const Eigen::VectorXd& context, double reward) {
        require_leaf(action);
        if (context.size() != dim()) {
            throw InputError("context has dimension " + std::to_string(context.size()) + ", expected " +
                             std::to_string(dim()));
        }
        const double inv_noise = 1.0 / prior_.noise_variance();
        auto& g = grams_[action.index()];
        g.gram.noalias() += inv_noise * context * context.transpose();
        symmetrize(g.gram);
        g.xy_sum += (inv_noise * reward) * context;
        g.count += 1;
        const auto path = tree_.path_to_root(action);
        for (auto it = path.rbegin(); it != path.rend(); ++it) recompute_node(*it);
    }

    void rebuild() {
        const auto& order = tree_.topological_order();
        for (auto it = order.rbegin(); it != order.rend(); ++it) recompute_node(*it);
    }

    [[nodiscard]] MomentsVec marginal(NodeId id) const {
        MomentsVec m{prior_.hyper_mean, Eigen::MatrixXd::Zero(dim(), dim())};
        for (NodeId node : tree_.path_to_root(id)) {
            const auto& p = posterior(node);
            m.mean = p.mean(m.mean);
            Eigen::MatrixXd cov = p.covariance + p.slope * m.covariance * p.slope.transpose();
            symmetrize(cov);
            m.covariance = std::move(cov);
        }
        return m;
    }

    [[nodiscard]] MomentsVec marginal_action_moments(NodeId action) const {
        require_leaf(action);
        return marginal(action);
    }

private:
    void require_leaf(NodeId id) const {
        if (!tree_.contains(id)) throw InputError("unknown node id " + std::to_string(id.value));
        if (!tree_.is_leaf(id)) throw InputError("node " + std::to_string(id.value) + " is not an action node");
    }

    void recompute_node(NodeId id) {
        const std::size_t i = id.index();
        if (tree_.is_leaf(id)) {
            aggregated_[i] = observation_message(grams_[i]);
        } else {
            auto agg = NodeMessageVec::zero(dim());
            for (NodeId c : tree_.children(id)) agg += message_[c.index()];
            aggregated_[i] = std::move(agg);
        }
        message_[i] = integrate_out(aggregated_[i], prior_precision_[i]);
        posterior_[i] = node_posterior_linear(aggregated_[i], prior_precision_[i]);
    }

    Hierarchy tree_;
    LinearPrior prior_;
    std::vector<Eigen::MatrixXd> prior_precision_;
    std::vector<LeafGram> grams_;
    std::vector<NodeMessageVec> aggregated_;
    std::vector<NodeMessageVec> message_;
    std::vector<PosteriorParamsVec> posterior_;
};

}  // namespace hierts
