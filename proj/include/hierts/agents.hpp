#pragma once

// Thompson sampling agents over a tree-structured Gaussian bandit.
//
//   HierTS  samples the root from its hyper-posterior and then every other
//           node from its conditional posterior given the sampled parent,
//           parents before children. This is an exact joint posterior sample.
//   FlatTS  HierTS on a two-level tree (root + actions) whose action priors
//           keep the marginal prior of the full tree.
//   TS      independent conjugate Gaussian posteriors per action with the
//           same marginal priors.
//
// All agents share one interface taking a context vector; K-armed agents
// ignore it (the K-armed model is the d = 1, x = 1 special case).

#include <cstdint>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hierts/hierarchy.hpp"
#include "hierts/posterior_linear.hpp"
#include "hierts/posterior_mab.hpp"
#include "hierts/prior.hpp"
#include "hierts/rng.hpp"

namespace hierts {

enum class AgentKind : std::uint64_t { HierTS = 0, FlatTS = 1, TS = 2 };

inline std::string_view to_string(AgentKind k) {
    switch (k) {
        case AgentKind::HierTS: return "HierTS";
        case AgentKind::FlatTS: return "FlatTS";
        case AgentKind::TS: return "TS";
    }
    return "?";
}

inline AgentKind parse_agent_kind(std::string_view s) {
    if (s == "HierTS") return AgentKind::HierTS;
    if (s == "FlatTS") return AgentKind::FlatTS;
    if (s == "TS") return AgentKind::TS;
    throw InputError("unknown agent '" + std::string(s) + "' (expected HierTS, FlatTS or TS)");
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax_lowest(const std::vector<double>& values) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < values.size(); ++k) {
        if (values[k] > values[best]) best = k;
    }
    return best;
}

class Agent {
public:
    virtual ~Agent() = default;

    [[nodiscard]] virtual AgentKind kind() const = 0;
    /// Samples a model and returns the action that is best under it.
    virtual NodeId act(const Eigen::VectorXd& context) = 0;
    virtual void update(NodeId action, const Eigen::VectorXd& context, double reward) = 0;

    /// Number of scalar normal draws made so far.
    [[nodiscard]] std::uint64_t sampling_operations() const { return sampling_ops_; }

protected:
    std::uint64_t sampling_ops_ = 0;
};

// ---------------------------------------------------------------------------
// K-armed agents

class ScalarHierTS final : public Agent {
public:
    ScalarHierTS(Hierarchy tree, ScalarPrior prior, std::uint64_t seed, AgentKind reported = AgentKind::HierTS)
        : posterior_(std::move(tree), std::move(prior)), rng_(seed), reported_(reported) {}

    [[nodiscard]] AgentKind kind() const override { return reported_; }
    [[nodiscard]] const MabPosterior& posterior() const { return posterior_; }
    MabPosterior& posterior() { return posterior_; }

    /// One hierarchical posterior sample of every node parameter, indexed by NodeId::index().
    std::vector<double> sample() {
        const auto& tree = posterior_.tree();
        std::vector<double> theta(tree.size());
        for (NodeId id : tree.topological_order()) {
            const double parent = tree.is_root(id) ? posterior_.prior().hyper_mean : theta[tree.parent(id).index()];
            const auto p = posterior_.posterior(id);
            theta[id.index()] = p.mean(parent) + std::sqrt(p.variance) * rng_.normal();
            ++sampling_ops_;
        }
        return theta;
    }

    NodeId act(const Eigen::VectorXd&) override {
        const auto theta = sample();
        const auto& actions = posterior_.tree().actions();
        std::vector<double> values;
        values.reserve(actions.size());
        for (NodeId a : actions) values.push_back(theta[a.index()]);
        return actions[argmax_lowest(values)];
    }

    void update(NodeId action, const Eigen::VectorXd&, double reward) override { posterior_.update(action, reward); }

private:
    MabPosterior posterior_;
    Rng rng_;
    AgentKind reported_;
};

/// Root plus one leaf per action, in action order. Leaf k + 2 stands for actions()[k].
inline Hierarchy flat_tree(std::size_t num_actions) {
    std::map<int, int> parents;
    for (std::size_t k = 0; k < num_actions; ++k) parents[static_cast<int>(k) + 2] = 1;
    return Hierarchy::from_parents(parents);
}

inline ScalarPrior flat_prior(const Hierarchy& tree, const ScalarPrior& prior) {
    ScalarPrior out{prior.hyper_mean, {prior.variance(kRoot)}, prior.noise_std};
    for (NodeId a : tree.actions()) {
        out.node_variance.push_back(marginal_prior_variance(tree, prior, a) - prior.variance(kRoot));
    }
    return out;
}

inline LinearPrior flat_prior(const Hierarchy& tree, const LinearPrior& prior) {
    LinearPrior out{prior.hyper_mean, {prior.covariance(kRoot)}, prior.noise_std};
    for (NodeId a : tree.actions()) {
        out.node_covariance.push_back(marginal_prior_covariance(tree, prior, a) - prior.covariance(kRoot));
    }
    return out;
}

/// Wraps an agent running on the flattened tree and translates action ids.
template <class Inner>
class FlatAdapter final : public Agent {
public:
    FlatAdapter(const Hierarchy& tree, Inner inner) : actions_(tree.actions()), inner_(std::move(inner)) {
        for (std::size_t k = 0; k < actions_.size(); ++k) to_flat_[actions_[k].value] = NodeId(static_cast<int>(k) + 2);
    }

    [[nodiscard]] AgentKind kind() const override { return AgentKind::FlatTS; }
    [[nodiscard]] const Inner& inner() const { return inner_; }

    NodeId act(const Eigen::VectorXd& context) override {
        const NodeId flat = inner_.act(context);
        sampling_ops_ = inner_.sampling_operations();
        return actions_[static_cast<std::size_t>(flat.value - 2)];
    }

    void update(NodeId action, const Eigen::VectorXd& context, double reward) override {
        const auto it = to_flat_.find(action.value);
        if (it == to_flat_.end()) throw InputError("node " + std::to_string(action.value) + " is not an action node");
        inner_.update(it->second, context, reward);
    }

private:
    std::vector<NodeId> actions_;
    std::map<int, NodeId> to_flat_;
    Inner inner_;
};

class ScalarTS final : public Agent {
public:
    ScalarTS(const Hierarchy& tree, const ScalarPrior& prior, std::uint64_t seed)
        : tree_(tree), noise_variance_(prior.noise_variance()), rng_(seed) {
        prior.validate(tree);
        for (NodeId a : tree.actions()) {
            mean_.push_back(prior.hyper_mean);
            variance_.push_back(marginal_prior_variance(tree, prior, a));
        }
    }

    [[nodiscard]] AgentKind kind() const override { return AgentKind::TS; }

    [[nodiscard]] Moments arm(NodeId action) const {
        const auto k = tree_.action_index(action);
        return {mean_[k], variance_[k]};
    }

    NodeId act(const Eigen::VectorXd&) override {
        std::vector<double> values(mean_.size());
        for (std::size_t k = 0; k < values.size(); ++k) {
            values[k] = mean_[k] + std::sqrt(variance_[k]) * rng_.normal();
            ++sampling_ops_;
        }
        return tree_.actions()[argmax_lowest(values)];
    }

    void update(NodeId action, const Eigen::VectorXd&, double reward) override {
        const auto k = tree_.action_index(action);
        const double precision = 1.0 / variance_[k] + 1.0 / noise_variance_;
        mean_[k] = (mean_[k] / variance_[k] + reward / noise_variance_) / precision;
        variance_[k] = 1.0 / precision;
    }

private:
    Hierarchy tree_;
    double noise_variance_;
    std::vector<double> mean_;
    std::vector<double> variance_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// Contextual linear agents

class LinearHierTS final : public Agent {
public:
    LinearHierTS(Hierarchy tree, LinearPrior prior, std::uint64_t seed)
        : posterior_(std::move(tree), std::move(prior)), rng_(seed) {}

    [[nodiscard]] AgentKind kind() const override { return AgentKind::HierTS; }
    [[nodiscard]] const LinearPosterior& posterior() const { return posterior_; }

    std::vector<Eigen::VectorXd> sample() {
        const auto& tree = posterior_.tree();
        const auto d = posterior_.dim();
        std::vector<Eigen::VectorXd> theta(tree.size());
        for (NodeId id : tree.topological_order()) {
            const Eigen::VectorXd& parent =
                tree.is_root(id) ? posterior_.prior().hyper_mean : theta[tree.parent(id).index()];
            const auto& p = posterior_.posterior(id);
            theta[id.index()] = p.mean(parent) + p.cholesky * rng_.normal_vector(d);
            sampling_ops_ += static_cast<std::uint64_t>(d);
        }
        return theta;
    }

    NodeId act(const Eigen::VectorXd& context) override {
        const auto theta = sample();
        const auto& actions = posterior_.tree().actions();
        std::vector<double> values;
        values.reserve(actions.size());
        for (NodeId a : actions) values.push_back(context.dot(theta[a.index()]));
        return actions[argmax_lowest(values)];
    }

    void update(NodeId action, const Eigen::VectorXd& context, double reward) override {
        posterior_.update(action, context, reward);
    }

private:
    LinearPosterior posterior_;
    Rng rng_;
};

/// Independent Bayesian linear regression per action.
class LinearTS final : public Agent {
public:
    LinearTS(const Hierarchy& tree, const LinearPrior& prior, std::uint64_t seed)
        : tree_(tree), noise_variance_(prior.noise_variance()), rng_(seed) {
        prior.validate(tree);
        for (NodeId a : tree.actions()) {
            const Eigen::MatrixXd p0 = precision_of(marginal_prior_covariance(tree, prior, a));
            Arm arm{p0, p0 * prior.hyper_mean, {}, {}};
            refresh(arm);
            arms_.push_back(std::move(arm));
        }
    }

    [[nodiscard]] AgentKind kind() const override { return AgentKind::TS; }

    [[nodiscard]] MomentsVec arm(NodeId action) const {
        const auto& a = arms_[tree_.action_index(action)];
        return {a.mean, a.chol * a.chol.transpose()};
    }

    NodeId act(const Eigen::VectorXd& context) override {
        std::vector<double> values(arms_.size());
        for (std::size_t k = 0; k < arms_.size(); ++k) {
            const auto& a = arms_[k];
            values[k] = context.dot(a.mean + a.chol * rng_.normal_vector(a.mean.size()));
            sampling_ops_ += static_cast<std::uint64_t>(a.mean.size());
        }
        return tree_.actions()[argmax_lowest(values)];
    }

    void update(NodeId action, const Eigen::VectorXd& context, double reward) override {
        auto& a = arms_[tree_.action_index(action)];
        if (context.size() != a.mean.size()) throw InputError("context dimension mismatch");
        a.precision.noalias() += context * context.transpose() / noise_variance_;
        symmetrize(a.precision);
        a.weighted_mean += context * (reward / noise_variance_);
        refresh(a);
    }

private:
    struct Arm {
        Eigen::MatrixXd precision;
        Eigen::VectorXd weighted_mean;
        Eigen::VectorXd mean;
        Eigen::MatrixXd chol;  ///< lower factor of the covariance
    };

    static void refresh(Arm& a) {
        const auto llt = spd_factor(a.precision, "TS posterior");
        a.mean = llt.solve(a.weighted_mean);
        Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(a.precision.rows(), a.precision.cols()));
        symmetrize(cov);
        a.chol = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
    }

    Hierarchy tree_;
    double noise_variance_;
    std::vector<Arm> arms_;
    Rng rng_;
};

inline std::unique_ptr<Agent> make_agent(AgentKind kind, const Hierarchy& tree, const ScalarPrior& prior,
                                         std::uint64_t seed) {
    switch (kind) {
        case AgentKind::HierTS: return std::make_unique<ScalarHierTS>(tree, prior, seed);
        case AgentKind::FlatTS: {
            const auto flat = flat_tree(tree.num_actions());
            return std::make_unique<FlatAdapter<ScalarHierTS>>(
                tree, ScalarHierTS(flat, flat_prior(tree, prior), seed, AgentKind::FlatTS));
        }
        case AgentKind::TS: return std::make_unique<ScalarTS>(tree, prior, seed);
    }
    throw InputError("unknown agent kind");
}

inline std::unique_ptr<Agent> make_agent(AgentKind kind, const Hierarchy& tree, const LinearPrior& prior,
                                         std::uint64_t seed) {
    switch (kind) {
        case AgentKind::HierTS: return std::make_unique<LinearHierTS>(tree, prior, seed);
        case AgentKind::FlatTS: {
            const auto flat = flat_tree(tree.num_actions());
            return std::make_unique<FlatAdapter<LinearHierTS>>(tree,
                                                                LinearHierTS(flat, flat_prior(tree, prior), seed));
        }
        case AgentKind::TS: return std::make_unique<LinearTS>(tree, prior, seed);
    }
    throw InputError("unknown agent kind");
}

}  // namespace hierts
