#pragma once

// Randomised certification of the recursive posterior against the dense
// oracle, plus instrumented runs that check the variance decomposition and
// the per-update precision inequalities at every round.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hierts/agents.hpp"
#include "hierts/envs.hpp"
#include "hierts/hierarchy.hpp"
#include "hierts/oracle.hpp"
#include "hierts/posterior_linear.hpp"
#include "hierts/posterior_mab.hpp"
#include "hierts/prior.hpp"
#include "hierts/rng.hpp"

namespace hierts::verify {

/// |a - b| / max(|b|, 1).
inline double rel_dev(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1.0); }

inline double rel_dev(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1.0);
}

/// Random tree with at most `max_levels` levels (height max_levels - 1) and
/// at most `max_nodes` nodes; internal nodes get 2..4 children.
inline Hierarchy random_tree(Rng& rng, int max_levels, int max_nodes) {
    max_levels = std::max(max_levels, 2);
    max_nodes = std::max(max_nodes, 3);
    std::map<int, int> parents;
    std::vector<int> depth{0};
    std::vector<int> frontier{1};
    int count = 1;
    bool root_done = false;
    while (!frontier.empty()) {
        const std::size_t pick = rng.uniform_index(frontier.size());
        const int node = frontier[pick];
        frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));
        const int dep = depth[static_cast<std::size_t>(node - 1)];
        const bool expand = !root_done || (dep + 1 < max_levels && rng.uniform() < 0.6);
        root_done = true;
        if (!expand) continue;
        const int room = max_nodes - count;
        if (room < 2) continue;
        const int k = std::min(room, 2 + static_cast<int>(rng.uniform_index(3)));
        for (int c = 0; c < k; ++c) {
            ++count;
            parents[count] = node;
            depth.push_back(dep + 1);
            frontier.push_back(count);
        }
    }
    return Hierarchy::from_parents(parents);
}

inline ScalarPrior random_scalar_prior(const Hierarchy& tree, Rng& rng, double noise_lo = 0.5, double noise_hi = 2.0) {
    ScalarPrior p;
    p.hyper_mean = rng.normal();
    for (std::size_t i = 0; i < tree.size(); ++i) p.node_variance.push_back(0.1 + 3.9 * rng.uniform());
    p.noise_std = noise_lo + (noise_hi - noise_lo) * rng.uniform();
    return p;
}

inline Eigen::MatrixXd random_spd(Eigen::Index d, Rng& rng) {
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
        for (Eigen::Index c = 0; c < d; ++c) a(r, c) = rng.normal();
    }
    Eigen::MatrixXd m = a * a.transpose() / static_cast<double>(d) + (0.1 + rng.uniform()) * Eigen::MatrixXd::Identity(d, d);
    symmetrize(m);
    return m;
}

inline LinearPrior random_linear_prior(const Hierarchy& tree, Eigen::Index d, Rng& rng) {
    LinearPrior p;
    p.hyper_mean = rng.normal_vector(d);
    for (std::size_t i = 0; i < tree.size(); ++i) p.node_covariance.push_back(random_spd(d, rng));
    p.noise_std = 0.5 + 1.5 * rng.uniform();
    return p;
}

struct EquivalenceResult {
    std::uint64_t seed = 0;
    std::size_t nodes = 0;
    std::size_t observations = 0;
    double mean_dev = 0.0;
    double var_dev = 0.0;
};

/// One randomised K-armed case: recursion marginals vs. conditioned dense joint.
inline EquivalenceResult scalar_equivalence_case(std::uint64_t seed, bool perturb = false) {
    Rng rng(seed);
    const auto tree = random_tree(rng, 4, 32);
    const auto prior = random_scalar_prior(tree, rng);
    MabPosterior post(tree, prior);
    std::vector<oracle::Observation> obs;
    const auto m = rng.uniform_index(51);
    for (std::size_t k = 0; k < m; ++k) {
        const NodeId a = tree.actions()[rng.uniform_index(tree.num_actions())];
        const double y = 2.0 * rng.normal();
        post.update(a, y);
        obs.push_back(oracle::scalar_observation(a, y));
    }
    if (perturb) post.perturb_message(tree.children(kRoot).front(), 1e-3);
    const auto joint = oracle::condition(oracle::joint_prior(tree, prior), obs, prior.noise_variance());
    const auto dense = oracle::action_marginals_scalar(joint, tree);
    EquivalenceResult r{seed, tree.size(), m, 0.0, 0.0};
    for (std::size_t k = 0; k < tree.num_actions(); ++k) {
        const auto mm = post.marginal_action_moments(tree.actions()[k]);
        r.mean_dev = std::max(r.mean_dev, rel_dev(mm.mean, dense[k].mean));
        r.var_dev = std::max(r.var_dev, rel_dev(mm.variance, dense[k].variance));
    }
    return r;
}

/// One randomised linear case (trees of at most 3 levels, d <= 4, <= 40 observations).
inline EquivalenceResult linear_equivalence_case(std::uint64_t seed, bool perturb = false) {
    Rng rng(seed);
    const auto tree = random_tree(rng, 3, 16);
    const auto d = static_cast<Eigen::Index>(1 + rng.uniform_index(4));
    const auto prior = random_linear_prior(tree, d, rng);
    LinearPosterior post(tree, prior);
    std::vector<oracle::Observation> obs;
    const auto m = rng.uniform_index(41);
    for (std::size_t k = 0; k < m; ++k) {
        const NodeId a = tree.actions()[rng.uniform_index(tree.num_actions())];
        const Eigen::VectorXd x = rng.normal_vector(d);
        const double y = 2.0 * rng.normal();
        post.update(a, x, y);
        obs.push_back({a, x, y});
    }
    const auto joint = oracle::condition(oracle::joint_prior(tree, prior), obs, prior.noise_variance());
    const auto dense = oracle::action_marginals(joint, tree);
    EquivalenceResult r{seed, tree.size(), m, 0.0, 0.0};
    for (std::size_t k = 0; k < tree.num_actions(); ++k) {
        auto mm = post.marginal_action_moments(tree.actions()[k]);
        if (perturb) mm.mean.array() += 1e-3;
        r.mean_dev = std::max(r.mean_dev, rel_dev(mm.mean, dense[k].mean));
        r.var_dev = std::max(r.var_dev, rel_dev(mm.covariance, dense[k].covariance));
    }
    return r;
}

struct LemmaReport {
    std::uint64_t seed = 0;
    int rounds = 0;
    double c = 1.0;
    bool noise_dominates = false;  ///< sigma >= sigma0_max, so c = 2 must also work
    double decomposition_dev = 0.0;  ///< max |decomposed variance - oracle variance|
    long updates_checked = 0;
    long lower_bound_violations = 0;
    long scaling_violations = 0;
    long scaling_two_violations = 0;
    long monotonicity_violations = 0;
};

/// Slack for floating-point comparisons of the precision inequalities.
inline bool leq_with_slack(double lhs, double rhs) { return lhs <= rhs + 1e-10 * std::max({std::abs(lhs), std::abs(rhs), 1.0}); }

/// Runs HierTS for `rounds` rounds on an instance drawn from a random
/// hierarchy, checking at every round:
///   - the path-product variance decomposition against the dense oracle,
///     for every action;
///   - precision gain at each node of the updated path is at least
///     c^{i-L} prod_{j>i} (sigma_hat_j^2/sigma0_j^2)^2 / sigma^2;
///   - precision after the update is at most c times the precision before,
///     for every node (and at most 2 times when sigma >= sigma0_max);
///   - precisions never decrease on the path and never change off it.
inline LemmaReport instrumented_run(std::uint64_t seed, int rounds, bool noise_dominates) {
    Rng rng(seed);
    const auto tree = random_tree(rng, 4, 32);
    auto prior = random_scalar_prior(tree, rng);
    if (noise_dominates) prior.noise_std = prior.max_node_std() * (1.0 + rng.uniform());
    const auto inst = sample_instance(tree, prior, rng);

    LemmaReport rep;
    rep.seed = seed;
    rep.rounds = rounds;
    rep.noise_dominates = prior.noise_std >= prior.max_node_std();
    rep.c = 1.0 + prior.max_node_std() * prior.max_node_std() / prior.noise_variance();
    const double inv_noise = 1.0 / prior.noise_variance();

    ScalarHierTS agent(tree, prior, derive_seed(seed, {static_cast<std::uint64_t>(Stream::Agent)}));
    Rng noise(seed, {static_cast<std::uint64_t>(Stream::Noise)});
    auto joint = oracle::joint_prior(tree, prior);
    const Eigen::VectorXd one = unit_context();

    for (int t = 0; t < rounds; ++t) {
        const auto& post = agent.posterior();
        for (std::size_t k = 0; k < tree.num_actions(); ++k) {
            const NodeId a = tree.actions()[k];
            const double dense = joint.covariance(joint.offset(a), joint.offset(a));
            rep.decomposition_dev = std::max(rep.decomposition_dev, std::abs(decomposed_marginal_variance(post, a) - dense));
        }

        std::vector<double> before(tree.size());
        for (std::size_t i = 0; i < tree.size(); ++i) before[i] = post.posterior_precision(NodeId::from_index(i));
        std::vector<double> hat_var(tree.size());
        for (std::size_t i = 0; i < tree.size(); ++i) hat_var[i] = 1.0 / before[i];

        const NodeId action = agent.act(one);
        const double y = step(inst, action, one, prior.noise_std, noise);
        agent.update(action, one, y);
        joint = oracle::condition(std::move(joint), {oracle::scalar_observation(action, y)}, prior.noise_variance());
        ++rep.updates_checked;

        const auto path = tree.path_to_root(action);
        const std::size_t len = path.size();
        std::vector<char> on_path(tree.size(), 0);
        for (NodeId p : path) on_path[p.index()] = 1;

        for (std::size_t i = 0; i < tree.size(); ++i) {
            const double after = post.posterior_precision(NodeId::from_index(i));
            if (!leq_with_slack(after, rep.c * before[i])) ++rep.scaling_violations;
            if (rep.noise_dominates && !leq_with_slack(after, 2.0 * before[i])) ++rep.scaling_two_violations;
            if (on_path[i] ? after < before[i] : after != before[i]) ++rep.monotonicity_violations;
        }

        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t idx = path[i].index();
            double product = 1.0;
            for (std::size_t j = i + 1; j < len; ++j) {
                const double r = hat_var[path[j].index()] / prior.variance(path[j]);
                product *= r * r;
            }
            // i and L are 1-based in the bound; the exponent i - L is the same either way.
            const double bound = std::pow(rep.c, static_cast<double>(i) - static_cast<double>(len - 1)) * product * inv_noise;
            const double gain = post.posterior_precision(path[i]) - before[idx];
            if (!leq_with_slack(bound, gain)) ++rep.lower_bound_violations;
        }
    }
    return rep;
}

/// Cost of one posterior sample over a balanced tree: hierarchical sampling
/// draws once per node, the dense sampler factors the K x K action covariance.
struct SamplingCost {
    std::size_t nodes = 0;
    std::size_t actions = 0;
    std::uint64_t hierarchical_operations = 0;
    std::uint64_t dense_factorization_operations = 0;
};

inline SamplingCost sampling_cost(int branching, int height, std::uint64_t seed) {
    const auto tree = Hierarchy::balanced(branching, height);
    const auto prior = constant_prior(tree, 1.0);
    ScalarHierTS agent(tree, prior, seed);
    Rng rng(seed, {static_cast<std::uint64_t>(Stream::Oracle)});
    // A little history so the dense covariance is a genuine posterior.
    for (int k = 0; k < 10; ++k) {
        agent.posterior().update(tree.actions()[rng.uniform_index(tree.num_actions())], rng.normal());
    }
    const auto before = agent.sampling_operations();
    (void)agent.sample();
    SamplingCost cost;
    cost.nodes = tree.size();
    cost.actions = tree.num_actions();
    cost.hierarchical_operations = agent.sampling_operations() - before;
    const auto joint = oracle::joint_prior(tree, prior);
    cost.dense_factorization_operations = oracle::dense_action_sample(joint, tree, rng).factorization_operations;
    return cost;
}

struct ScalingFit {
    std::vector<SamplingCost> points;
    double hierarchical_r2 = 0.0;  ///< linear fit of operations against |V|
    double dense_exponent = 0.0;   ///< log-log slope of factorization cost against K
};

/// Least-squares R^2 of y on x with intercept.
inline double linear_r2(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (syy == 0.0) return 1.0;
    if (sxx == 0.0) return 0.0;
    return sxy * sxy / (sxx * syy);
}

inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(std::max(y[i], 1.0)));
    }
    const auto n = static_cast<double>(lx.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i] / n;
        my += ly[i] / n;
    }
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    return sxx == 0.0 ? 0.0 : sxy / sxx;
}

/// Binary balanced trees with the given action counts (powers of two).
inline ScalingFit sampling_scaling(const std::vector<int>& action_counts, std::uint64_t seed) {
    ScalingFit fit;
    std::vector<double> nodes, hier, actions, dense;
    for (int k : action_counts) {
        int h = 0;
        while ((1 << h) < k) ++h;
        if ((1 << h) != k || h < 1) throw InputError("sampling sizes must be powers of two >= 2");
        const auto cost = sampling_cost(2, h, seed);
        fit.points.push_back(cost);
        nodes.push_back(static_cast<double>(cost.nodes));
        hier.push_back(static_cast<double>(cost.hierarchical_operations));
        actions.push_back(static_cast<double>(cost.actions));
        dense.push_back(static_cast<double>(cost.dense_factorization_operations));
    }
    fit.hierarchical_r2 = linear_r2(nodes, hier);
    fit.dense_exponent = loglog_slope(actions, dense);
    return fit;
}

/// Tolerances of the randomised suite.
inline constexpr double kMomentTolerance = 1e-8;
inline constexpr double kDecompositionTolerance = 1e-9;

struct Check {
    std::string name;
    double value = 0.0;      ///< worst deviation or violation count
    double tolerance = 0.0;  ///< pass iff value < tolerance (or == 0 for counts)
    bool is_count = false;
    std::vector<std::uint64_t> failing_seeds;

    [[nodiscard]] bool pass() const { return is_count ? value == 0.0 : value < tolerance; }
};

struct SuiteOptions {
    int scalar_cases = 100;
    int linear_cases = 30;
    int lemma_runs = 20;
    int lemma_rounds = 100;
    std::uint64_t seed = 1;
    bool inject_bug = false;  ///< perturbs one message by 1e-3; the suite must notice
};

struct SuiteReport {
    std::vector<Check> checks;
    int cases = 0;

    [[nodiscard]] bool vacuous() const { return cases == 0; }
    [[nodiscard]] bool pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass(); });
    }
};

/// Seed of case k in a family; stable so a failing case can be replayed alone.
inline std::uint64_t case_seed(std::uint64_t base, std::uint64_t family, int k) {
    return derive_seed(base, {static_cast<std::uint64_t>(Stream::Oracle), family, static_cast<std::uint64_t>(k)});
}

inline SuiteReport run_suite(const SuiteOptions& opt) {
    SuiteReport rep;
    Check smean{"scalar marginal mean (relative)", 0.0, kMomentTolerance, false, {}};
    Check svar{"scalar marginal variance (relative)", 0.0, kMomentTolerance, false, {}};
    for (int k = 0; k < opt.scalar_cases; ++k) {
        const auto seed = case_seed(opt.seed, 1, k);
        const auto r = scalar_equivalence_case(seed, opt.inject_bug);
        smean.value = std::max(smean.value, r.mean_dev);
        svar.value = std::max(svar.value, r.var_dev);
        if (r.mean_dev >= kMomentTolerance || r.var_dev >= kMomentTolerance) smean.failing_seeds.push_back(seed);
        ++rep.cases;
    }
    svar.failing_seeds = smean.failing_seeds;

    Check lmean{"linear marginal mean (relative)", 0.0, kMomentTolerance, false, {}};
    Check lcov{"linear marginal covariance (relative)", 0.0, kMomentTolerance, false, {}};
    for (int k = 0; k < opt.linear_cases; ++k) {
        const auto seed = case_seed(opt.seed, 2, k);
        const auto r = linear_equivalence_case(seed, opt.inject_bug);
        lmean.value = std::max(lmean.value, r.mean_dev);
        lcov.value = std::max(lcov.value, r.var_dev);
        if (r.mean_dev >= kMomentTolerance || r.var_dev >= kMomentTolerance) lmean.failing_seeds.push_back(seed);
        ++rep.cases;
    }
    lcov.failing_seeds = lmean.failing_seeds;

    Check decomp{"variance decomposition vs oracle (absolute)", 0.0, kDecompositionTolerance, false, {}};
    Check lower{"precision gain lower bound violations", 0.0, 0.0, true, {}};
    Check scale{"precision scaling by c violations", 0.0, 0.0, true, {}};
    Check scale2{"precision scaling by 2 violations (sigma >= sigma0_max)", 0.0, 0.0, true, {}};
    Check mono{"precision monotonicity violations", 0.0, 0.0, true, {}};
    for (int k = 0; k < opt.lemma_runs; ++k) {
        const auto seed = case_seed(opt.seed, 3, k);
        const auto r = instrumented_run(seed, opt.lemma_rounds, k % 2 == 1);
        decomp.value = std::max(decomp.value, r.decomposition_dev);
        if (r.decomposition_dev >= kDecompositionTolerance) decomp.failing_seeds.push_back(seed);
        auto count = [&](Check& c, long v) {
            c.value += static_cast<double>(v);
            if (v > 0) c.failing_seeds.push_back(seed);
        };
        count(lower, r.lower_bound_violations);
        count(scale, r.scaling_violations);
        count(scale2, r.scaling_two_violations);
        count(mono, r.monotonicity_violations);
        ++rep.cases;
    }
    rep.checks = {smean, svar, lmean, lcov, decomp, lower, scale, scale2, mono};
    return rep;
}

}  // namespace hierts::verify
