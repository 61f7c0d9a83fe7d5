#pragma once

// Bayes-regret experiments and the analytic regret bound.
//
// An experiment draws R problem instances; every agent runs n rounds on the
// same instance and the same context stream, with its own reward-noise and
// sampling streams. Per-round cumulative regret is averaged over instances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "hierts/agents.hpp"
#include "hierts/envs.hpp"
#include "hierts/hierarchy.hpp"
#include "hierts/prior.hpp"
#include "hierts/rng.hpp"

namespace hierts {

/// Tree plus prior for either model. Exactly one prior is set.
struct Problem {
    Hierarchy tree;
    std::optional<ScalarPrior> scalar;
    std::optional<LinearPrior> linear;

    [[nodiscard]] bool is_linear() const { return linear.has_value(); }
    [[nodiscard]] Eigen::Index dim() const { return linear ? linear->dim() : 1; }
    [[nodiscard]] double noise_std() const { return linear ? linear->noise_std : scalar->noise_std; }

    [[nodiscard]] std::unique_ptr<Agent> make(AgentKind kind, std::uint64_t seed) const {
        return linear ? make_agent(kind, tree, *linear, seed) : make_agent(kind, tree, *scalar, seed);
    }

    [[nodiscard]] Instance sample(Rng& rng) const {
        return linear ? sample_instance(tree, *linear, rng) : sample_instance(tree, *scalar, rng);
    }
};

struct RegretCurve {
    std::vector<AgentKind> agents;
    int horizon = 0;
    int instances = 0;
    std::vector<std::vector<double>> mean;   ///< [agent][round]
    std::vector<std::vector<double>> se;     ///< [agent][round]
    std::vector<std::vector<double>> final;  ///< [agent][instance] cumulative regret after n rounds

    [[nodiscard]] std::size_t agent_slot(AgentKind k) const {
        const auto it = std::find(agents.begin(), agents.end(), k);
        if (it == agents.end()) throw InputError("agent " + std::string(to_string(k)) + " was not run");
        return static_cast<std::size_t>(it - agents.begin());
    }
    [[nodiscard]] double final_mean(AgentKind k) const {
        return horizon == 0 ? 0.0 : mean[agent_slot(k)].back();
    }
    [[nodiscard]] double final_se(AgentKind k) const { return horizon == 0 ? 0.0 : se[agent_slot(k)].back(); }
};

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

/// Mean and standard error (sample standard deviation / sqrt(R)).
inline MeanSe mean_and_se(const std::vector<double>& xs) {
    MeanSe out;
    if (xs.empty()) return out;
    for (double x : xs) out.mean += x;
    out.mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return out;
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
    return out;
}

/// Runs `work(i)` for i in [0, count) on up to `jobs` threads. Results must be
/// written to per-index slots so the outcome does not depend on scheduling.
inline void parallel_for(int count, unsigned jobs, const std::function<void(int)>& work) {
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min<unsigned>(jobs, static_cast<unsigned>(std::max(count, 1)));
    if (jobs <= 1) {
        for (int i = 0; i < count; ++i) work(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (unsigned w = 0; w < jobs; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = static_cast<int>(w); i < count; i += static_cast<int>(jobs)) work(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

/// Per-instance environment: ground truth plus a context generator.
struct Environment {
    Instance truth;
    std::function<Eigen::VectorXd(Rng&)> context;
};

struct SimulationOptions {
    int horizon = 500;
    int instances = 100;
    std::vector<AgentKind> agents{AgentKind::HierTS, AgentKind::FlatTS, AgentKind::TS};
    std::uint64_t seed = 1;
    unsigned jobs = 1;
};

/// Generic regret simulation; `make_env(r, rng)` builds instance r.
inline RegretCurve simulate_regret(const Problem& problem, const SimulationOptions& opts,
                                   const std::function<Environment(int, Rng&)>& make_env) {
    if (opts.horizon < 0) throw InputError("horizon must be >= 0");
    if (opts.instances < 1) throw InputError("instance count must be >= 1");
    if (opts.agents.empty()) throw InputError("no agents to run");
    const auto n = static_cast<std::size_t>(opts.horizon);
    const std::size_t num_agents = opts.agents.size();
    const auto num_runs = static_cast<std::size_t>(opts.instances);

    // cumulative[agent][instance][round]
    std::vector<std::vector<std::vector<double>>> cumulative(
        num_agents, std::vector<std::vector<double>>(num_runs, std::vector<double>(n, 0.0)));

    parallel_for(opts.instances, opts.jobs, [&](int r) {
        const auto run = static_cast<std::uint64_t>(r);
        Rng instance_rng(opts.seed, {static_cast<std::uint64_t>(Stream::Instance), run});
        const Environment env = make_env(r, instance_rng);

        Rng context_rng(opts.seed, {static_cast<std::uint64_t>(Stream::Context), run});
        std::vector<Eigen::VectorXd> contexts;
        contexts.reserve(n);
        for (std::size_t t = 0; t < n; ++t) contexts.push_back(env.context(context_rng));

        for (std::size_t k = 0; k < num_agents; ++k) {
            const auto kind = static_cast<std::uint64_t>(opts.agents[k]);
            auto agent = problem.make(opts.agents[k],
                                      derive_seed(opts.seed, {static_cast<std::uint64_t>(Stream::Agent), run, kind}));
            Rng noise(opts.seed, {static_cast<std::uint64_t>(Stream::Noise), run, kind});
            double total = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                const auto& x = contexts[t];
                const NodeId a = agent->act(x);
                const NodeId best = env.truth.best_action(problem.tree, x);
                const double regret = env.truth.mean_reward(best, x) - env.truth.mean_reward(a, x);
                if (regret < 0.0) throw std::logic_error("negative per-round regret");
                total += regret;
                cumulative[k][static_cast<std::size_t>(r)][t] = total;
                agent->update(a, x, step(env.truth, a, x, problem.noise_std(), noise));
            }
        }
    });

    RegretCurve curve;
    curve.agents = opts.agents;
    curve.horizon = opts.horizon;
    curve.instances = opts.instances;
    curve.mean.assign(num_agents, std::vector<double>(n));
    curve.se.assign(num_agents, std::vector<double>(n));
    curve.final.assign(num_agents, std::vector<double>(num_runs, 0.0));
    std::vector<double> column(num_runs);
    for (std::size_t k = 0; k < num_agents; ++k) {
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t r = 0; r < num_runs; ++r) column[r] = cumulative[k][r][t];
            const auto s = mean_and_se(column);
            curve.mean[k][t] = s.mean;
            curve.se[k][t] = s.se;
        }
        if (n > 0) {
            for (std::size_t r = 0; r < num_runs; ++r) curve.final[k][r] = cumulative[k][r][n - 1];
        }
    }
    return curve;
}

/// Bayes regret on instances drawn from the problem's own prior.
inline RegretCurve run_bayes_regret(const Problem& problem, const SimulationOptions& opts) {
    const auto d = problem.dim();
    const bool linear = problem.is_linear();
    return simulate_regret(problem, opts, [&](int, Rng& rng) {
        Environment env;
        env.truth = problem.sample(rng);
        if (linear) {
            env.context = [d](Rng& r) { return r.unit_sphere(d); };
        } else {
            env.context = [](Rng&) { return unit_context(); };
        }
        return env;
    });
}

/// Classification bandit on a fitted model: every instance shares the fitted
/// truth, contexts are uniform draws from the test split.
inline RegretCurve run_classification_bandit(const Hierarchy& tree, const FittedModel& fit, const FeatureDataset& ds,
                                             const SimulationOptions& opts) {
    const Problem problem{tree, std::nullopt, fit.prior};
    std::vector<Eigen::VectorXd> pool;
    for (const auto* r : ds.split(Split::Test)) pool.push_back(r->feature);
    if (pool.empty()) throw InputError("dataset has no test records");
    return simulate_regret(problem, opts, [&](int, Rng&) {
        Environment env;
        env.truth = fit.truth;
        env.context = [&pool](Rng& r) { return pool[r.uniform_index(pool.size())]; };
        return env;
    });
}

// ---------------------------------------------------------------------------
// Regret bound

struct BoundReport {
    double c = 1.0;
    std::vector<double> w;  ///< per node, indexed by NodeId::index()
    double complexity = 0.0;  ///< G(n) = sum_i c^{h_i} w_i
    double sigma_max = 0.0;   ///< max over actions of the marginal prior std
    int horizon = 0;
};

/// Per-round posterior-scaling constant 1 + sigma0_max^2 / sigma^2.
inline double posterior_scaling_constant(const ScalarPrior& prior) {
    const double s = prior.max_node_std();
    return 1.0 + s * s / prior.noise_variance();
}

/// Per-node weight of the complexity term.
inline double complexity_weight(const Hierarchy& tree, const ScalarPrior& prior, NodeId id, int n) {
    const double v = prior.variance(id);
    const double noise = prior.noise_variance();
    const double scale = v / std::log1p(v / noise);
    if (tree.is_leaf(id)) return scale * std::log1p(v * static_cast<double>(n) / noise);
    double child_precision = 0.0;
    for (NodeId c : tree.children(id)) child_precision += 1.0 / prior.variance(c);
    return scale * std::log1p(v * child_precision);
}

inline BoundReport complexity_term(const Hierarchy& tree, const ScalarPrior& prior, int n, double c) {
    if (c < 1.0) throw InputError("posterior-scaling constant c must be >= 1");
    if (n < 1) throw InputError("horizon must be >= 1");
    prior.validate(tree);
    BoundReport r;
    r.c = c;
    r.horizon = n;
    r.w.resize(tree.size());
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const NodeId id = NodeId::from_index(i);
        r.w[i] = complexity_weight(tree, prior, id, n);
        r.complexity += std::pow(c, tree.height(id)) * r.w[i];
    }
    for (NodeId a : tree.actions()) r.sigma_max = std::max(r.sigma_max, std::sqrt(marginal_prior_variance(tree, prior, a)));
    return r;
}

/// sqrt(2 n G log(1/delta)) + sqrt(2/pi) sigma_max K n delta.
inline double regret_bound(const BoundReport& report, int n, double delta, std::size_t num_actions) {
    if (!(delta > 0.0 && delta < 1.0)) throw InputError("delta must lie in (0, 1)");
    const double nn = static_cast<double>(n);
    return std::sqrt(2.0 * nn * report.complexity * std::log(1.0 / delta)) +
           std::sqrt(2.0 / std::numbers::pi) * report.sigma_max * static_cast<double>(num_actions) * nn * delta;
}

/// Complexity of independent per-action TS with the same marginal priors,
/// treating every action as a leaf under a known root.
inline double ts_complexity_term(const Hierarchy& tree, const ScalarPrior& prior, int n) {
    double g = 0.0;
    const double noise = prior.noise_variance();
    for (NodeId a : tree.actions()) {
        const double v = marginal_prior_variance(tree, prior, a);
        g += v / std::log1p(v / noise) * std::log1p(v * static_cast<double>(n) / noise);
    }
    return g;
}

/// Log-free approximations: sum_a sigmabar_a^2 for TS and sum_i c^{h_i} sigma0_i^2 for HierTS.
inline double ts_complexity_approx(const Hierarchy& tree, const ScalarPrior& prior) {
    double g = 0.0;
    for (NodeId a : tree.actions()) g += marginal_prior_variance(tree, prior, a);
    return g;
}

inline double hier_complexity_approx(const Hierarchy& tree, const ScalarPrior& prior, double c) {
    double g = 0.0;
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const NodeId id = NodeId::from_index(i);
        g += std::pow(c, tree.height(id)) * prior.variance(id);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Regret ratios across tree heights

struct RatioRow {
    int height = 0;
    MeanSe ts;
    MeanSe hier;
    MeanSe flat;
    MeanSe ratio_hier;  ///< TS regret / HierTS regret
    MeanSe ratio_flat;  ///< TS regret / FlatTS regret
};

/// Ratio of means with a delta-method standard error that keeps the
/// covariance of the paired per-instance regrets.
inline MeanSe paired_ratio(const std::vector<double>& num, const std::vector<double>& den) {
    const auto a = mean_and_se(num);
    const auto b = mean_and_se(den);
    if (b.mean == 0.0) {
        return {a.mean == 0.0 ? 1.0 : std::numeric_limits<double>::infinity(), 0.0};
    }
    const double r = a.mean / b.mean;
    if (num.size() < 2 || a.mean == 0.0) return {r, 0.0};
    double cov = 0.0;
    for (std::size_t i = 0; i < num.size(); ++i) cov += (num[i] - a.mean) * (den[i] - b.mean);
    cov /= static_cast<double>(num.size() - 1) * static_cast<double>(num.size());
    const double rel = a.se * a.se / (a.mean * a.mean) + b.se * b.se / (b.mean * b.mean) - 2.0 * cov / (a.mean * b.mean);
    return {r, std::abs(r) * std::sqrt(std::max(0.0, rel))};
}

enum class PriorScheme { Constant, Doubling };

struct RatioOptions {
    int branching = 2;
    std::vector<int> heights{1, 2, 3};
    PriorScheme scheme = PriorScheme::Constant;
    double constant_variance = 1.0;
    double hyper_mean = 0.0;
    double noise_std = 1.0;
    SimulationOptions sim;
};

inline ScalarPrior make_scheme_prior(const Hierarchy& tree, PriorScheme scheme, double constant_variance,
                                     double hyper_mean, double noise_std) {
    return scheme == PriorScheme::Doubling ? doubling_prior(tree, hyper_mean, noise_std)
                                           : constant_prior(tree, constant_variance, hyper_mean, noise_std);
}

inline std::vector<RatioRow> ratio_experiment(const RatioOptions& opts) {
    std::vector<RatioRow> rows;
    auto sim = opts.sim;
    sim.agents = {AgentKind::HierTS, AgentKind::FlatTS, AgentKind::TS};
    for (int h : opts.heights) {
        const auto tree = Hierarchy::balanced(opts.branching, h);
        Problem problem{tree, make_scheme_prior(tree, opts.scheme, opts.constant_variance, opts.hyper_mean, opts.noise_std),
                        std::nullopt};
        const auto curve = run_bayes_regret(problem, sim);
        const auto& ts = curve.final[curve.agent_slot(AgentKind::TS)];
        const auto& hier = curve.final[curve.agent_slot(AgentKind::HierTS)];
        const auto& flat = curve.final[curve.agent_slot(AgentKind::FlatTS)];
        rows.push_back({h, mean_and_se(ts), mean_and_se(hier), mean_and_se(flat), paired_ratio(ts, hier),
                        paired_ratio(ts, flat)});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// CSV output

inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline void write_regret_csv(std::ostream& out, const RegretCurve& curve) {
    out << "round,agent,mean_regret,se,instances\n";
    for (int t = 0; t < curve.horizon; ++t) {
        for (std::size_t k = 0; k < curve.agents.size(); ++k) {
            out << (t + 1) << ',' << to_string(curve.agents[k]) << ','
                << format_number(curve.mean[k][static_cast<std::size_t>(t)]) << ','
                << format_number(curve.se[k][static_cast<std::size_t>(t)]) << ',' << curve.instances << '\n';
        }
    }
}

inline void write_bound_csv(std::ostream& out, const Hierarchy& tree, const ScalarPrior& prior,
                            const BoundReport& report) {
    out << "node,height,sigma0_sq,w_i\n";
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const NodeId id = NodeId::from_index(i);
        out << id.value << ',' << tree.height(id) << ',' << format_number(prior.variance(id)) << ','
            << format_number(report.w[i]) << '\n';
    }
}

inline void write_ratio_csv(std::ostream& out, const std::vector<RatioRow>& rows) {
    out << "height,agent,ratio,se,ts_regret,agent_regret\n";
    for (const auto& r : rows) {
        out << r.height << ",HierTS," << format_number(r.ratio_hier.mean) << ',' << format_number(r.ratio_hier.se)
            << ',' << format_number(r.ts.mean) << ',' << format_number(r.hier.mean) << '\n';
        out << r.height << ",FlatTS," << format_number(r.ratio_flat.mean) << ',' << format_number(r.ratio_flat.se)
            << ',' << format_number(r.ts.mean) << ',' << format_number(r.flat.mean) << '\n';
    }
}

}  // namespace hierts
