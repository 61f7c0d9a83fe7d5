// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// All experiments use base seed 1.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hierts/envs.hpp"
#include "hierts/harness.hpp"
#include "hierts/verify.hpp"

using namespace hierts;

namespace {

constexpr std::uint64_t kSeed = 1;

// Pinned tolerances and budgets.
constexpr double kEquivalenceTol = 1e-8;
constexpr double kDecompositionTol = 1e-9;
constexpr double kEquivalenceSeconds = 30.0;
constexpr double kLemmaSeconds = 10.0;
constexpr double kBoundSeconds = 300.0;
constexpr double kClassifySeconds = 180.0;
constexpr double kOrderingSe = 2.0;
constexpr double kRatioSe = 1.0;
constexpr double kLinearR2 = 0.99;
constexpr double kSuperlinearExponent = 1.5;

constexpr int kHorizon = 500;
constexpr int kInstances = 100;

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

unsigned jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

SimulationOptions sim(int n, int r, std::vector<AgentKind> agents = {AgentKind::HierTS, AgentKind::FlatTS, AgentKind::TS}) {
    return {n, r, std::move(agents), kSeed, jobs()};
}

/// Mean and SE of the per-instance difference a - b.
MeanSe paired_difference(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return mean_and_se(d);
}

std::string csv_of(const RegretCurve& c) {
    std::ostringstream out;
    write_regret_csv(out, c);
    return out.str();
}

Problem balanced_problem(int b, int h, PriorScheme scheme) {
    const auto tree = Hierarchy::balanced(b, h);
    return {tree, make_scheme_prior(tree, scheme, 1.0, 0.0, 1.0), std::nullopt};
}

void criterion_equivalence() {
    const auto start = std::chrono::steady_clock::now();
    double scalar_worst = 0.0, linear_worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto r = verify::scalar_equivalence_case(verify::case_seed(kSeed, 1, k));
        scalar_worst = std::max({scalar_worst, r.mean_dev, r.var_dev});
    }
    for (int k = 0; k < 30; ++k) {
        const auto r = verify::linear_equivalence_case(verify::case_seed(kSeed, 2, k));
        linear_worst = std::max({linear_worst, r.mean_dev, r.var_dev});
    }
    const double secs = seconds_since(start);
    const bool pass = scalar_worst < kEquivalenceTol && linear_worst < kEquivalenceTol && secs < kEquivalenceSeconds;
    report(1, pass,
           fmt("exact-posterior equivalence, 100 scalar + 30 linear cases: worst relative deviation %.2e / %.2e "
               "(tol %.0e), %.2f s (limit %.0f s)",
               scalar_worst, linear_worst, kEquivalenceTol, secs, kEquivalenceSeconds));
}

void criteria_lemmas() {
    const auto start = std::chrono::steady_clock::now();
    std::vector<verify::LemmaReport> runs;
    for (int k = 0; k < 20; ++k) runs.push_back(verify::instrumented_run(verify::case_seed(kSeed, 3, k), 100, k % 2 == 1));
    const double secs = seconds_since(start);

    double worst = 0.0;
    long lower = 0, scale = 0, scale2 = 0, updates = 0;
    int noise_dominated = 0;
    for (const auto& r : runs) {
        worst = std::max(worst, r.decomposition_dev);
        lower += r.lower_bound_violations;
        scale += r.scaling_violations;
        scale2 += r.scaling_two_violations;
        updates += r.updates_checked;
        if (r.noise_dominates) ++noise_dominated;
    }
    report(2, worst <= kDecompositionTol && secs < kLemmaSeconds,
           fmt("variance decomposition vs oracle over 20 runs x 100 rounds: worst deviation %.2e (tol %.0e), "
               "%.2f s (limit %.0f s)",
               worst, kDecompositionTol, secs, kLemmaSeconds));
    report(3, lower == 0 && scale == 0 && scale2 == 0 && updates > 0 && noise_dominated > 0,
           fmt("precision inequalities at %ld updates: gain lower bound %ld, scaling by c %ld, "
               "scaling by 2 (%d runs with sigma >= sigma0_max) %ld violations",
               updates, lower, scale, noise_dominated, scale2));
}

/// Runs Problems 1 and 2 for b in {2, 3, 5}, h = 2, and checks the bound (4)
/// and the Problem 2 ordering (5). Returns the Problem 2, b = 2 CSV for reruns.
std::string criteria_bound_and_ordering() {
    const auto start = std::chrono::steady_clock::now();
    bool bound_ok = true;
    std::string bound_detail;
    bool order_ok = true;
    std::string order_detail;
    std::string first_csv;
    for (auto scheme : {PriorScheme::Constant, PriorScheme::Doubling}) {
        for (int b : {2, 3, 5}) {
            const auto problem = balanced_problem(b, 2, scheme);
            const bool problem2 = scheme == PriorScheme::Doubling;
            const auto curve = run_bayes_regret(
                problem, problem2 ? sim(kHorizon, kInstances) : sim(kHorizon, kInstances, {AgentKind::HierTS}));
            const auto& prior = *problem.scalar;
            const auto rep = complexity_term(problem.tree, prior, kHorizon, posterior_scaling_constant(prior));
            const double bound = regret_bound(rep, kHorizon, 1.0 / kHorizon, problem.tree.num_actions());
            const double br = curve.final_mean(AgentKind::HierTS);
            bound_ok = bound_ok && br <= bound;
            bound_detail += fmt(" P%d b=%d %.1f<=%.1f;", problem2 ? 2 : 1, b, br, bound);

            if (problem2) {
                if (first_csv.empty()) first_csv = csv_of(curve);
                const double hier = curve.final_mean(AgentKind::HierTS);
                const double flat = curve.final_mean(AgentKind::FlatTS);
                const double ts = curve.final_mean(AgentKind::TS);
                const auto diff = paired_difference(curve.final[curve.agent_slot(AgentKind::TS)],
                                                    curve.final[curve.agent_slot(AgentKind::HierTS)]);
                const bool ok = hier < flat && flat < ts && diff.mean >= kOrderingSe * diff.se;
                order_ok = order_ok && ok;
                auto rel = [](double x, double y) { return x < y ? "<" : ">="; };
                order_detail += fmt(" b=%d HierTS %.1f %s FlatTS %.1f %s TS %.1f, TS-HierTS %.1f = %.1f SE;", b, hier,
                                    rel(hier, flat), flat, rel(flat, ts), ts, diff.mean, diff.se > 0 ? diff.mean / diff.se : 0.0);
            }
        }
    }
    const double secs = seconds_since(start);
    bound_detail.pop_back();
    order_detail.pop_back();
    report(4, bound_ok && secs < kBoundSeconds,
           fmt("Bayes regret below bound (n=%d, R=%d, delta=1/n):", kHorizon, kInstances) + bound_detail +
               fmt(" [%.1f s, limit %.0f s]", secs, kBoundSeconds));
    report(5, order_ok, "Problem 2, h=2, n=500, R=100 (need >= 2 SE):" + order_detail);
    return first_csv;
}

std::string ratio_csv(const std::vector<RatioRow>& rows) {
    std::ostringstream out;
    write_ratio_csv(out, rows);
    return out.str();
}

RatioOptions ratio_options(PriorScheme scheme, std::vector<int> heights, int instances) {
    RatioOptions opt;
    opt.branching = 2;
    opt.heights = std::move(heights);
    opt.scheme = scheme;
    opt.sim = sim(kHorizon, instances);
    return opt;
}

std::string criterion_ratios() {
    const auto p1 = ratio_experiment(ratio_options(PriorScheme::Constant, {1, 2, 3}, kInstances));
    const auto p2 = ratio_experiment(ratio_options(PriorScheme::Doubling, {3}, kInstances));
    bool monotone = true;
    for (std::size_t i = 1; i < p1.size(); ++i) monotone = monotone && p1[i].ratio_hier.mean >= p1[i - 1].ratio_hier.mean;
    const auto& a = p1.back().ratio_hier;
    const auto& b = p2.front().ratio_hier;
    const double se = std::hypot(a.se, b.se);
    const bool separated = b.mean - a.mean >= kRatioSe * se;
    report(6, monotone && separated,
           fmt("TS/HierTS ratio, Problem 1 b=2: h=1 %.3f, h=2 %.3f, h=3 %.3f (%s); Problem 2 h=3 %.3f +- %.3f vs "
               "Problem 1 h=3 %.3f +- %.3f, gap %.2f SE (need >= 1)",
               p1[0].ratio_hier.mean, p1[1].ratio_hier.mean, p1[2].ratio_hier.mean,
               monotone ? "non-decreasing" : "not monotone", b.mean, b.se, a.mean, a.se, se > 0 ? (b.mean - a.mean) / se : 0.0));
    return ratio_csv(p1);
}

void criterion_scaling() {
    const auto fit = verify::sampling_scaling({8, 64, 512}, kSeed);
    std::string points;
    for (const auto& p : fit.points) {
        points += fmt(" K=%zu |V|=%zu hier %llu dense %llu;", p.actions, p.nodes,
                      static_cast<unsigned long long>(p.hierarchical_operations),
                      static_cast<unsigned long long>(p.dense_factorization_operations));
    }
    points.pop_back();
    report(7, fit.hierarchical_r2 > kLinearR2 && fit.dense_exponent >= kSuperlinearExponent,
           fmt("sampling cost: hierarchical ops linear in |V| (R^2 %.6f, need > %.2f), dense factorisation "
               "exponent in K %.2f (need >= %.1f):",
               fit.hierarchical_r2, kLinearR2, fit.dense_exponent, kSuperlinearExponent) +
               points);
}

struct ClassifyRun {
    RegretCurve curve;
    std::string csv;
};

ClassifyRun classification_run(unsigned threads) {
    const ClusterDatasetSpec spec;
    const auto labelled = cluster_tree(spec);
    Rng data_rng(kSeed, {static_cast<std::uint64_t>(Stream::Instance), 0xD47A});
    const auto ds = generate_cluster_dataset(spec, labelled, data_rng);
    const auto fit = fit_priors_from_data(ds, labelled.tree, FitOptions{});
    auto opts = sim(2000, 10);
    opts.jobs = threads;
    ClassifyRun run{run_classification_bandit(labelled.tree, fit, ds, opts), {}};
    run.csv = csv_of(run.curve);
    return run;
}

std::string criterion_classification() {
    const auto start = std::chrono::steady_clock::now();
    const auto run = classification_run(jobs());
    const double secs = seconds_since(start);
    const auto& c = run.curve;
    const double hier = c.final_mean(AgentKind::HierTS);
    const double flat = c.final_mean(AgentKind::FlatTS);
    const double ts = c.final_mean(AgentKind::TS);
    const auto diff = paired_difference(c.final[c.agent_slot(AgentKind::TS)], c.final[c.agent_slot(AgentKind::HierTS)]);
    const bool pass = hier < flat && hier < ts && diff.mean >= kOrderingSe * diff.se && secs < kClassifySeconds;
    report(8, pass,
           fmt("synthetic 25-class / 5-group classification bandit, d=10, n=2000, R=10: HierTS %.1f, FlatTS %.1f, "
               "TS %.1f, TS-HierTS %.1f = %.1f SE (need >= 2), %.1f s (limit %.0f s)",
               hier, flat, ts, diff.mean, diff.se > 0 ? diff.mean / diff.se : 0.0, secs, kClassifySeconds));
    return run.csv;
}

void criterion_determinism(const std::string& regret_csv, const std::string& ratios, const std::string& classify) {
    // Reruns with the same seed, once single-threaded and once with four workers.
    bool same = true;
    std::string detail;
    for (unsigned threads : {1u, 4u}) {
        auto o = sim(kHorizon, kInstances);
        o.jobs = threads;
        const bool r1 = csv_of(run_bayes_regret(balanced_problem(2, 2, PriorScheme::Doubling), o)) == regret_csv;
        auto ro = ratio_options(PriorScheme::Constant, {1, 2, 3}, kInstances);
        ro.sim.jobs = threads;
        const bool r2 = ratio_csv(ratio_experiment(ro)) == ratios;
        const bool r3 = classification_run(threads).csv == classify;
        same = same && r1 && r2 && r3;
        detail += fmt(" jobs=%u: regret %s, ratio %s, classification %s;", threads, r1 ? "identical" : "DIFFERENT",
                      r2 ? "identical" : "DIFFERENT", r3 ? "identical" : "DIFFERENT");
    }
    detail.pop_back();
    report(9, same, "byte-identical CSV on rerun with seed 1:" + detail);
}

}  // namespace

int main() {
    try {
        criterion_equivalence();
        criteria_lemmas();
        const auto regret_csv = criteria_bound_and_ordering();
        const auto ratios = criterion_ratios();
        criterion_scaling();
        const auto classify = criterion_classification();
        criterion_determinism(regret_csv, ratios, classify);
    } catch (const std::exception& e) {
        std::printf("FAIL acceptance run aborted: %s\n", e.what());
        return 1;
    }
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
