// hierts: run, verify and export hierarchical Thompson sampling experiments.
//
// Exit codes: 0 success, 1 verification failure, 2 input validation, 3 I/O.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "hierts/config.hpp"
#include "hierts/envs.hpp"
#include "hierts/error.hpp"
#include "hierts/harness.hpp"
#include "hierts/svg.hpp"
#include "hierts/tree_io.hpp"
#include "hierts/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kVerificationFailed = 1;
constexpr int kInvalidInput = 2;
constexpr int kIoFailure = 3;

struct Common {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> jobs;
};

hierts::RunConfig load_config(const Common& c) {
    hierts::RunConfig cfg = c.config.empty() ? hierts::RunConfig{} : hierts::load_run_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.jobs) cfg.jobs = *c.jobs;
    if (cfg.jobs == 0) cfg.jobs = std::max(1u, std::thread::hardware_concurrency());
    return cfg;
}

fs::path prepare_out(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw hierts::IoError("cannot create output directory '" + dir + "'");
    return fs::path(dir);
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw hierts::IoError("cannot write '" + path.string() + "'");
    out << content;
    out.close();
    if (!out) throw hierts::IoError("failed writing '" + path.string() + "'");
}

void write_sidecar(const fs::path& dir, const std::string& command, const hierts::RunConfig& cfg) {
    json j = {{"command", command}, {"seed", cfg.seed}, {"config", hierts::config_to_json(cfg)}};
    write_file(dir / "config.resolved.json", j.dump(2) + "\n");
}

hierts::SimulationOptions sim_options(const hierts::RunConfig& cfg) {
    hierts::SimulationOptions o;
    o.horizon = cfg.horizon;
    o.instances = cfg.instances;
    o.agents = cfg.agents;
    o.seed = cfg.seed;
    o.jobs = cfg.jobs;
    return o;
}

std::string regret_svg(const hierts::RegretCurve& curve, const std::string& title) {
    std::vector<hierts::svg::Series> series;
    for (std::size_t k = 0; k < curve.agents.size(); ++k) {
        hierts::svg::Series s;
        s.name = std::string(hierts::to_string(curve.agents[k]));
        for (int t = 0; t < curve.horizon; ++t) s.x.push_back(t + 1);
        s.y = curve.mean[k];
        s.band = curve.se[k];
        series.push_back(std::move(s));
    }
    std::ostringstream out;
    hierts::svg::ChartOptions opt;
    opt.title = title;
    hierts::svg::line_chart(out, series, opt);
    return out.str();
}

json final_regret_json(const hierts::RegretCurve& curve) {
    json out = json::object();
    for (std::size_t k = 0; k < curve.agents.size(); ++k) {
        const auto s = hierts::mean_and_se(curve.final[k]);
        out[std::string(hierts::to_string(curve.agents[k]))] = {{"mean", s.mean}, {"se", s.se}};
    }
    return out;
}

json bound_json(const hierts::Hierarchy& tree, const hierts::ScalarPrior& prior, int n, double delta) {
    const double c = hierts::posterior_scaling_constant(prior);
    const auto report = hierts::complexity_term(tree, prior, n, c);
    json j = {{"c", c},
              {"noise_dominates", prior.noise_std >= prior.max_node_std()},
              {"G", report.complexity},
              {"sigma_max", report.sigma_max},
              {"delta", delta},
              {"bound", hierts::regret_bound(report, n, delta, tree.num_actions())},
              {"G_ts", hierts::ts_complexity_term(tree, prior, n)}};
    if (prior.noise_std >= prior.max_node_std()) {
        const auto two = hierts::complexity_term(tree, prior, n, 2.0);
        j["G_c2"] = two.complexity;
        j["bound_c2"] = hierts::regret_bound(two, n, delta, tree.num_actions());
    }
    return j;
}

int cmd_simulate(const Common& c) {
    const auto cfg = load_config(c);
    const auto problem = hierts::build_problem(cfg);
    const auto dir = prepare_out(c.out);
    const auto curve = hierts::run_bayes_regret(problem, sim_options(cfg));

    std::ostringstream csv;
    hierts::write_regret_csv(csv, curve);
    write_file(dir / "regret.csv", csv.str());
    write_file(dir / "regret.svg", regret_svg(curve, "Bayes regret"));

    json summary = {{"seed", cfg.seed},
                    {"horizon", cfg.horizon},
                    {"instances", cfg.instances},
                    {"nodes", problem.tree.size()},
                    {"actions", problem.tree.num_actions()},
                    {"final_regret", final_regret_json(curve)},
                    {"config", hierts::config_to_json(cfg)}};
    // delta = 1/n is only a valid confidence level from n = 2 on.
    if (problem.scalar && (cfg.horizon >= 2 || cfg.delta)) {
        summary["bound"] = bound_json(problem.tree, *problem.scalar, cfg.horizon, cfg.resolved_delta());
    }
    write_file(dir / "summary.json", summary.dump(2) + "\n");
    write_sidecar(dir, "simulate", cfg);

    for (std::size_t k = 0; k < curve.agents.size(); ++k) {
        const auto s = hierts::mean_and_se(curve.final[k]);
        std::cout << hierts::to_string(curve.agents[k]) << ": final regret " << hierts::format_number(s.mean)
                  << " +/- " << hierts::format_number(s.se) << '\n';
    }
    return kOk;
}

int cmd_ratio(const Common& c) {
    const auto cfg = load_config(c);
    if (!cfg.tree_file.empty()) throw hierts::InputError("ratio runs balanced trees; drop tree.file");
    if (cfg.scheme != hierts::SchemeKind::Constant && cfg.scheme != hierts::SchemeKind::Doubling) {
        throw hierts::InputError("ratio needs the constant or doubling prior scheme");
    }
    const auto dir = prepare_out(c.out);
    hierts::RatioOptions opt;
    opt.branching = cfg.branching;
    opt.heights = cfg.heights;
    opt.scheme = cfg.scheme == hierts::SchemeKind::Doubling ? hierts::PriorScheme::Doubling : hierts::PriorScheme::Constant;
    opt.constant_variance = cfg.variance;
    opt.hyper_mean = cfg.hyper_mean;
    opt.noise_std = cfg.noise_std;
    opt.sim = sim_options(cfg);
    const auto rows = hierts::ratio_experiment(opt);

    std::ostringstream csv;
    hierts::write_ratio_csv(csv, rows);
    write_file(dir / "ratio.csv", csv.str());

    hierts::svg::Series hier{"HierTS", {}, {}, {}};
    hierts::svg::Series flat{"FlatTS", {}, {}, {}};
    json table = json::array();
    for (const auto& r : rows) {
        hier.x.push_back(r.height);
        hier.y.push_back(r.ratio_hier.mean);
        hier.band.push_back(r.ratio_hier.se);
        flat.x.push_back(r.height);
        flat.y.push_back(r.ratio_flat.mean);
        flat.band.push_back(r.ratio_flat.se);
        table.push_back({{"height", r.height},
                         {"hier_ratio", r.ratio_hier.mean},
                         {"hier_ratio_se", r.ratio_hier.se},
                         {"flat_ratio", r.ratio_flat.mean},
                         {"flat_ratio_se", r.ratio_flat.se}});
        std::cout << "h=" << r.height << " TS/HierTS " << hierts::format_number(r.ratio_hier.mean) << " +/- "
                  << hierts::format_number(r.ratio_hier.se) << ", TS/FlatTS " << hierts::format_number(r.ratio_flat.mean)
                  << " +/- " << hierts::format_number(r.ratio_flat.se) << '\n';
    }
    std::ostringstream svg;
    hierts::svg::ChartOptions chart;
    chart.title = "Regret reduction over TS";
    chart.x_label = "tree height";
    chart.y_label = "TS regret / agent regret";
    hierts::svg::line_chart(svg, {hier, flat}, chart);
    write_file(dir / "ratio.svg", svg.str());
    write_file(dir / "summary.json",
               json({{"seed", cfg.seed}, {"rows", table}, {"config", hierts::config_to_json(cfg)}}).dump(2) + "\n");
    write_sidecar(dir, "ratio", cfg);
    return kOk;
}

int cmd_bound(const Common& c) {
    const auto cfg = load_config(c);
    const auto problem = hierts::build_problem(cfg);
    if (!problem.scalar) throw hierts::InputError("the regret bound covers the k-armed model only");
    if (cfg.horizon < 1) throw hierts::InputError("bound needs horizon >= 1");
    const auto dir = prepare_out(c.out);
    const auto& prior = *problem.scalar;
    const double cst = hierts::posterior_scaling_constant(prior);
    const auto report = hierts::complexity_term(problem.tree, prior, cfg.horizon, cst);

    std::ostringstream csv;
    hierts::write_bound_csv(csv, problem.tree, prior, report);
    write_file(dir / "bound.csv", csv.str());
    auto j = bound_json(problem.tree, prior, cfg.horizon, cfg.resolved_delta());
    j["horizon"] = cfg.horizon;
    j["G_ts_approx"] = hierts::ts_complexity_approx(problem.tree, prior);
    j["G_approx"] = hierts::hier_complexity_approx(problem.tree, prior, cst);
    j["config"] = hierts::config_to_json(cfg);
    write_file(dir / "summary.json", j.dump(2) + "\n");
    write_sidecar(dir, "bound", cfg);
    std::cout << "c=" << hierts::format_number(cst) << " G(n)=" << hierts::format_number(report.complexity)
              << " bound=" << hierts::format_number(j["bound"].get<double>()) << '\n';
    return kOk;
}

int cmd_verify(const Common& c, bool inject_bug) {
    const auto cfg = load_config(c);
    hierts::verify::SuiteOptions opt;
    opt.scalar_cases = cfg.verify.scalar_cases;
    opt.linear_cases = cfg.verify.linear_cases;
    opt.lemma_runs = cfg.verify.lemma_runs;
    opt.lemma_rounds = cfg.verify.lemma_rounds;
    opt.seed = cfg.seed;
    opt.inject_bug = inject_bug;
    const auto rep = hierts::verify::run_suite(opt);
    if (rep.vacuous()) std::cerr << "warning: suite size is zero; nothing was checked\n";
    json checks = json::array();
    for (const auto& chk : rep.checks) {
        std::cout << (chk.pass() ? "ok   " : "FAIL ") << chk.name << ": " << hierts::format_number(chk.value);
        if (!chk.is_count) std::cout << " (tolerance " << hierts::format_number(chk.tolerance) << ")";
        std::cout << '\n';
        for (auto s : chk.failing_seeds) std::cout << "     replay seed " << s << '\n';
        checks.push_back({{"name", chk.name},
                          {"value", chk.value},
                          {"tolerance", chk.tolerance},
                          {"pass", chk.pass()},
                          {"failing_seeds", chk.failing_seeds}});
    }
    if (!c.config.empty() || c.out != ".") {
        const auto dir = prepare_out(c.out);
        write_file(dir / "verify.json",
                   json({{"seed", cfg.seed}, {"cases", rep.cases}, {"pass", rep.pass()}, {"checks", checks}}).dump(2) + "\n");
        write_sidecar(dir, "verify-oracle", cfg);
    }
    return rep.pass() ? kOk : kVerificationFailed;
}

struct ClassifyArgs {
    std::string dataset;
    std::string hierarchy;
};

int cmd_classify(const Common& c, const ClassifyArgs& a) {
    auto cfg = load_config(c);
    if (!a.dataset.empty() || !a.hierarchy.empty()) {
        if (a.dataset.empty() || a.hierarchy.empty()) throw hierts::InputError("--dataset and --hierarchy go together");
        cfg.classify.dataset = a.dataset;
        cfg.classify.hierarchy = a.hierarchy;
        cfg.classify.synthetic = false;
    }
    if (cfg.classify.dataset.empty()) cfg.classify.synthetic = true;

    hierts::Hierarchy tree;
    hierts::FeatureDataset ds;
    if (cfg.classify.synthetic) {
        const auto labelled = hierts::cluster_tree(cfg.classify.spec);
        hierts::Rng rng(cfg.seed, {static_cast<std::uint64_t>(hierts::Stream::Instance), 0xD47A});
        ds = hierts::generate_cluster_dataset(cfg.classify.spec, labelled, rng);
        tree = labelled.tree;
    } else {
        const auto tf = hierts::load_tree_file(cfg.classify.hierarchy);
        if (tf.label_map.empty()) throw hierts::InputError("hierarchy file has no label_map");
        tree = tf.tree;
        ds = hierts::load_feature_dataset(cfg.classify.dataset, tree, tf.label_map);
    }
    const auto fit = hierts::fit_priors_from_data(ds, tree, cfg.classify.fit);
    for (const auto& f : fit.floors) {
        std::cerr << "covariance floor: node " << f.node.value << " min eigenvalue "
                  << hierts::format_number(f.min_eigenvalue_before) << ", lifted by " << hierts::format_number(f.jitter)
                  << '\n';
    }
    const auto dir = prepare_out(c.out);
    const auto curve = hierts::run_classification_bandit(tree, fit, ds, sim_options(cfg));

    std::ostringstream csv;
    hierts::write_regret_csv(csv, curve);
    write_file(dir / "regret.csv", csv.str());
    write_file(dir / "regret.svg", regret_svg(curve, "Classification bandit regret"));
    json floors = json::array();
    for (const auto& f : fit.floors) {
        floors.push_back({{"node", f.node.value}, {"min_eigenvalue", f.min_eigenvalue_before}, {"jitter", f.jitter}});
    }
    json summary = {{"seed", cfg.seed},
                    {"horizon", cfg.horizon},
                    {"instances", cfg.instances},
                    {"dim", ds.dim},
                    {"classes", tree.num_actions()},
                    {"covariance_floors", floors},
                    {"final_regret", final_regret_json(curve)},
                    {"config", hierts::config_to_json(cfg)}};
    write_file(dir / "summary.json", summary.dump(2) + "\n");
    write_sidecar(dir, "classify-bandit", cfg);
    for (std::size_t k = 0; k < curve.agents.size(); ++k) {
        const auto s = hierts::mean_and_se(curve.final[k]);
        std::cout << hierts::to_string(curve.agents[k]) << ": final regret " << hierts::format_number(s.mean)
                  << " +/- " << hierts::format_number(s.se) << '\n';
    }
    return kOk;
}

int cmd_gen_dataset(const Common& c) {
    const auto cfg = load_config(c);
    const auto dir = prepare_out(c.out);
    const auto labelled = hierts::cluster_tree(cfg.classify.spec);
    hierts::Rng rng(cfg.seed, {static_cast<std::uint64_t>(hierts::Stream::Instance), 0xD47A});
    const auto ds = hierts::generate_cluster_dataset(cfg.classify.spec, labelled, rng);
    std::ostringstream csv;
    hierts::write_feature_dataset(csv, ds);
    write_file(dir / "dataset.csv", csv.str());
    auto tree = hierts::tree_to_json(labelled.tree);
    json labels = json::object();
    for (const auto& [label, leaf] : labelled.label_map) labels[label] = leaf.value;
    tree["label_map"] = labels;
    write_file(dir / "hierarchy.json", tree.dump(2) + "\n");
    write_sidecar(dir, "gen-dataset", cfg);
    std::cout << ds.records.size() << " records, " << labelled.tree.num_actions() << " classes\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical Thompson sampling experiments"};
    app.require_subcommand(1, 1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "JSON run configuration");
        sub->add_option("--out", common.out, "output directory");
        sub->add_option("--seed", common.seed, "override the base seed");
        sub->add_option("--jobs", common.jobs, "parallel instance workers (default: available cores)");
    };

    auto* simulate = app.add_subcommand("simulate", "Bayes regret curves for HierTS and baselines");
    auto* ratio = app.add_subcommand("ratio", "TS regret over HierTS/FlatTS regret across tree heights");
    auto* bound = app.add_subcommand("bound", "per-node complexity weights and the Bayes regret bound");
    auto* verify = app.add_subcommand("verify-oracle", "randomised checks against the dense joint posterior");
    auto* classify = app.add_subcommand("classify-bandit", "classification bandit with priors fitted to a dataset");
    auto* gen = app.add_subcommand("gen-dataset", "write a synthetic Gaussian-cluster dataset and hierarchy");
    for (auto* sub : {simulate, ratio, bound, verify, classify, gen}) add_common(sub);

    bool inject_bug = false;
    verify->add_flag("--inject-bug", inject_bug, "perturb one message (detector self-test)")->group("");
    ClassifyArgs classify_args;
    classify->add_option("--dataset", classify_args.dataset, "feature CSV: id,label,split,f1..fd");
    classify->add_option("--hierarchy", classify_args.hierarchy, "tree JSON with a label_map section");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInvalidInput;
    }

    try {
        if (simulate->parsed()) return cmd_simulate(common);
        if (ratio->parsed()) return cmd_ratio(common);
        if (bound->parsed()) return cmd_bound(common);
        if (verify->parsed()) return cmd_verify(common, inject_bug);
        if (classify->parsed()) return cmd_classify(common, classify_args);
        if (gen->parsed()) return cmd_gen_dataset(common);
    } catch (const hierts::IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIoFailure;
    } catch (const hierts::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalidInput;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIoFailure;
    } catch (const std::exception& e) {
        std::cerr << "internal check failed: " << e.what() << '\n';
        return kVerificationFailed;
    }
    return kInvalidInput;
}
