#pragma once

// Run configuration files (JSON). Schema, all keys optional unless noted:
//
//   tree        {"balanced": {"b": 2, "h": 2}} or {"file": "tree.json"}
//   prior       {"scheme": "constant" | "doubling" | "explicit" | "file",
//                "variance": 1.0,                     constant only
//                "node_variance": {"1": 1.0, ...},    explicit only
//                "hyper_mean": 0.0, "noise_std": 1.0}
//   model       "k-armed" (default) or "linear"; "dim": d for linear
//   horizon, instances, agents ["HierTS", "FlatTS", "TS"], seed, jobs
//   delta       bound confidence; defaults to 1 / horizon
//   heights     [1, 2, 3] for the ratio experiment (balanced, b from tree)
//   verify      {"scalar_cases", "linear_cases", "lemma_runs", "lemma_rounds",
//                "sampling_sizes": [8, 64, 512]}
//   classify    {"dataset": "data.csv", "hierarchy": "tree.json"} or
//               {"synthetic": {...cluster spec...}}; plus "covariance_floor",
//               "diagonal", "noise_std"
//
// Paths are resolved against the config file's directory. Validation errors
// carry the line of the offending key.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hierts/agents.hpp"
#include "hierts/envs.hpp"
#include "hierts/error.hpp"
#include "hierts/harness.hpp"
#include "hierts/hierarchy.hpp"
#include "hierts/prior.hpp"
#include "hierts/tree_io.hpp"

namespace hierts {

enum class SchemeKind { Constant, Doubling, Explicit, File };

inline std::string_view to_string(SchemeKind s) {
    switch (s) {
        case SchemeKind::Constant: return "constant";
        case SchemeKind::Doubling: return "doubling";
        case SchemeKind::Explicit: return "explicit";
        case SchemeKind::File: return "file";
    }
    return "?";
}

struct VerifyConfig {
    int scalar_cases = 100;
    int linear_cases = 30;
    int lemma_runs = 20;
    int lemma_rounds = 100;
    std::vector<int> sampling_sizes{8, 64, 512};
};

struct ClassifyConfig {
    std::string dataset;    ///< resolved path, empty when synthetic
    std::string hierarchy;  ///< resolved path, empty when synthetic
    bool synthetic = false;
    ClusterDatasetSpec spec;
    FitOptions fit;
};

struct RunConfig {
    int branching = 2;
    int height = 2;
    std::string tree_file;  ///< resolved path; overrides balanced when set
    SchemeKind scheme = SchemeKind::Constant;
    double variance = 1.0;
    std::map<int, double> node_variance;
    double hyper_mean = 0.0;
    double noise_std = 1.0;
    bool linear = false;
    int dim = 1;
    int horizon = 500;
    int instances = 100;
    std::vector<AgentKind> agents{AgentKind::HierTS, AgentKind::FlatTS, AgentKind::TS};
    std::uint64_t seed = 1;
    unsigned jobs = 0;  ///< 0: available parallelism
    std::optional<double> delta;
    std::vector<int> heights{1, 2, 3};
    VerifyConfig verify;
    ClassifyConfig classify;

    [[nodiscard]] double resolved_delta() const { return delta ? *delta : 1.0 / std::max(horizon, 1); }
};

namespace detail {

/// 1-based line of the byte offset in text.
inline int line_at(const std::string& text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

/// Locates nested keys by successive textual search; good enough to point at
/// the offending line of a hand-written config.
class KeyLocator {
public:
    explicit KeyLocator(const std::string& text) : text_(text) {}

    [[nodiscard]] int line(const std::vector<std::string>& path) const {
        std::size_t pos = 0;
        for (const auto& key : path) {
            const auto found = text_.find('"' + key + '"', pos);
            if (found == std::string::npos) break;
            pos = found;
        }
        return line_at(text_, pos);
    }

private:
    const std::string& text_;
};

class ConfigReader {
public:
    ConfigReader(const std::string& text, const std::string& origin) : locate_(text), origin_(origin) {}

    [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& msg) const {
        std::string dotted;
        for (const auto& p : path) dotted += (dotted.empty() ? "" : ".") + p;
        throw ParseError(origin_ + ":" + std::to_string(locate_.line(path)) + ": " + dotted + ": " + msg);
    }

    void only_keys(const nlohmann::json& obj, const std::vector<std::string>& where,
                   std::initializer_list<const char*> allowed) const {
        if (!obj.is_object()) fail(where, "expected an object");
        const std::set<std::string> ok(allowed.begin(), allowed.end());
        for (const auto& [key, _] : obj.items()) {
            if (!ok.contains(key)) {
                auto path = where;
                path.push_back(key);
                fail(path, "unknown key");
            }
        }
    }

    [[nodiscard]] double number(const nlohmann::json& v, const std::vector<std::string>& path) const {
        if (!v.is_number()) fail(path, "expected a number");
        return v.get<double>();
    }

    [[nodiscard]] long long integer(const nlohmann::json& v, const std::vector<std::string>& path, long long lo) const {
        if (!v.is_number_integer()) fail(path, "expected an integer");
        const auto x = v.get<long long>();
        if (x < lo) fail(path, "must be >= " + std::to_string(lo));
        return x;
    }

    [[nodiscard]] std::vector<int> int_list(const nlohmann::json& v, const std::vector<std::string>& path, int lo) const {
        if (!v.is_array()) fail(path, "expected an array of integers");
        std::vector<int> out;
        for (const auto& x : v) out.push_back(static_cast<int>(integer(x, path, lo)));
        return out;
    }

    [[nodiscard]] std::string string(const nlohmann::json& v, const std::vector<std::string>& path) const {
        if (!v.is_string()) fail(path, "expected a string");
        return v.get<std::string>();
    }

    [[nodiscard]] bool boolean(const nlohmann::json& v, const std::vector<std::string>& path) const {
        if (!v.is_boolean()) fail(path, "expected true or false");
        return v.get<bool>();
    }

private:
    KeyLocator locate_;
    std::string origin_;
};

inline std::string resolve_path(const std::string& base_dir, const std::string& p) {
    const std::filesystem::path path(p);
    if (path.is_absolute() || base_dir.empty()) return path.string();
    return (std::filesystem::path(base_dir) / path).lexically_normal().string();
}

}  // namespace detail

/// Parses and validates a config document. `origin` names it in messages.
inline RunConfig parse_run_config(const std::string& text, const std::string& origin = "config",
                                  const std::string& base_dir = "") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(origin + ":" + std::to_string(detail::line_at(text, e.byte == 0 ? 0 : e.byte - 1)) +
                         ": malformed JSON: " + e.what());
    }
    const detail::ConfigReader rd(text, origin);
    rd.only_keys(j, {}, {"tree", "prior", "model", "dim", "horizon", "instances", "agents", "seed", "jobs", "delta",
                         "heights", "verify", "classify"});
    RunConfig c;

    if (j.contains("tree")) {
        const auto& t = j["tree"];
        rd.only_keys(t, {"tree"}, {"balanced", "file"});
        if (t.contains("balanced") == t.contains("file")) rd.fail({"tree"}, "give exactly one of 'balanced' or 'file'");
        if (t.contains("balanced")) {
            const auto& b = t["balanced"];
            rd.only_keys(b, {"tree", "balanced"}, {"b", "h"});
            if (!b.contains("b") || !b.contains("h")) rd.fail({"tree", "balanced"}, "needs 'b' and 'h'");
            c.branching = static_cast<int>(rd.integer(b["b"], {"tree", "balanced", "b"}, 2));
            c.height = static_cast<int>(rd.integer(b["h"], {"tree", "balanced", "h"}, 1));
        } else {
            c.tree_file = detail::resolve_path(base_dir, rd.string(t["file"], {"tree", "file"}));
        }
    }

    if (j.contains("prior")) {
        const auto& p = j["prior"];
        rd.only_keys(p, {"prior"}, {"scheme", "variance", "node_variance", "hyper_mean", "noise_std"});
        if (p.contains("scheme")) {
            const auto s = rd.string(p["scheme"], {"prior", "scheme"});
            if (s == "constant") c.scheme = SchemeKind::Constant;
            else if (s == "doubling") c.scheme = SchemeKind::Doubling;
            else if (s == "explicit") c.scheme = SchemeKind::Explicit;
            else if (s == "file") c.scheme = SchemeKind::File;
            else rd.fail({"prior", "scheme"}, "unknown scheme '" + s + "'");
        }
        if (p.contains("variance")) {
            c.variance = rd.number(p["variance"], {"prior", "variance"});
            if (!(c.variance > 0.0)) rd.fail({"prior", "variance"}, "must be > 0");
        }
        if (p.contains("node_variance")) {
            const auto& nv = p["node_variance"];
            if (!nv.is_object()) rd.fail({"prior", "node_variance"}, "expected an object keyed by node id");
            for (const auto& [key, value] : nv.items()) {
                int id = 0;
                try {
                    id = detail::parse_node_key(key, "node_variance");
                } catch (const ParseError&) {
                    rd.fail({"prior", "node_variance", key}, "key is not a node id");
                }
                c.node_variance[id] = rd.number(value, {"prior", "node_variance", key});
            }
        }
        if (c.scheme == SchemeKind::Explicit && c.node_variance.empty()) {
            rd.fail({"prior", "scheme"}, "explicit scheme needs 'node_variance'");
        }
        if (p.contains("hyper_mean")) c.hyper_mean = rd.number(p["hyper_mean"], {"prior", "hyper_mean"});
        if (p.contains("noise_std")) {
            c.noise_std = rd.number(p["noise_std"], {"prior", "noise_std"});
            if (!(c.noise_std > 0.0)) rd.fail({"prior", "noise_std"}, "must be > 0");
        }
    }
    if (c.scheme == SchemeKind::File && c.tree_file.empty()) rd.fail({"prior", "scheme"}, "'file' scheme needs tree.file");

    if (j.contains("model")) {
        const auto m = rd.string(j["model"], {"model"});
        if (m == "linear") c.linear = true;
        else if (m != "k-armed") rd.fail({"model"}, "expected 'k-armed' or 'linear'");
    }
    if (j.contains("dim")) c.dim = static_cast<int>(rd.integer(j["dim"], {"dim"}, 1));
    if (j.contains("horizon")) c.horizon = static_cast<int>(rd.integer(j["horizon"], {"horizon"}, 0));
    if (j.contains("instances")) c.instances = static_cast<int>(rd.integer(j["instances"], {"instances"}, 1));
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) rd.fail({"seed"}, "expected a non-negative integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("jobs")) c.jobs = static_cast<unsigned>(rd.integer(j["jobs"], {"jobs"}, 0));
    if (j.contains("agents")) {
        const auto& a = j["agents"];
        if (!a.is_array() || a.empty()) rd.fail({"agents"}, "expected a non-empty array of agent names");
        c.agents.clear();
        for (const auto& x : a) {
            try {
                c.agents.push_back(parse_agent_kind(rd.string(x, {"agents"})));
            } catch (const InputError& e) {
                rd.fail({"agents"}, e.what());
            }
        }
    }
    if (j.contains("delta")) {
        const double d = rd.number(j["delta"], {"delta"});
        if (!(d > 0.0 && d < 1.0)) rd.fail({"delta"}, "must lie in (0, 1)");
        c.delta = d;
    }
    if (j.contains("heights")) c.heights = rd.int_list(j["heights"], {"heights"}, 1);

    if (j.contains("verify")) {
        const auto& v = j["verify"];
        rd.only_keys(v, {"verify"}, {"scalar_cases", "linear_cases", "lemma_runs", "lemma_rounds", "sampling_sizes"});
        auto get = [&](const char* k, int& dst) {
            if (v.contains(k)) dst = static_cast<int>(rd.integer(v[k], {"verify", k}, 0));
        };
        get("scalar_cases", c.verify.scalar_cases);
        get("linear_cases", c.verify.linear_cases);
        get("lemma_runs", c.verify.lemma_runs);
        get("lemma_rounds", c.verify.lemma_rounds);
        if (v.contains("sampling_sizes")) c.verify.sampling_sizes = rd.int_list(v["sampling_sizes"], {"verify", "sampling_sizes"}, 2);
    }

    if (j.contains("classify")) {
        const auto& k = j["classify"];
        rd.only_keys(k, {"classify"}, {"dataset", "hierarchy", "synthetic", "covariance_floor", "diagonal", "noise_std"});
        auto& cl = c.classify;
        if (k.contains("dataset")) cl.dataset = detail::resolve_path(base_dir, rd.string(k["dataset"], {"classify", "dataset"}));
        if (k.contains("hierarchy")) {
            cl.hierarchy = detail::resolve_path(base_dir, rd.string(k["hierarchy"], {"classify", "hierarchy"}));
        }
        if (k.contains("synthetic")) {
            const auto& s = k["synthetic"];
            rd.only_keys(s, {"classify", "synthetic"},
                         {"groups", "classes_per_group", "dim", "train_per_class", "test_per_class", "group_scale",
                          "class_scale", "noise_scale"});
            cl.synthetic = true;
            auto geti = [&](const char* key, int& dst, int lo) {
                if (s.contains(key)) dst = static_cast<int>(rd.integer(s[key], {"classify", "synthetic", key}, lo));
            };
            auto getd = [&](const char* key, double& dst) {
                if (s.contains(key)) dst = rd.number(s[key], {"classify", "synthetic", key});
            };
            geti("groups", cl.spec.groups, 2);
            geti("classes_per_group", cl.spec.classes_per_group, 2);
            int dim = static_cast<int>(cl.spec.dim);
            geti("dim", dim, 1);
            cl.spec.dim = dim;
            geti("train_per_class", cl.spec.train_per_class, 2);
            geti("test_per_class", cl.spec.test_per_class, 1);
            getd("group_scale", cl.spec.group_scale);
            getd("class_scale", cl.spec.class_scale);
            getd("noise_scale", cl.spec.noise_scale);
        }
        if (cl.synthetic == (!cl.dataset.empty() || !cl.hierarchy.empty())) {
            rd.fail({"classify"}, "give either 'synthetic' or both 'dataset' and 'hierarchy'");
        }
        if (!cl.synthetic && (cl.dataset.empty() || cl.hierarchy.empty())) {
            rd.fail({"classify"}, "'dataset' and 'hierarchy' go together");
        }
        if (k.contains("covariance_floor")) {
            cl.fit.covariance_floor = rd.number(k["covariance_floor"], {"classify", "covariance_floor"});
            if (!(cl.fit.covariance_floor > 0.0)) rd.fail({"classify", "covariance_floor"}, "must be > 0");
        }
        if (k.contains("diagonal")) cl.fit.diagonal = rd.boolean(k["diagonal"], {"classify", "diagonal"});
        if (k.contains("noise_std")) {
            cl.fit.noise_std = rd.number(k["noise_std"], {"classify", "noise_std"});
            if (!(cl.fit.noise_std > 0.0)) rd.fail({"classify", "noise_std"}, "must be > 0");
        }
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str(), path, std::filesystem::path(path).parent_path().string());
}

/// Resolved config, suitable for replay.
inline nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json j;
    if (c.tree_file.empty()) {
        j["tree"] = {{"balanced", {{"b", c.branching}, {"h", c.height}}}};
    } else {
        j["tree"] = {{"file", c.tree_file}};
    }
    nlohmann::json prior = {{"scheme", std::string(to_string(c.scheme))}, {"hyper_mean", c.hyper_mean},
                            {"noise_std", c.noise_std}};
    if (c.scheme == SchemeKind::Constant) prior["variance"] = c.variance;
    if (c.scheme == SchemeKind::Explicit) {
        nlohmann::json nv = nlohmann::json::object();
        for (const auto& [id, v] : c.node_variance) nv[std::to_string(id)] = v;
        prior["node_variance"] = nv;
    }
    j["prior"] = prior;
    j["model"] = c.linear ? "linear" : "k-armed";
    j["dim"] = c.dim;
    j["horizon"] = c.horizon;
    j["instances"] = c.instances;
    nlohmann::json agents = nlohmann::json::array();
    for (auto a : c.agents) agents.push_back(std::string(to_string(a)));
    j["agents"] = agents;
    j["seed"] = c.seed;
    if (const double d = c.resolved_delta(); d < 1.0) j["delta"] = d;
    j["heights"] = c.heights;
    j["verify"] = {{"scalar_cases", c.verify.scalar_cases},
                   {"linear_cases", c.verify.linear_cases},
                   {"lemma_runs", c.verify.lemma_runs},
                   {"lemma_rounds", c.verify.lemma_rounds},
                   {"sampling_sizes", c.verify.sampling_sizes}};
    nlohmann::json cl = {{"covariance_floor", c.classify.fit.covariance_floor},
                         {"diagonal", c.classify.fit.diagonal},
                         {"noise_std", c.classify.fit.noise_std}};
    if (c.classify.synthetic) {
        const auto& s = c.classify.spec;
        cl["synthetic"] = {{"groups", s.groups},
                           {"classes_per_group", s.classes_per_group},
                           {"dim", s.dim},
                           {"train_per_class", s.train_per_class},
                           {"test_per_class", s.test_per_class},
                           {"group_scale", s.group_scale},
                           {"class_scale", s.class_scale},
                           {"noise_scale", s.noise_scale}};
    } else if (!c.classify.dataset.empty()) {
        cl["dataset"] = c.classify.dataset;
        cl["hierarchy"] = c.classify.hierarchy;
    }
    j["classify"] = cl;
    return j;
}

/// Tree named by the config: a balanced tree or the tree file's hierarchy.
inline TreeFile resolve_tree(const RunConfig& c) {
    if (!c.tree_file.empty()) return load_tree_file(c.tree_file);
    return TreeFile{Hierarchy::balanced(c.branching, c.height), std::nullopt, std::nullopt, {}};
}

/// Scalar prior for a tree under the config's scheme (not for the 'file' scheme).
inline ScalarPrior scheme_prior(const RunConfig& c, const Hierarchy& tree) {
    switch (c.scheme) {
        case SchemeKind::Constant: return constant_prior(tree, c.variance, c.hyper_mean, c.noise_std);
        case SchemeKind::Doubling: return doubling_prior(tree, c.hyper_mean, c.noise_std);
        case SchemeKind::Explicit: {
            ScalarPrior p{c.hyper_mean, {}, c.noise_std};
            for (std::size_t i = 0; i < tree.size(); ++i) {
                const auto it = c.node_variance.find(static_cast<int>(i) + 1);
                if (it == c.node_variance.end()) {
                    throw InputError("prior.node_variance is missing node " + std::to_string(i + 1));
                }
                p.node_variance.push_back(it->second);
            }
            if (c.node_variance.size() != tree.size()) throw InputError("prior.node_variance names nodes not in the tree");
            return p;
        }
        case SchemeKind::File: break;
    }
    throw InputError("the 'file' prior scheme has no scalar variances to derive");
}

/// Tree plus prior described by the config.
inline Problem build_problem(const RunConfig& c) {
    auto tf = resolve_tree(c);
    Problem p{tf.tree, std::nullopt, std::nullopt};
    if (c.scheme == SchemeKind::File) {
        if (c.linear) {
            if (tf.linear_prior) p.linear = tf.linear_prior;
            else if (tf.scalar_prior) p.linear = isotropic_prior(*tf.scalar_prior, c.dim);
            else throw InputError("tree file has no prior section");
        } else {
            if (!tf.scalar_prior) throw InputError("k-armed model needs a scalar prior in the tree file");
            p.scalar = tf.scalar_prior;
        }
    } else {
        const auto scalar = scheme_prior(c, p.tree);
        scalar.validate(p.tree);
        if (c.linear) p.linear = isotropic_prior(scalar, c.dim);
        else p.scalar = scalar;
    }
    if (p.linear) p.linear->validate(p.tree);
    return p;
}

}  // namespace hierts
