#pragma once

// JSON tree files:
//   {"parents": {"2": 1, "3": 1, ...},
//    "prior": {"hyper_mean": 0.0 | [..d..],
//              "node_variance": {"1": 1.0 | [[..],..], ...},
//              "noise_std": 1.0},
//    "label_map": {"label": leaf_id, ...}}
// "prior" and "label_map" are optional. A scalar hyper_mean selects the
// K-armed model; an array selects the linear model with row-major matrices.

#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "hierts/error.hpp"
#include "hierts/hierarchy.hpp"
#include "hierts/prior.hpp"

namespace hierts {

struct TreeFile {
    Hierarchy tree;
    std::optional<ScalarPrior> scalar_prior;
    std::optional<LinearPrior> linear_prior;
    std::map<std::string, NodeId> label_map;
};

namespace detail {

inline int parse_node_key(const std::string& key, const char* section) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ParseError(std::string(section) + ": key '" + key + "' is not a node id");
    }
}

inline Eigen::MatrixXd parse_matrix(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ParseError(where + ": expected a nested array");
    const auto rows = static_cast<Eigen::Index>(j.size());
    Eigen::MatrixXd m(rows, rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != rows) {
            throw ParseError(where + ": matrix must be square");
        }
        for (Eigen::Index c = 0; c < rows; ++c) {
            const auto& v = row[static_cast<std::size_t>(c)];
            if (!v.is_number()) throw ParseError(where + ": matrix entries must be numbers");
            m(r, c) = v.get<double>();
        }
    }
    return m;
}

}  // namespace detail

inline TreeFile parse_tree_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("tree file must be a JSON object");
    if (!j.contains("parents") || !j["parents"].is_object()) throw ParseError("tree file needs a 'parents' object");
    std::map<int, int> parents;
    for (const auto& [key, value] : j["parents"].items()) {
        if (!value.is_number_integer()) throw ParseError("parents: value of '" + key + "' must be an integer");
        parents[detail::parse_node_key(key, "parents")] = value.get<int>();
    }
    TreeFile out{Hierarchy::from_parents(parents), std::nullopt, std::nullopt, {}};
    const auto& tree = out.tree;

    if (j.contains("prior")) {
        const auto& p = j["prior"];
        if (!p.is_object() || !p.contains("hyper_mean") || !p.contains("node_variance")) {
            throw ParseError("prior needs 'hyper_mean' and 'node_variance'");
        }
        const double noise = p.value("noise_std", 1.0);
        const auto& nv = p["node_variance"];
        if (!nv.is_object()) throw ParseError("prior.node_variance must be an object keyed by node id");
        auto lookup = [&](std::size_t i) -> const nlohmann::json& {
            const auto key = std::to_string(i + 1);
            if (!nv.contains(key)) throw ParseError("prior.node_variance is missing node " + key);
            return nv[key];
        };
        if (p["hyper_mean"].is_number()) {
            ScalarPrior sp{p["hyper_mean"].get<double>(), {}, noise};
            for (std::size_t i = 0; i < tree.size(); ++i) {
                const auto& v = lookup(i);
                if (!v.is_number()) throw ParseError("prior.node_variance[" + std::to_string(i + 1) + "] must be a number");
                sp.node_variance.push_back(v.get<double>());
            }
            sp.validate(tree);
            out.scalar_prior = sp;
        } else if (p["hyper_mean"].is_array()) {
            LinearPrior lp;
            lp.noise_std = noise;
            lp.hyper_mean.resize(static_cast<Eigen::Index>(p["hyper_mean"].size()));
            for (std::size_t k = 0; k < p["hyper_mean"].size(); ++k) {
                if (!p["hyper_mean"][k].is_number()) throw ParseError("prior.hyper_mean entries must be numbers");
                lp.hyper_mean[static_cast<Eigen::Index>(k)] = p["hyper_mean"][k].get<double>();
            }
            for (std::size_t i = 0; i < tree.size(); ++i) {
                lp.node_covariance.push_back(
                    detail::parse_matrix(lookup(i), "prior.node_variance[" + std::to_string(i + 1) + "]"));
            }
            lp.validate(tree);
            out.linear_prior = lp;
        } else {
            throw ParseError("prior.hyper_mean must be a number or an array");
        }
    }

    if (j.contains("label_map")) {
        if (!j["label_map"].is_object()) throw ParseError("label_map must be an object");
        for (const auto& [label, leaf] : j["label_map"].items()) {
            if (!leaf.is_number_integer()) throw ParseError("label_map: '" + label + "' must map to an integer");
            const NodeId id(leaf.get<int>());
            if (!tree.contains(id) || !tree.is_leaf(id)) {
                throw ParseError("label_map: '" + label + "' maps to " + std::to_string(id.value) +
                                 ", which is not an action node");
            }
            out.label_map[label] = id;
        }
    }
    return out;
}

inline TreeFile load_tree_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open tree file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("tree file '" + path + "': " + e.what());
    }
    return parse_tree_json(j);
}

inline nlohmann::json tree_to_json(const Hierarchy& tree) {
    nlohmann::json parents = nlohmann::json::object();
    for (const auto& [child, parent] : tree.parent_map()) parents[std::to_string(child)] = parent;
    return {{"parents", parents}};
}

inline nlohmann::json prior_to_json(const ScalarPrior& prior) {
    nlohmann::json nv = nlohmann::json::object();
    for (std::size_t i = 0; i < prior.node_variance.size(); ++i) nv[std::to_string(i + 1)] = prior.node_variance[i];
    return {{"hyper_mean", prior.hyper_mean}, {"node_variance", nv}, {"noise_std", prior.noise_std}};
}

inline nlohmann::json prior_to_json(const LinearPrior& prior) {
    auto matrix = [](const Eigen::MatrixXd& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
            rows.push_back(row);
        }
        return rows;
    };
    nlohmann::json mean = nlohmann::json::array();
    for (Eigen::Index k = 0; k < prior.hyper_mean.size(); ++k) mean.push_back(prior.hyper_mean[k]);
    nlohmann::json nv = nlohmann::json::object();
    for (std::size_t i = 0; i < prior.node_covariance.size(); ++i) nv[std::to_string(i + 1)] = matrix(prior.node_covariance[i]);
    return {{"hyper_mean", mean}, {"node_variance", nv}, {"noise_std", prior.noise_std}};
}

}  // namespace hierts
