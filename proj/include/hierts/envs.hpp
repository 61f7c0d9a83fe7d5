#pragma once

// Problem instances and reward simulation: instances drawn from the
// hierarchical generative model, Gaussian rewards, and a feature-dataset
// bandit whose priors are fitted from a labelled training split.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hierts/error.hpp"
#include "hierts/hierarchy.hpp"
#include "hierts/posterior_linear.hpp"
#include "hierts/prior.hpp"
#include "hierts/rng.hpp"

namespace hierts {

/// True parameters of every node, indexed by NodeId::index().
struct Instance {
    std::vector<Eigen::VectorXd> theta;

    [[nodiscard]] const Eigen::VectorXd& at(NodeId id) const { return theta.at(id.index()); }
    [[nodiscard]] double scalar(NodeId id) const { return theta.at(id.index())[0]; }

    [[nodiscard]] double mean_reward(NodeId action, const Eigen::VectorXd& context) const {
        return context.dot(at(action));
    }

    /// Best action for a context; ties go to the lowest action id.
    [[nodiscard]] NodeId best_action(const Hierarchy& tree, const Eigen::VectorXd& context) const {
        NodeId best = tree.actions().front();
        double best_value = mean_reward(best, context);
        for (NodeId a : tree.actions()) {
            const double v = mean_reward(a, context);
            if (v > best_value) {
                best = a;
                best_value = v;
            }
        }
        return best;
    }
};

/// Draws every node from N(parent, Sigma0_i), root from N(mu_1, Sigma0_1).
inline Instance sample_instance(const Hierarchy& tree, const LinearPrior& prior, Rng& rng) {
    Instance inst;
    inst.theta.resize(tree.size());
    for (NodeId id : tree.topological_order()) {
        const Eigen::VectorXd& center = tree.is_root(id) ? prior.hyper_mean : inst.theta[tree.parent(id).index()];
        Eigen::LLT<Eigen::MatrixXd> llt(prior.covariance(id));
        if (llt.info() != Eigen::Success) throw NumericalError("prior covariance is not positive definite");
        inst.theta[id.index()] = center + llt.matrixL() * rng.normal_vector(prior.dim());
    }
    return inst;
}

inline Instance sample_instance(const Hierarchy& tree, const ScalarPrior& prior, Rng& rng) {
    Instance inst;
    inst.theta.resize(tree.size());
    for (NodeId id : tree.topological_order()) {
        const double center = tree.is_root(id) ? prior.hyper_mean : inst.theta[tree.parent(id).index()][0];
        inst.theta[id.index()] = Eigen::VectorXd::Constant(1, center + std::sqrt(prior.variance(id)) * rng.normal());
    }
    return inst;
}

/// Gaussian reward N(x^T theta_a, noise_std^2).
inline double step(const Instance& inst, NodeId action, const Eigen::VectorXd& context, double noise_std, Rng& rng) {
    return inst.mean_reward(action, context) + noise_std * rng.normal();
}

/// The K-armed model's constant context.
inline Eigen::VectorXd unit_context() { return Eigen::VectorXd::Ones(1); }

// ---------------------------------------------------------------------------
// Feature datasets

enum class Split { Train, Test };

struct FeatureRecord {
    std::string id;
    std::string label;
    Split split = Split::Train;
    Eigen::VectorXd feature;
    NodeId leaf;
};

struct FeatureDataset {
    std::vector<FeatureRecord> records;
    std::map<std::string, NodeId> label_map;
    Eigen::Index dim = 0;

    [[nodiscard]] std::vector<const FeatureRecord*> split(Split s) const {
        std::vector<const FeatureRecord*> out;
        for (const auto& r : records) {
            if (r.split == s) out.push_back(&r);
        }
        return out;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(where + ": '" + s + "' is not a finite number");
    }
}

}  // namespace detail

/// Parses `id,label,split,f1,...,fd` rows. Every label must map to a leaf of `tree`.
inline FeatureDataset parse_feature_dataset(std::istream& in, const Hierarchy& tree,
                                            const std::map<std::string, NodeId>& label_map) {
    for (const auto& [label, leaf] : label_map) {
        if (!tree.contains(leaf) || !tree.is_leaf(leaf)) {
            throw ParseError("label_map entry '" + label + "' does not name an action node");
        }
    }
    {
        std::map<int, std::string> seen;
        for (const auto& [label, leaf] : label_map) {
            if (!seen.emplace(leaf.value, label).second) {
                throw ParseError("labels '" + seen[leaf.value] + "' and '" + label + "' map to the same leaf");
            }
        }
    }

    std::string line;
    if (!std::getline(in, line)) throw ParseError("dataset is empty");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 4 || header[0] != "id" || header[1] != "label" || header[2] != "split") {
        throw ParseError("line 1: header must be id,label,split,f1,...,fd");
    }
    FeatureDataset ds;
    ds.label_map = label_map;
    ds.dim = static_cast<Eigen::Index>(header.size() - 3);

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const std::string where = "line " + std::to_string(line_no);
        const auto cells = detail::split_csv_line(line);
        if (static_cast<Eigen::Index>(cells.size()) != ds.dim + 3) {
            throw ParseError(where + ": expected " + std::to_string(ds.dim) + " features, found " +
                             std::to_string(static_cast<long>(cells.size()) - 3));
        }
        FeatureRecord r;
        r.id = cells[0];
        r.label = cells[1];
        if (cells[2] == "train") {
            r.split = Split::Train;
        } else if (cells[2] == "test") {
            r.split = Split::Test;
        } else {
            throw ParseError(where + ": split must be 'train' or 'test'");
        }
        const auto it = label_map.find(r.label);
        if (it == label_map.end()) throw ParseError(where + ": label '" + r.label + "' is not in the hierarchy");
        r.leaf = it->second;
        r.feature.resize(ds.dim);
        for (Eigen::Index k = 0; k < ds.dim; ++k) {
            r.feature[k] = detail::parse_double(cells[static_cast<std::size_t>(k) + 3], where);
        }
        ds.records.push_back(std::move(r));
    }
    return ds;
}

inline FeatureDataset load_feature_dataset(const std::string& path, const Hierarchy& tree,
                                           const std::map<std::string, NodeId>& label_map) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    return parse_feature_dataset(in, tree, label_map);
}

inline void write_feature_dataset(std::ostream& out, const FeatureDataset& ds) {
    out << "id,label,split";
    for (Eigen::Index k = 0; k < ds.dim; ++k) out << ",f" << (k + 1);
    out << '\n';
    out.precision(17);
    for (const auto& r : ds.records) {
        out << r.id << ',' << r.label << ',' << (r.split == Split::Train ? "train" : "test");
        for (Eigen::Index k = 0; k < ds.dim; ++k) out << ',' << r.feature[k];
        out << '\n';
    }
}

/// Sample mean and (n - 1)-normalised covariance.
inline MomentsVec empirical_moments(const std::vector<const FeatureRecord*>& rows, Eigen::Index dim) {
    MomentsVec m{Eigen::VectorXd::Zero(dim), Eigen::MatrixXd::Zero(dim, dim)};
    if (rows.empty()) return m;
    for (const auto* r : rows) m.mean += r->feature;
    m.mean /= static_cast<double>(rows.size());
    if (rows.size() < 2) return m;
    for (const auto* r : rows) {
        const Eigen::VectorXd c = r->feature - m.mean;
        m.covariance.noalias() += c * c.transpose();
    }
    m.covariance /= static_cast<double>(rows.size() - 1);
    symmetrize(m.covariance);
    return m;
}

struct CovarianceFloor {
    NodeId node;
    double min_eigenvalue_before = 0.0;
    double jitter = 0.0;  ///< largest amount added to any eigenvalue
};

/// Symmetrises and lifts every eigenvalue below `floor` up to it.
inline Eigen::MatrixXd floor_covariance(const Eigen::MatrixXd& cov, double floor, CovarianceFloor& report) {
    Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    Eigen::VectorXd values = eig.eigenvalues();
    report.min_eigenvalue_before = values.minCoeff();
    report.jitter = std::max(0.0, floor - report.min_eigenvalue_before);
    if (report.jitter == 0.0) return sym;
    values = values.cwiseMax(floor);
    Eigen::MatrixXd out = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
    symmetrize(out);
    return out;
}

struct FittedModel {
    LinearPrior prior;
    Instance truth;  ///< test-split class means at leaves, train-subtree means elsewhere
    std::vector<CovarianceFloor> floors;  ///< nodes where jitter was added
};

struct FitOptions {
    double covariance_floor = 1e-6;
    bool diagonal = false;
    double noise_std = 0.5;
};

/// Root prior from all training rows, internal nodes from the training rows
/// of their subtree, actions from their own class; truth from test-class means.
inline FittedModel fit_priors_from_data(const FeatureDataset& ds, const Hierarchy& tree, FitOptions opts = {}) {
    const auto d = ds.dim;
    std::vector<std::vector<const FeatureRecord*>> train_below(tree.size());
    std::vector<std::vector<const FeatureRecord*>> test_of(tree.size());
    for (const auto& r : ds.records) {
        if (r.split == Split::Test) {
            test_of[r.leaf.index()].push_back(&r);
            continue;
        }
        for (NodeId n : tree.path_to_root(r.leaf)) train_below[n.index()].push_back(&r);
    }
    std::map<int, std::string> label_of;
    for (const auto& [label, leaf] : ds.label_map) label_of[leaf.value] = label;
    for (NodeId a : tree.actions()) {
        const auto label = label_of.count(a.value) ? label_of[a.value] : ("#" + std::to_string(a.value));
        if (train_below[a.index()].size() < 2) {
            throw ParseError("class '" + label + "' has fewer than 2 training records");
        }
        if (test_of[a.index()].empty()) throw ParseError("class '" + label + "' has no test records");
    }

    FittedModel fit;
    fit.prior.noise_std = opts.noise_std;
    fit.truth.theta.resize(tree.size());
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const NodeId id = NodeId::from_index(i);
        auto m = empirical_moments(train_below[i], d);
        if (opts.diagonal) m.covariance = Eigen::MatrixXd(m.covariance.diagonal().asDiagonal());
        CovarianceFloor report{id, 0.0, 0.0};
        fit.prior.node_covariance.push_back(floor_covariance(m.covariance, opts.covariance_floor, report));
        if (report.jitter > 0.0) fit.floors.push_back(report);
        if (tree.is_root(id)) fit.prior.hyper_mean = m.mean;
        fit.truth.theta[i] = tree.is_leaf(id) ? empirical_moments(test_of[i], d).mean : m.mean;
    }
    return fit;
}

/// Synthetic Gaussian-cluster dataset: `groups` super-classes of
/// `classes_per_group` classes each, organised as root -> group -> class.
struct ClusterDatasetSpec {
    int groups = 5;
    int classes_per_group = 5;
    Eigen::Index dim = 10;
    int train_per_class = 40;
    int test_per_class = 20;
    double group_scale = 1.0;
    double class_scale = 0.5;
    double noise_scale = 1.0;
};

struct LabelledTree {
    Hierarchy tree;
    std::map<std::string, NodeId> label_map;
};

inline LabelledTree cluster_tree(const ClusterDatasetSpec& spec) {
    std::map<int, int> parents;
    for (int g = 0; g < spec.groups; ++g) parents[2 + g] = 1;
    LabelledTree out;
    int next = 2 + spec.groups;
    for (int g = 0; g < spec.groups; ++g) {
        for (int c = 0; c < spec.classes_per_group; ++c) {
            out.label_map["c" + std::to_string(g * spec.classes_per_group + c)] = NodeId(next);
            parents[next++] = 2 + g;
        }
    }
    out.tree = Hierarchy::from_parents(parents);
    return out;
}

inline FeatureDataset generate_cluster_dataset(const ClusterDatasetSpec& spec, const LabelledTree& labelled, Rng& rng) {
    FeatureDataset ds;
    ds.dim = spec.dim;
    ds.label_map = labelled.label_map;
    std::vector<Eigen::VectorXd> group_center(static_cast<std::size_t>(spec.groups));
    for (auto& c : group_center) c = spec.group_scale * rng.normal_vector(spec.dim);
    int row = 0;
    for (int g = 0; g < spec.groups; ++g) {
        for (int c = 0; c < spec.classes_per_group; ++c) {
            const std::string label = "c" + std::to_string(g * spec.classes_per_group + c);
            const Eigen::VectorXd center =
                group_center[static_cast<std::size_t>(g)] + spec.class_scale * rng.normal_vector(spec.dim);
            const NodeId leaf = labelled.label_map.at(label);
            for (int k = 0; k < spec.train_per_class + spec.test_per_class; ++k) {
                FeatureRecord r;
                r.id = std::to_string(row++);
                r.label = label;
                r.split = k < spec.train_per_class ? Split::Train : Split::Test;
                r.feature = center + spec.noise_scale * rng.normal_vector(spec.dim);
                r.leaf = leaf;
                ds.records.push_back(std::move(r));
            }
        }
    }
    return ds;
}

}  // namespace hierts
