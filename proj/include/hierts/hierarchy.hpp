#pragma once

// Tree structure shared by every other component: parents, children, node
// heights, leaf (action) set and root-to-node paths.
//
// Nodes are numbered 1..|V| with the root at 1. Internally everything is
// stored in 0-based vectors; NodeId is the only public handle.

#include <algorithm>
#include <compare>
#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "hierts/error.hpp"

namespace hierts {

/// 1-based node handle. The root is always NodeId{1}.
struct NodeId {
    int value = 0;

    constexpr NodeId() = default;
    constexpr explicit NodeId(int v) : value(v) {}

    [[nodiscard]] constexpr std::size_t index() const { return static_cast<std::size_t>(value - 1); }
    static constexpr NodeId from_index(std::size_t i) { return NodeId(static_cast<int>(i) + 1); }

    friend constexpr auto operator<=>(NodeId, NodeId) = default;
    friend std::ostream& operator<<(std::ostream& os, NodeId id) { return os << id.value; }
};

inline constexpr NodeId kRoot{1};

class Hierarchy {
public:
    /// Builds and validates a tree from child -> parent links. Every node in
    /// 2..|V| must appear exactly once as a key; the root (1) must not.
    static Hierarchy from_parents(const std::map<int, int>& parent_of) {
        if (parent_of.empty()) {
            throw HierarchyError("tree needs at least one non-root node");
        }
        if (parent_of.count(1) != 0) {
            throw HierarchyError("root (node 1) must not have a parent");
        }
        const int n = static_cast<int>(parent_of.size()) + 1;
        int expected = 2;
        for (const auto& [child, parent] : parent_of) {
            if (child != expected) {
                throw HierarchyError("node ids must be contiguous 2.." + std::to_string(n) + "; missing node " +
                                     std::to_string(expected));
            }
            if (parent < 1 || parent > n) {
                throw HierarchyError("node " + std::to_string(child) + " has unknown parent " + std::to_string(parent));
            }
            if (parent == child) {
                throw HierarchyError("cycle detected: node " + std::to_string(child) + " is its own parent");
            }
            ++expected;
        }

        Hierarchy tree;
        tree.parent_.assign(n, -1);
        tree.children_.assign(n, {});
        for (const auto& [child, parent] : parent_of) {
            tree.parent_[child - 1] = parent - 1;
            tree.children_[parent - 1].push_back(NodeId(child));
        }
        tree.finalize();
        return tree;
    }

    /// Balanced b-ary tree of height h, numbered breadth-first from the root.
    static Hierarchy balanced(int branching, int height) {
        if (branching < 2) throw HierarchyError("branching factor must be >= 2");
        if (height < 1) throw HierarchyError("height must be >= 1");
        std::map<int, int> parent_of;
        int level_start = 1;
        int level_size = 1;
        int next = 2;
        for (int level = 0; level < height; ++level) {
            for (int k = 0; k < level_size; ++k) {
                const int parent = level_start + k;
                for (int c = 0; c < branching; ++c) parent_of[next++] = parent;
            }
            level_start += level_size;
            level_size *= branching;
        }
        return from_parents(parent_of);
    }

    [[nodiscard]] std::size_t size() const { return parent_.size(); }
    [[nodiscard]] int tree_height() const { return height_[0]; }
    [[nodiscard]] int branching_factor() const { return branching_; }
    [[nodiscard]] std::size_t num_actions() const { return leaves_.size(); }
    [[nodiscard]] const std::vector<NodeId>& actions() const { return leaves_; }

    [[nodiscard]] bool contains(NodeId id) const { return id.value >= 1 && id.index() < size(); }
    [[nodiscard]] bool is_leaf(NodeId id) const { return children(id).empty(); }
    [[nodiscard]] bool is_root(NodeId id) const { return id == kRoot; }

    [[nodiscard]] NodeId parent(NodeId id) const {
        check(id);
        if (is_root(id)) throw InputError("root has no parent");
        return NodeId::from_index(static_cast<std::size_t>(parent_[id.index()]));
    }

    [[nodiscard]] const std::vector<NodeId>& children(NodeId id) const {
        check(id);
        return children_[id.index()];
    }

    [[nodiscard]] int height(NodeId id) const {
        check(id);
        return height_[id.index()];
    }

    /// Position of a leaf within actions(), 0-based.
    [[nodiscard]] std::size_t action_index(NodeId leaf) const {
        check(leaf);
        const int pos = action_pos_[leaf.index()];
        if (pos < 0) throw InputError("node " + std::to_string(leaf.value) + " is not an action node");
        return static_cast<std::size_t>(pos);
    }

    /// Nodes ordered so that every parent precedes its children (root first,
    /// then descending height; ties by id).
    [[nodiscard]] const std::vector<NodeId>& topological_order() const { return topo_; }

    /// Root-first path ending at `id`.
    [[nodiscard]] std::vector<NodeId> path_to_root(NodeId id) const {
        check(id);
        std::vector<NodeId> path;
        for (int i = static_cast<int>(id.index()); i >= 0; i = parent_[i]) path.push_back(NodeId::from_index(i));
        std::reverse(path.begin(), path.end());
        return path;
    }

    [[nodiscard]] int depth(NodeId id) const {
        check(id);
        int d = 0;
        for (int i = parent_[id.index()]; i >= 0; i = parent_[i]) ++d;
        return d;
    }

    [[nodiscard]] NodeId lowest_common_ancestor(NodeId a, NodeId b) const {
        auto pa = path_to_root(a);
        auto pb = path_to_root(b);
        std::size_t k = 0;
        while (k < pa.size() && k < pb.size() && pa[k] == pb[k]) ++k;
        return pa[k - 1];
    }

    /// Child -> parent links, the inverse of from_parents().
    [[nodiscard]] std::map<int, int> parent_map() const {
        std::map<int, int> out;
        for (std::size_t i = 1; i < size(); ++i) out[static_cast<int>(i) + 1] = parent_[i] + 1;
        return out;
    }

private:
    void check(NodeId id) const {
        if (!contains(id)) throw InputError("unknown node id " + std::to_string(id.value));
    }

    void finalize() {
        const std::size_t n = parent_.size();

        // Reachability from the root doubles as cycle and connectivity check.
        std::vector<char> seen(n, 0);
        std::vector<std::size_t> stack{0};
        seen[0] = 1;
        std::size_t reached = 1;
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            for (NodeId c : children_[u]) {
                if (seen[c.index()]) throw HierarchyError("cycle detected at node " + std::to_string(c.value));
                seen[c.index()] = 1;
                ++reached;
                stack.push_back(c.index());
            }
        }
        if (reached != n) {
            for (std::size_t i = 0; i < n; ++i) {
                if (!seen[i]) {
                    throw HierarchyError("node " + std::to_string(i + 1) +
                                         " is not connected to the root (cycle or disconnected)");
                }
            }
        }

        branching_ = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = children_[i].size();
            if (k == 1) {
                throw HierarchyError("internal node " + std::to_string(i + 1) + " has exactly one child");
            }
            branching_ = std::max(branching_, static_cast<int>(k));
        }

        // Post-order heights: h_i = 1 + max child height, leaves 0.
        height_.assign(n, 0);
        std::vector<std::size_t> order;
        order.reserve(n);
        stack = {0};
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            order.push_back(u);
            for (NodeId c : children_[u]) stack.push_back(c.index());
        }
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            for (NodeId c : children_[*it]) height_[*it] = std::max(height_[*it], height_[c.index()] + 1);
        }

        action_pos_.assign(n, -1);
        leaves_.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (children_[i].empty()) {
                action_pos_[i] = static_cast<int>(leaves_.size());
                leaves_.push_back(NodeId::from_index(i));
            }
        }

        // Root first, then by decreasing height: parents always have a
        // strictly larger height than their children.
        topo_.clear();
        for (std::size_t i = 0; i < n; ++i) topo_.push_back(NodeId::from_index(i));
        std::stable_sort(topo_.begin(), topo_.end(),
                         [&](NodeId a, NodeId b) { return height_[a.index()] > height_[b.index()]; });
    }

    std::vector<int> parent_;
    std::vector<std::vector<NodeId>> children_;
    std::vector<int> height_;
    std::vector<int> action_pos_;
    std::vector<NodeId> leaves_;
    std::vector<NodeId> topo_;
    int branching_ = 0;
};

}  // namespace hierts
