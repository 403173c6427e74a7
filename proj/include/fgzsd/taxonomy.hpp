// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgzsd/matrix.hpp"

namespace fgzsd {

using NodeId = std::size_t;

struct TaxonomyNode {
    NodeId id = 0;
    std::size_t level = 0;
    std::optional<NodeId> parent;
    std::vector<NodeId> children;
    std::string name;
};

/// One leaf class and its ancestors from level 1 down to level L-1. The root
/// (level 0) is implicit.
struct TaxonomyRow {
    std::string leaf;
    std::vector<std::string> ancestors;
};

/// Class hierarchy with a single root at level 0 and every leaf at level L.
/// Nodes are numbered in preorder with children sorted by name, i.e.
/// lexicographic order of their root paths. Immutable once built.
class TaxonomyTree {
public:
    static TaxonomyTree build(const std::vector<TaxonomyRow>& rows);
    static TaxonomyTree from_json(const nlohmann::json& j);

    /// Index of the leaf level (root is 0).
    std::size_t depth() const noexcept { return depth_; }
    std::size_t node_count() const noexcept { return nodes_.size(); }
    const TaxonomyNode& node(NodeId id) const { return nodes_.at(id); }
    const std::vector<TaxonomyNode>& nodes() const noexcept { return nodes_; }
    NodeId root() const noexcept { return 0; }
    bool is_leaf(NodeId id) const { return node(id).level == depth_; }

    /// Leaf class ids in node order.
    const std::vector<NodeId>& leaves() const noexcept { return leaves_; }
    std::optional<NodeId> find_leaf(const std::string& name) const;
    NodeId leaf(const std::string& name) const;  // throws UnknownLeaf
    /// Position of a leaf within leaves().
    std::size_t leaf_index(NodeId leaf) const;

    std::vector<NodeId> nodes_at_level(std::size_t level) const;
    std::vector<std::size_t> level_counts() const;
    /// Root-to-leaf node list of length depth()+1.
    std::vector<NodeId> path(NodeId leaf) const;
    std::vector<NodeId> leaf_descendants(NodeId id) const;
    NodeId lowest_common_ancestor(NodeId a, NodeId b) const;

    /// {"levels": depth()+1, "nodes": [{id, level, parent, name}]}; root parent is null.
    nlohmann::json to_json() const;

private:
    std::size_t depth_ = 0;
    std::vector<TaxonomyNode> nodes_;
    std::vector<NodeId> leaves_;
    std::map<std::string, NodeId> leaf_by_name_;
    std::vector<std::size_t> leaf_pos_;
};

/// Per-node semantic vectors indexed by NodeId, all of one dimension.
struct NodeSemantics {
    std::vector<Vector> vectors;
    std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

/// Leaf vectors are L2-normalised inputs; every other node gets the
/// normalised mean of its leaf descendants' raw vectors.
NodeSemantics aggregate_semantics(const TaxonomyTree& tree, const std::map<std::string, Vector>& leaf_vectors);

/// exp(-cos(W_a, W_b)); lies in [1/e, e].
double node_similarity(const NodeSemantics& sem, NodeId a, NodeId b);

/// Full node-pair table of log node_similarity, i.e. -cos(W_a, W_b). Row a, column b.
Matrix log_similarity_table(const NodeSemantics& sem);

}  // namespace fgzsd
