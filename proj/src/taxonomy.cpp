// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/taxonomy.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>

#include "fgzsd/error.hpp"
#include "fgzsd/numerics.hpp"

namespace fgzsd {

namespace {

struct Trie {
    std::map<std::string, std::unique_ptr<Trie>> children;
};

void emit(const Trie& t, const std::string& name, std::size_t level, std::optional<NodeId> parent,
          std::vector<TaxonomyNode>& out) {
    const NodeId id = out.size();
    out.push_back({id, level, parent, {}, name});
    if (parent) out[*parent].children.push_back(id);
    for (const auto& [child_name, child] : t.children) emit(*child, child_name, level + 1, id, out);
}

}  // namespace

TaxonomyTree TaxonomyTree::build(const std::vector<TaxonomyRow>& rows) {
    if (rows.empty()) fail(ErrorCode::EmptyInput, "taxonomy has no rows");
    const std::size_t n_anc = rows.front().ancestors.size();
    Trie root;
    std::set<std::string> seen_leaves;
    for (const auto& r : rows) {
        if (r.ancestors.size() != n_anc) {
            fail(ErrorCode::RaggedDepth, "leaf '" + r.leaf + "' has " + std::to_string(r.ancestors.size()) +
                                             " ancestors, expected " + std::to_string(n_anc));
        }
        if (r.leaf.empty()) fail(ErrorCode::InvalidArgument, "empty leaf name");
        if (!seen_leaves.insert(r.leaf).second) fail(ErrorCode::DuplicateLeaf, "leaf '" + r.leaf + "' appears twice");
        Trie* cur = &root;
        for (const auto& a : r.ancestors) {
            auto& slot = cur->children[a];
            if (!slot) slot = std::make_unique<Trie>();
            cur = slot.get();
        }
        cur->children[r.leaf] = std::make_unique<Trie>();
    }

    TaxonomyTree tree;
    tree.depth_ = n_anc + 1;
    emit(root, "root", 0, std::nullopt, tree.nodes_);
    tree.leaf_pos_.assign(tree.nodes_.size(), SIZE_MAX);
    for (const auto& n : tree.nodes_) {
        if (n.level == tree.depth_) {
            tree.leaf_pos_[n.id] = tree.leaves_.size();
            tree.leaves_.push_back(n.id);
            tree.leaf_by_name_[n.name] = n.id;
        } else if (n.children.empty()) {
            fail(ErrorCode::RaggedDepth, "non-leaf node '" + n.name + "' has no children");
        }
    }
    return tree;
}

TaxonomyTree TaxonomyTree::from_json(const nlohmann::json& j) {
    try {
        const auto& nodes = j.at("nodes");
        std::vector<std::string> names;
        std::vector<std::optional<std::size_t>> parents;
        std::vector<std::size_t> levels;
        for (const auto& n : nodes) {
            const auto id = n.at("id").get<std::size_t>();
            if (id != names.size()) fail(ErrorCode::ParseError, "taxonomy node ids must be consecutive from 0");
            names.push_back(n.at("name").get<std::string>());
            levels.push_back(n.at("level").get<std::size_t>());
            if (n.at("parent").is_null()) {
                parents.emplace_back();
            } else {
                const auto p = n.at("parent").get<std::size_t>();
                if (p >= id) fail(ErrorCode::ParseError, "taxonomy parent must precede child");
                parents.emplace_back(p);
            }
        }
        const auto depth = j.at("levels").get<std::size_t>() - 1;
        std::vector<TaxonomyRow> rows;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (levels[i] != depth) continue;
            TaxonomyRow row{names[i], {}};
            for (auto p = parents[i]; p && parents[*p]; p = parents[*p]) row.ancestors.push_back(names[*p]);
            std::reverse(row.ancestors.begin(), row.ancestors.end());
            rows.push_back(std::move(row));
        }
        TaxonomyTree tree = build(rows);
        if (tree.node_count() != names.size()) fail(ErrorCode::ParseError, "taxonomy JSON has dangling nodes");
        return tree;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, e.what());
    }
}

std::optional<NodeId> TaxonomyTree::find_leaf(const std::string& name) const {
    auto it = leaf_by_name_.find(name);
    if (it == leaf_by_name_.end()) return std::nullopt;
    return it->second;
}

NodeId TaxonomyTree::leaf(const std::string& name) const {
    auto id = find_leaf(name);
    if (!id) fail(ErrorCode::UnknownLeaf, "no leaf named '" + name + "'");
    return *id;
}

std::size_t TaxonomyTree::leaf_index(NodeId leaf) const {
    if (leaf >= leaf_pos_.size() || leaf_pos_[leaf] == SIZE_MAX) fail(ErrorCode::UnknownLeaf, "node is not a leaf");
    return leaf_pos_[leaf];
}

std::vector<NodeId> TaxonomyTree::nodes_at_level(std::size_t level) const {
    std::vector<NodeId> out;
    for (const auto& n : nodes_)
        if (n.level == level) out.push_back(n.id);
    return out;
}

std::vector<std::size_t> TaxonomyTree::level_counts() const {
    std::vector<std::size_t> counts(depth_ + 1, 0);
    for (const auto& n : nodes_) ++counts[n.level];
    return counts;
}

std::vector<NodeId> TaxonomyTree::path(NodeId leaf) const {
    if (leaf >= nodes_.size() || !is_leaf(leaf)) fail(ErrorCode::UnknownLeaf, "path() needs a leaf node");
    std::vector<NodeId> out(depth_ + 1);
    std::optional<NodeId> cur = leaf;
    for (std::size_t l = depth_ + 1; l-- > 0;) {
        out[l] = *cur;
        cur = nodes_[*cur].parent;
    }
    return out;
}

std::vector<NodeId> TaxonomyTree::leaf_descendants(NodeId id) const {
    std::vector<NodeId> out;
    std::vector<NodeId> stack{id};
    while (!stack.empty()) {
        NodeId n = stack.back();
        stack.pop_back();
        if (is_leaf(n)) {
            out.push_back(n);
            continue;
        }
        const auto& ch = nodes_.at(n).children;
        for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
    }
    return out;
}

NodeId TaxonomyTree::lowest_common_ancestor(NodeId a, NodeId b) const {
    while (nodes_.at(a).level > nodes_.at(b).level) a = *nodes_[a].parent;
    while (nodes_.at(b).level > nodes_.at(a).level) b = *nodes_[b].parent;
    while (a != b) {
        a = *nodes_[a].parent;
        b = *nodes_[b].parent;
    }
    return a;
}

nlohmann::json TaxonomyTree::to_json() const {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : nodes_) {
        nodes.push_back({{"id", n.id},
                         {"level", n.level},
                         {"parent", n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr)},
                         {"name", n.name}});
    }
    return {{"levels", depth_ + 1}, {"nodes", std::move(nodes)}};
}

namespace {
Vector normalized(Vector v) {
    const double n = norm2(v);
    if (n < kZeroNorm) fail(ErrorCode::ZeroNorm, "semantic vector has zero norm");
    for (double& x : v) x /= n;
    return v;
}
}  // namespace

NodeSemantics aggregate_semantics(const TaxonomyTree& tree, const std::map<std::string, Vector>& leaf_vectors) {
    std::vector<Vector> raw(tree.node_count());
    std::size_t dim = 0;
    for (NodeId leaf : tree.leaves()) {
        const auto& name = tree.node(leaf).name;
        auto it = leaf_vectors.find(name);
        if (it == leaf_vectors.end()) fail(ErrorCode::MissingLeafVector, "no semantic vector for leaf '" + name + "'");
        if (dim == 0) dim = it->second.size();
        if (it->second.size() != dim || dim == 0) fail(ErrorCode::DimMismatch, "leaf vectors differ in dimension");
        raw[leaf] = it->second;
    }
    NodeSemantics sem;
    sem.vectors.resize(tree.node_count());
    for (const auto& n : tree.nodes()) {
        if (tree.is_leaf(n.id)) {
            sem.vectors[n.id] = normalized(raw[n.id]);
            continue;
        }
        const auto leaves = tree.leaf_descendants(n.id);
        Vector mean(dim, 0.0);
        for (NodeId l : leaves)
            for (std::size_t k = 0; k < dim; ++k) mean[k] += raw[l][k];
        for (double& x : mean) x /= static_cast<double>(leaves.size());
        sem.vectors[n.id] = normalized(std::move(mean));
    }
    return sem;
}

double node_similarity(const NodeSemantics& sem, NodeId a, NodeId b) {
    return std::exp(-cosine(sem.vectors.at(a), sem.vectors.at(b)));
}

Matrix log_similarity_table(const NodeSemantics& sem) {
    const std::size_t n = sem.vectors.size();
    Matrix t(n, n);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a; b < n; ++b) t(a, b) = t(b, a) = -cosine(sem.vectors[a], sem.vectors[b]);
    return t;
}

}  // namespace fgzsd
