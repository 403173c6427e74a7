// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical classification head: one linear classifier per non-leaf node
// over that node's children, and a single class-agnostic box regressor held
// at the root. Also the weighted sum of the training loss terms.

#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgzsd/autodiff.hpp"
#include "fgzsd/data_model.hpp"
#include "fgzsd/metrics.hpp"
#include "fgzsd/numerics.hpp"
#include "fgzsd/rng.hpp"
#include "fgzsd/taxonomy.hpp"

namespace fgzsd {

struct HierHead {
    std::size_t feature_dim = 0;
    /// Indexed by node id; leaves hold empty layers.
    std::vector<DenseLayer> classifiers;
    /// 4 x feature_dim box deltas (dx, dy, dw, dh) relative to the proposal.
    DenseLayer regressor;

    static HierHead init(const TaxonomyTree& tree, std::size_t feature_dim, Rng& rng, double scale = 0.1);

    std::vector<Matrix*> parameters();
    std::vector<Matrix*> classifier_parameters(NodeId node);
    std::vector<Matrix*> regressor_parameters();
};

enum class Decoding { Greedy, Posterior };
Decoding parse_decoding(const std::string& s);
const char* to_string(Decoding d);

struct PathStep {
    NodeId node = 0;
    NodeId child = 0;
    double prob = 0;  // conditional probability of child given node
};

struct PathPrediction {
    std::vector<PathStep> steps;  // greedy path, root first
    NodeId leaf = 0;              // greedy leaf
    double score = 0;             // product of the greedy path's conditionals
    Vector leaf_posteriors;       // aligned with tree.leaves()
    NodeId best_leaf = 0;         // argmax of leaf_posteriors (first on ties)
};

/// Softmax at every non-leaf node; a leaf's posterior is the product of the
/// conditionals along its path. With `allowed`, each softmax only runs over
/// children that have an allowed leaf below them, so the posteriors form a
/// distribution over the allowed leaves.
PathPrediction head_forward(const HierHead& head, const TaxonomyTree& tree, std::span<const double> x,
                            const std::set<NodeId>* allowed = nullptr);

/// Sum over the leaf's path of the cross-entropy at each node.
double hier_ce_loss(const HierHead& head, const TaxonomyTree& tree, std::span<const double> x, NodeId leaf);

struct LossWeights {
    double avss = 0.1;         // λ1
    double adversarial = 0.5;  // λ2
    double hicl = 0.01;        // λ3

    void validate() const;
    nlohmann::json to_json() const;
    static LossWeights from_json(const nlohmann::json& j);
};

struct LossComponents {
    double rpn = 0;
    double reg = 0;
    /// Head cross-entropy, added at unit weight. Zero when the head is trained
    /// through the contrastive term alone.
    double cls = 0;
    double avss = 0;
    double disc = 0;
    double gen = 0;
    double hicl = 0;

    nlohmann::json to_json() const;
};

/// rpn + reg + cls + λ1·avss + λ2·(disc + gen) + λ3·hicl. NonFinite on any
/// non-finite component.
double total_loss(const LossComponents& c, const LossWeights& w);

/// Box after applying (dx, dy, dw, dh) to a proposal.
BBox apply_deltas(const BBox& proposal, std::span<const double> deltas);
/// Deltas that take `proposal` onto `target`.
Vector box_deltas(const BBox& proposal, const BBox& target);

namespace ad {
/// Children logits of one node, k x 1.
Var node_logits(Tape& tape, const HierHead& head, NodeId node, Var x);
Var hier_ce_loss(Tape& tape, const HierHead& head, const TaxonomyTree& tree, Var x, NodeId leaf);
/// 4 x 1 deltas.
Var regress(Tape& tape, const HierHead& head, Var x);

struct LossVars {
    Var rpn, reg, cls, avss, disc, gen, hicl;
};
Var total_loss(const LossVars& c, const LossWeights& w);
}  // namespace ad

struct Proposal {
    std::string image_id;
    Vector feature;  // ROI feature
    BBox box;
};

/// One detection per proposal: decoded leaf (by name), its posterior, and the
/// proposal refined by the root regressor.
std::vector<Detection> predict(const HierHead& head, const TaxonomyTree& tree, std::span<const Proposal> proposals,
                               Decoding decoding = Decoding::Greedy, const std::set<NodeId>* allowed = nullptr);

/// Depth-1 tree over the same leaves, for the flat-classifier comparison.
TaxonomyTree flatten(const TaxonomyTree& tree);

}  // namespace fgzsd
