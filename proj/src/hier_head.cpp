// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/hier_head.hpp"

#include <algorithm>
#include <cmath>

#include "fgzsd/error.hpp"

namespace fgzsd {

HierHead HierHead::init(const TaxonomyTree& tree, std::size_t feature_dim, Rng& rng, double scale) {
    if (feature_dim == 0) fail(ErrorCode::InvalidArgument, "feature dim must be positive");
    HierHead h;
    h.feature_dim = feature_dim;
    h.classifiers.resize(tree.node_count());
    auto fill = [&](Matrix& m) {
        for (double& v : m.data()) v = rng.uniform(-scale, scale);
    };
    for (const auto& n : tree.nodes()) {
        if (n.children.empty()) continue;
        DenseLayer l{Matrix(n.children.size(), feature_dim), Matrix(n.children.size(), 1)};
        fill(l.weight);
        fill(l.bias);
        h.classifiers[n.id] = std::move(l);
    }
    h.regressor = {Matrix(4, feature_dim), Matrix(4, 1)};
    fill(h.regressor.weight);
    return h;
}

std::vector<Matrix*> HierHead::parameters() {
    std::vector<Matrix*> out;
    for (auto& c : classifiers)
        if (!c.weight.empty()) {
            out.push_back(&c.weight);
            out.push_back(&c.bias);
        }
    out.push_back(&regressor.weight);
    out.push_back(&regressor.bias);
    return out;
}

std::vector<Matrix*> HierHead::classifier_parameters(NodeId node) {
    if (node >= classifiers.size() || classifiers[node].weight.empty())
        fail(ErrorCode::InvalidArgument, "node " + std::to_string(node) + " has no classifier");
    return {&classifiers[node].weight, &classifiers[node].bias};
}

std::vector<Matrix*> HierHead::regressor_parameters() { return {&regressor.weight, &regressor.bias}; }

Decoding parse_decoding(const std::string& s) {
    if (s == "greedy") return Decoding::Greedy;
    if (s == "posterior") return Decoding::Posterior;
    fail(ErrorCode::ConfigError, "decoding must be greedy or posterior, got '" + s + "'");
}

const char* to_string(Decoding d) { return d == Decoding::Greedy ? "greedy" : "posterior"; }

namespace {

void check_head(const HierHead& head, const TaxonomyTree& tree, std::size_t x_dim) {
    if (head.classifiers.size() != tree.node_count()) fail(ErrorCode::DimMismatch, "head does not match the tree");
    if (x_dim != head.feature_dim)
        fail(ErrorCode::DimMismatch, "feature has dim " + std::to_string(x_dim) + ", head expects " +
                                         std::to_string(head.feature_dim));
}

Vector logits_of(const DenseLayer& l, std::span<const double> x) {
    Vector z(l.weight.rows());
    for (std::size_t r = 0; r < z.size(); ++r) {
        double acc = l.bias(r, 0);
        for (std::size_t c = 0; c < x.size(); ++c) acc += l.weight(r, c) * x[c];
        z[r] = acc;
    }
    return z;
}

/// Softmax over the entries flagged in `on`; the rest get zero.
Vector masked_softmax(const Vector& z, const std::vector<bool>& on) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < z.size(); ++i)
        if (on[i]) mx = std::max(mx, z[i]);
    Vector p(z.size(), 0.0);
    double total = 0;
    for (std::size_t i = 0; i < z.size(); ++i)
        if (on[i]) total += p[i] = std::exp(z[i] - mx);
    for (double& v : p) v /= total;
    return p;
}

}  // namespace

PathPrediction head_forward(const HierHead& head, const TaxonomyTree& tree, std::span<const double> x,
                            const std::set<NodeId>* allowed) {
    check_head(head, tree, x.size());
    // Which nodes still lead to an allowed leaf.
    std::vector<bool> open(tree.node_count(), allowed == nullptr);
    if (allowed) {
        for (NodeId leaf : *allowed) {
            if (leaf >= tree.node_count() || !tree.is_leaf(leaf))
                fail(ErrorCode::UnknownClass, "allowed set holds a non-leaf node");
            for (NodeId n : tree.path(leaf)) open[n] = true;
        }
        if (allowed->empty()) fail(ErrorCode::EmptyInput, "empty allowed leaf set");
    }

    // Node ids are preorder, so parents are visited before their children.
    std::vector<Vector> cond(tree.node_count());
    Vector reach(tree.node_count(), 0.0);
    reach[tree.root()] = 1.0;
    for (const auto& n : tree.nodes()) {
        if (n.children.empty() || !open[n.id]) continue;
        std::vector<bool> on(n.children.size());
        for (std::size_t k = 0; k < on.size(); ++k) on[k] = open[n.children[k]];
        cond[n.id] = masked_softmax(logits_of(head.classifiers[n.id], x), on);
        for (std::size_t k = 0; k < on.size(); ++k) reach[n.children[k]] = reach[n.id] * cond[n.id][k];
    }

    PathPrediction out;
    NodeId at = tree.root();
    double score = 1.0;
    while (!tree.is_leaf(at)) {
        const auto& p = cond[at];
        const auto k = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        const NodeId child = tree.node(at).children[k];
        out.steps.push_back({at, child, p[k]});
        score *= p[k];
        at = child;
    }
    out.leaf = at;
    out.score = score;
    for (NodeId leaf : tree.leaves()) out.leaf_posteriors.push_back(reach[leaf]);
    const auto best = std::max_element(out.leaf_posteriors.begin(), out.leaf_posteriors.end());
    out.best_leaf = tree.leaves()[static_cast<std::size_t>(best - out.leaf_posteriors.begin())];
    return out;
}

double hier_ce_loss(const HierHead& head, const TaxonomyTree& tree, std::span<const double> x, NodeId leaf) {
    check_head(head, tree, x.size());
    if (leaf >= tree.node_count() || !tree.is_leaf(leaf)) fail(ErrorCode::UnknownLeaf, "label is not a leaf");
    const auto path = tree.path(leaf);
    double loss = 0;
    for (std::size_t l = 0; l + 1 < path.size(); ++l) {
        const auto z = logits_of(head.classifiers[path[l]], x);
        const auto& kids = tree.node(path[l]).children;
        const auto k = static_cast<std::size_t>(std::find(kids.begin(), kids.end(), path[l + 1]) - kids.begin());
        loss += logsumexp(z) - z[k];
    }
    return loss;
}

void LossWeights::validate() const {
    for (double v : {avss, adversarial, hicl})
        if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorCode::ConfigError, "loss weights must be finite and >= 0");
}

nlohmann::json LossWeights::to_json() const { return {{"avss", avss}, {"adversarial", adversarial}, {"hicl", hicl}}; }

LossWeights LossWeights::from_json(const nlohmann::json& j) {
    LossWeights w;
    w.avss = j.value("avss", w.avss);
    w.adversarial = j.value("adversarial", w.adversarial);
    w.hicl = j.value("hicl", w.hicl);
    w.validate();
    return w;
}

nlohmann::json LossComponents::to_json() const {
    return {{"rpn", rpn}, {"reg", reg}, {"cls", cls}, {"avss", avss}, {"disc", disc}, {"gen", gen}, {"hicl", hicl}};
}

double total_loss(const LossComponents& c, const LossWeights& w) {
    for (double v : {c.rpn, c.reg, c.cls, c.avss, c.disc, c.gen, c.hicl})
        if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "non-finite loss component");
    return c.rpn + c.reg + c.cls + w.avss * c.avss + w.adversarial * (c.disc + c.gen) + w.hicl * c.hicl;
}

namespace {
constexpr double kMaxLogScale = 10.0;
}

BBox apply_deltas(const BBox& p, std::span<const double> d) {
    if (d.size() != 4) fail(ErrorCode::DimMismatch, "box deltas have 4 entries");
    const double cx = (p.x_min + p.x_max) / 2 + d[0] * p.width();
    const double cy = (p.y_min + p.y_max) / 2 + d[1] * p.height();
    const double w = p.width() * std::exp(std::clamp(d[2], -kMaxLogScale, kMaxLogScale));
    const double h = p.height() * std::exp(std::clamp(d[3], -kMaxLogScale, kMaxLogScale));
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

Vector box_deltas(const BBox& p, const BBox& t) {
    if (!p.valid() || !t.valid()) fail(ErrorCode::InvalidArgument, "box deltas need valid boxes");
    return {((t.x_min + t.x_max) - (p.x_min + p.x_max)) / (2 * p.width()),
            ((t.y_min + t.y_max) - (p.y_min + p.y_max)) / (2 * p.height()), std::log(t.width() / p.width()),
            std::log(t.height() / p.height())};
}

namespace ad {

Var node_logits(Tape& tape, const HierHead& head, NodeId node, Var x) {
    if (node >= head.classifiers.size() || head.classifiers[node].weight.empty())
        fail(ErrorCode::InvalidArgument, "node has no classifier");
    if (x.rows() != head.feature_dim || x.cols() != 1) fail(ErrorCode::DimMismatch, "feature dim differs from head");
    const auto& l = head.classifiers[node];
    return add_colvec(matmul(tape.param(l.weight), x), tape.param(l.bias));
}

Var hier_ce_loss(Tape& tape, const HierHead& head, const TaxonomyTree& tree, Var x, NodeId leaf) {
    if (head.classifiers.size() != tree.node_count()) fail(ErrorCode::DimMismatch, "head does not match the tree");
    if (leaf >= tree.node_count() || !tree.is_leaf(leaf)) fail(ErrorCode::UnknownLeaf, "label is not a leaf");
    const auto path = tree.path(leaf);
    Var loss = tape.constant(Matrix::scalar(0.0));
    for (std::size_t l = 0; l + 1 < path.size(); ++l) {
        Var z = node_logits(tape, head, path[l], x);
        const auto& kids = tree.node(path[l]).children;
        const auto k = static_cast<std::size_t>(std::find(kids.begin(), kids.end(), path[l + 1]) - kids.begin());
        loss = add(loss, sub(logsumexp(z), element(z, k, 0)));
    }
    return loss;
}

Var regress(Tape& tape, const HierHead& head, Var x) {
    if (x.rows() != head.feature_dim || x.cols() != 1) fail(ErrorCode::DimMismatch, "feature dim differs from head");
    return add_colvec(matmul(tape.param(head.regressor.weight), x), tape.param(head.regressor.bias));
}

Var total_loss(const LossVars& c, const LossWeights& w) {
    Var out = add(add(c.rpn, c.reg), c.cls);
    out = add(out, scale(c.avss, w.avss));
    out = add(out, scale(add(c.disc, c.gen), w.adversarial));
    return add(out, scale(c.hicl, w.hicl));
}

}  // namespace ad

std::vector<Detection> predict(const HierHead& head, const TaxonomyTree& tree, std::span<const Proposal> proposals,
                               Decoding decoding, const std::set<NodeId>* allowed) {
    std::vector<Detection> out;
    out.reserve(proposals.size());
    for (const auto& p : proposals) {
        const auto pred = head_forward(head, tree, p.feature, allowed);
        const NodeId leaf = decoding == Decoding::Greedy ? pred.leaf : pred.best_leaf;
        const double score =
            decoding == Decoding::Greedy ? pred.score : pred.leaf_posteriors[tree.leaf_index(pred.best_leaf)];
        const auto deltas = logits_of(head.regressor, p.feature);
        out.push_back({p.image_id, apply_deltas(p.box, deltas), tree.node(leaf).name, score});
    }
    return out;
}

TaxonomyTree flatten(const TaxonomyTree& tree) {
    std::vector<TaxonomyRow> rows;
    for (NodeId leaf : tree.leaves()) rows.push_back({tree.node(leaf).name, {}});
    return TaxonomyTree::build(rows);
}

}  // namespace fgzsd
