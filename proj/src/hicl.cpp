// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/hicl.hpp"

#include <cmath>

#include "fgzsd/checkpoint.hpp"
#include "fgzsd/error.hpp"
#include "fgzsd/numerics.hpp"

namespace fgzsd {

LevelWeight parse_level_weight(const std::string& s) {
    if (s == "constant") return LevelWeight::Constant;
    if (s == "identity") return LevelWeight::Identity;
    if (s == "square") return LevelWeight::Square;
    fail(ErrorCode::ConfigError, "level weight must be constant, identity or square, got '" + s + "'");
}

const char* to_string(LevelWeight w) {
    switch (w) {
        case LevelWeight::Constant: return "constant";
        case LevelWeight::Identity: return "identity";
        case LevelWeight::Square: return "square";
    }
    return "?";
}

NegativeEnumeration parse_negative_enumeration(const std::string& s) {
    if (s == "unique") return NegativeEnumeration::Unique;
    if (s == "per_leaf") return NegativeEnumeration::PerLeaf;
    fail(ErrorCode::ConfigError, "negative enumeration must be unique or per_leaf, got '" + s + "'");
}

const char* to_string(NegativeEnumeration n) { return n == NegativeEnumeration::Unique ? "unique" : "per_leaf"; }

double level_weight(LevelWeight w, std::size_t level) {
    const double l = static_cast<double>(level);
    switch (w) {
        case LevelWeight::Constant: return 1.0;
        case LevelWeight::Identity: return l;
        case LevelWeight::Square: return l * l;
    }
    return 0.0;
}

void HiclConfig::validate(std::size_t depth) const {
    if (!(tau > 0.0)) fail(ErrorCode::ConfigError, "tau must be > 0");
    double total = 0;
    for (std::size_t l = 0; l <= depth; ++l) total += level_weight(phi, l);
    if (!(total > 0.0)) fail(ErrorCode::ConfigError, "level weights sum to zero");
}

MomentumCacheBank::MomentumCacheBank(Matrix prototypes, double momentum, bool renormalize)
    : protos_(std::move(prototypes)), m_(momentum), renormalize_(renormalize) {
    if (!(m_ >= 0.0 && m_ < 1.0)) fail(ErrorCode::ConfigError, "momentum must lie in [0, 1)");
    if (protos_.empty()) fail(ErrorCode::EmptyInput, "empty prototype bank");
}

std::vector<NodeId> MomentumCacheBank::update(const TaxonomyTree& tree, std::span<const double> x, NodeId leaf) {
    if (leaf >= tree.node_count() || !tree.is_leaf(leaf)) fail(ErrorCode::UnknownClass, "update target is not a leaf");
    if (x.size() != dim()) fail(ErrorCode::DimMismatch, "feature and prototype dims differ");
    for (double v : x)
        if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "non-finite feature in momentum update");
    auto path = tree.path(leaf);
    for (NodeId n : path) {
        Vector theta(dim());
        for (std::size_t k = 0; k < dim(); ++k) theta[k] = m_ * protos_(k, n) + (1.0 - m_) * x[k];
        if (renormalize_) {
            const double norm = norm2(theta);
            if (norm < kZeroNorm) fail(ErrorCode::ZeroNorm, "prototype collapsed to zero");
            for (double& v : theta) v /= norm;
        }
        protos_.set_col(n, theta);
    }
    ++step_;
    return path;
}

void MomentumCacheBank::save(const std::filesystem::path& base) const {
    Checkpoint c;
    c.tensors = {{"prototypes", protos_}};
    nlohmann::json offsets = nlohmann::json::object();
    for (std::size_t n = 0; n < node_count(); ++n) offsets[std::to_string(n)] = n * dim();
    c.meta = {{"kind", "momentum_caches"}, {"nodes", offsets}, {"m", m_},
              {"step", step_},             {"dim", dim()},      {"renormalize", renormalize_}};
    write_checkpoint(base, c);
}

MomentumCacheBank MomentumCacheBank::restore(Matrix prototypes, double momentum, bool renormalize,
                                             std::uint64_t step) {
    MomentumCacheBank bank(std::move(prototypes), momentum, renormalize);
    bank.step_ = step;
    return bank;
}

MomentumCacheBank MomentumCacheBank::load(const std::filesystem::path& base) {
    Checkpoint c = read_checkpoint(base);
    return restore(c.at("prototypes"), c.meta.at("m").get<double>(), c.meta.value("renormalize", true),
                   c.meta.at("step").get<std::uint64_t>());
}

MomentumCacheBank init_caches(const TaxonomyTree& tree, const NodeSemantics& sem, const std::optional<Matrix>& projector,
                              double momentum, bool renormalize) {
    if (sem.vectors.size() != tree.node_count()) fail(ErrorCode::DimMismatch, "semantics do not cover every node");
    const std::size_t in = sem.dim();
    if (projector && projector->cols() != in) fail(ErrorCode::DimMismatch, "projector input dim differs from semantics");
    const std::size_t out = projector ? projector->rows() : in;
    Matrix protos(out, tree.node_count());
    for (NodeId n = 0; n < tree.node_count(); ++n) {
        Vector w = sem.vectors[n];
        if (projector) w = matmul(*projector, Matrix::column(w)).col(0);
        const double norm = norm2(w);
        if (norm < kZeroNorm) fail(ErrorCode::ZeroNorm, "projected semantic vector is zero");
        for (double& v : w) v /= norm;
        protos.set_col(n, w);
    }
    return MomentumCacheBank(std::move(protos), momentum, renormalize);
}

namespace ad {

Var hicl_term(Tape& tape, Var x, NodeId leaf, const MomentumCacheBank& bank, const TaxonomyTree& tree,
              const Matrix& log_sim, const HiclConfig& cfg) {
    if (leaf >= tree.node_count() || !tree.is_leaf(leaf)) fail(ErrorCode::UnknownClass, "hicl target is not a leaf");
    if (x.rows() != bank.dim() || x.cols() != 1) fail(ErrorCode::DimMismatch, "feature and prototype dims differ");
    if (bank.node_count() != tree.node_count()) fail(ErrorCode::DimMismatch, "bank does not match the tree");
    const std::size_t n = tree.node_count();
    if (log_sim.rows() != n || log_sim.cols() != n) fail(ErrorCode::DimMismatch, "similarity table does not match the tree");
    cfg.validate(tree.depth());

    // 1 x n logits x·M/τ over every node.
    Var logits = scale(matmul(transpose(x), tape.constant(bank.prototypes())), 1.0 / cfg.tau);
    Matrix multiplicity(1, n);
    if (cfg.negatives == NegativeEnumeration::PerLeaf)
        for (NodeId j = 0; j < n; ++j)
            multiplicity(0, j) = std::log(static_cast<double>(tree.leaf_descendants(j).size()));

    const auto path = tree.path(leaf);
    Var total = tape.constant(Matrix::scalar(0.0));
    double weight_sum = 0;
    for (std::size_t level = 0; level < path.size(); ++level) {
        const double w = level_weight(cfg.phi, level);
        weight_sum += w;
        if (w == 0.0) continue;
        const NodeId a = path[level];
        Matrix offset(1, n);
        for (NodeId j = 0; j < n; ++j) offset(0, j) = log_sim(a, j) + multiplicity(0, j);
        Var f = sub(element(logits, 0, a), logsumexp(add(logits, tape.constant(offset))));
        total = add(total, scale(f, w));
    }
    return scale(total, -1.0 / weight_sum);
}

Var hicl_loss(Tape& tape, std::span<const Var> xs, std::span<const NodeId> leaves, const MomentumCacheBank& bank,
              const TaxonomyTree& tree, const Matrix& log_sim, const HiclConfig& cfg) {
    if (xs.empty()) fail(ErrorCode::EmptyInput, "empty hicl batch");
    if (xs.size() != leaves.size()) fail(ErrorCode::DimMismatch, "features and labels differ in count");
    std::vector<Var> terms;
    for (std::size_t i = 0; i < xs.size(); ++i) terms.push_back(hicl_term(tape, xs[i], leaves[i], bank, tree, log_sim, cfg));
    return mean(concat_cols(terms));
}

}  // namespace ad

HiclTerm hicl_term(std::span<const double> x, NodeId leaf, const MomentumCacheBank& bank, const TaxonomyTree& tree,
                   const Matrix& log_sim, const HiclConfig& cfg) {
    ad::Tape tape;
    ad::Var xv = tape.input(Matrix::column(x));
    ad::Var t = ad::hicl_term(tape, xv, leaf, bank, tree, log_sim, cfg);
    const double value = t.value().item();
    tape.backward(t);
    return {value, tape.grad(xv).col(0)};
}

double hicl_loss(std::span<const HiclItem> batch, const MomentumCacheBank& bank, const TaxonomyTree& tree,
                 const Matrix& log_sim, const HiclConfig& cfg) {
    ad::Tape tape;
    std::vector<ad::Var> xs;
    std::vector<NodeId> leaves;
    for (const auto& item : batch) {
        xs.push_back(tape.constant(Matrix::column(item.x)));
        leaves.push_back(item.leaf);
    }
    return ad::hicl_loss(tape, xs, leaves, bank, tree, log_sim, cfg).value().item();
}

}  // namespace fgzsd
