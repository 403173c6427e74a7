// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical contrastive loss over taxonomy-node prototypes, with the
// prototypes kept as momentum caches outside the gradient tape.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fgzsd/autodiff.hpp"
#include "fgzsd/matrix.hpp"
#include "fgzsd/taxonomy.hpp"

namespace fgzsd {

/// Per-level weight φ(l) for levels l = 0 (root) .. L (leaf).
enum class LevelWeight { Constant, Identity, Square };
/// How the denominator enumerates nodes: each node once, or once per
/// (leaf, level) pair so shared ancestors repeat.
enum class NegativeEnumeration { Unique, PerLeaf };

LevelWeight parse_level_weight(const std::string& s);
const char* to_string(LevelWeight w);
NegativeEnumeration parse_negative_enumeration(const std::string& s);
const char* to_string(NegativeEnumeration n);

double level_weight(LevelWeight w, std::size_t level);

struct HiclConfig {
    double tau = 0.5;
    LevelWeight phi = LevelWeight::Identity;
    NegativeEnumeration negatives = NegativeEnumeration::Unique;

    void validate(std::size_t depth) const;
};

class MomentumCacheBank {
public:
    MomentumCacheBank() = default;
    /// prototypes: dim x node_count, one column per node id.
    MomentumCacheBank(Matrix prototypes, double momentum, bool renormalize = true);
    /// A bank that has already taken `step` updates, as read back from storage.
    static MomentumCacheBank restore(Matrix prototypes, double momentum, bool renormalize, std::uint64_t step);

    std::size_t dim() const { return protos_.rows(); }
    std::size_t node_count() const { return protos_.cols(); }
    double momentum() const { return m_; }
    bool renormalize() const { return renormalize_; }
    std::uint64_t step() const { return step_; }
    const Matrix& prototypes() const { return protos_; }
    Vector prototype(NodeId n) const { return protos_.col(n); }

    /// θ ← mθ + (1−m)x on every node of the leaf's path, then (optionally)
    /// rescaled to unit norm. Returns the touched node ids.
    std::vector<NodeId> update(const TaxonomyTree& tree, std::span<const double> x, NodeId leaf);

    void save(const std::filesystem::path& base) const;
    static MomentumCacheBank load(const std::filesystem::path& base);

private:
    Matrix protos_;
    double m_ = 0.99;
    bool renormalize_ = true;
    std::uint64_t step_ = 0;
};

/// θ_n = normalize(P · W_n). Without a projector the dims must match.
MomentumCacheBank init_caches(const TaxonomyTree& tree, const NodeSemantics& sem,
                              const std::optional<Matrix>& projector, double momentum, bool renormalize = true);

struct HiclTerm {
    double value = 0;
    Vector grad_x;
};

/// log_sim(a, b) = log s(N_a, N_b); see log_similarity_table().
HiclTerm hicl_term(std::span<const double> x, NodeId leaf, const MomentumCacheBank& bank, const TaxonomyTree& tree,
                   const Matrix& log_sim, const HiclConfig& cfg);

struct HiclItem {
    Vector x;
    NodeId leaf = 0;
};

double hicl_loss(std::span<const HiclItem> batch, const MomentumCacheBank& bank, const TaxonomyTree& tree,
                 const Matrix& log_sim, const HiclConfig& cfg);

namespace ad {

/// x is a dim x 1 feature on the tape; prototypes enter as constants.
Var hicl_term(Tape& tape, Var x, NodeId leaf, const MomentumCacheBank& bank, const TaxonomyTree& tree,
              const Matrix& log_sim, const HiclConfig& cfg);
/// Mean of hicl_term over the batch.
Var hicl_loss(Tape& tape, std::span<const Var> xs, std::span<const NodeId> leaves, const MomentumCacheBank& bank,
              const TaxonomyTree& tree, const Matrix& log_sim, const HiclConfig& cfg);

}  // namespace ad

}  // namespace fgzsd
