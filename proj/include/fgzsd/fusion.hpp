// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Text-conditioned generator built from multi-level semantics-aware blocks,
// a text-conditioned discriminator, and the hinge adversarial losses.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgzsd/alignment.hpp"
#include "fgzsd/autodiff.hpp"
#include "fgzsd/matrix.hpp"
#include "fgzsd/numerics.hpp"
#include "fgzsd/rng.hpp"
#include "fgzsd/taxonomy.hpp"

namespace fgzsd {

/// C x (H*W) row-major per channel: data(c, h*W + w).
struct FeatureMap {
    std::size_t height = 0;
    std::size_t width = 0;
    Matrix data;

    FeatureMap() = default;
    FeatureMap(Matrix data, std::size_t height, std::size_t width);

    std::size_t channels() const { return data.rows(); }
    double at(std::size_t c, std::size_t h, std::size_t w) const { return data(c, h * width + w); }
    /// Spatial mean per channel.
    Vector pooled() const;
};

/// Parameters of one affine fusion step (sentence part, then word part).
struct FusionParams {
    MlpParams gamma_s, theta_s;  // sentence -> C
    MlpParams gamma_w, theta_w;  // word -> C
    /// D x C map from channel space to the text space, used to build region
    /// vectors for word attention. Empty when C == D.
    Matrix region_proj;

    std::size_t channels() const { return gamma_s.out_dim(); }
    void collect(std::vector<Matrix*>& out);
};

struct MsaBlockParams {
    FusionParams fuse1, fuse2;
    void collect(std::vector<Matrix*>& out);
};

struct GanConfig {
    std::size_t noise_dim = 100;
    std::size_t blocks = 7;
    std::size_t channels = 32;
    std::size_t base_height = 2;
    std::size_t base_width = 2;
    std::size_t out_channels = 3;
    std::size_t text_dim = 16;
    std::size_t mlp_hidden = 32;
    std::size_t disc_hidden = 64;
    AttentionMode attention = AttentionMode::Literal;
    /// First-moment decay of both Adam optimizers in train_gan.
    double adam_beta1 = 0.5;

    void validate() const;
    std::size_t out_height() const { return base_height << blocks; }
    std::size_t out_width() const { return base_width << blocks; }
    nlohmann::json to_json() const;
    static GanConfig from_json(const nlohmann::json& j);
};

struct GeneratorParams {
    DenseLayer input;  // noise -> C * H0 * W0
    std::vector<MsaBlockParams> blocks;
    DenseLayer output;  // 1x1 channel projection C -> out_channels

    static GeneratorParams init(const GanConfig& cfg, Rng& rng);
    std::vector<Matrix*> parameters();
};

struct DiscriminatorParams {
    MlpParams mlp;  // flattened map ++ sentence -> hidden -> hidden -> 1

    static DiscriminatorParams init(const GanConfig& cfg, Rng& rng);
    std::vector<Matrix*> parameters();
};

/// FusionParams with every MLP weight and bias zero; the region projection,
/// if needed, is the truncated identity.
FusionParams zero_fusion(std::size_t text_dim, std::size_t hidden, std::size_t channels);
FusionParams random_fusion(std::size_t text_dim, std::size_t hidden, std::size_t channels, Rng& rng,
                           double scale = 0.3);

FeatureMap sentence_affine(const FusionParams& p, std::span<const double> sentence, const FeatureMap& f);
/// Word relevances come from attending over `attend` (defaults to f itself).
FeatureMap word_affine(const FusionParams& p, const Matrix& words, const FeatureMap& f,
                       AttentionMode mode = AttentionMode::Literal, const FeatureMap* attend = nullptr);
FeatureMap msa_block(const MsaBlockParams& p, const Matrix& words, std::span<const double> sentence,
                     const FeatureMap& f, AttentionMode mode = AttentionMode::Literal);
FeatureMap generate(const GanConfig& cfg, const GeneratorParams& p, std::span<const double> noise,
                    const Matrix& words, std::span<const double> sentence);
double discriminate(const DiscriminatorParams& p, const FeatureMap& x, std::span<const double> sentence);

struct GanLosses {
    double discriminator = 0;
    double generator = 0;
};

/// Hinge losses from per-sample discriminator scores.
GanLosses gan_losses(std::span<const double> real, std::span<const double> fake, std::span<const double> mismatch);

namespace ad {

struct MapVar {
    Var data;
    std::size_t height = 0;
    std::size_t width = 0;
};

MapVar sentence_affine(Tape& tape, const FusionParams& p, Var sentence, MapVar f);
MapVar word_affine(Tape& tape, const FusionParams& p, Var words, MapVar f, AttentionMode mode, Var attend);
MapVar msa_block(Tape& tape, const MsaBlockParams& p, Var words, Var sentence, MapVar f, AttentionMode mode);
MapVar generate(Tape& tape, const GanConfig& cfg, const GeneratorParams& p, Var noise, Var words, Var sentence);
/// Returns a 1x1 score.
Var discriminate(Tape& tape, const DiscriminatorParams& p, MapVar x, Var sentence);

/// Each argument is a 1 x n row of scores. Returns {L_D, L_G}.
std::pair<Var, Var> gan_losses(Var real, Var fake, Var mismatch);

}  // namespace ad

/// Text conditioning for one class.
struct ClassText {
    Matrix words;
    Vector sentence;
};

struct GanSample {
    FeatureMap real;
    std::string class_id;
};

struct GanStepLog {
    double discriminator = 0;
    double generator = 0;
};

/// Alternating hinge training, one D step per G step, equal learning rates.
/// The mismatched text for each real sample is drawn uniformly from the other
/// classes present in the batch (or any other class if the batch has one).
std::vector<GanStepLog> train_gan(const GanConfig& cfg, GeneratorParams& gen, DiscriminatorParams& disc,
                                  std::span<const GanSample> data, const std::map<std::string, ClassText>& texts,
                                  std::size_t steps, std::size_t batch, double lr, Rng& rng);

struct SyntheticSample {
    FeatureMap map;
    std::string class_id;
    NodeId leaf = 0;
    std::vector<NodeId> path;  // root .. leaf
};

struct SyntheticSet {
    std::uint64_t seed = 0;
    std::vector<SyntheticSample> samples;

    void save(const std::filesystem::path& base) const;
    static SyntheticSet load(const std::filesystem::path& base, const TaxonomyTree& tree);
};

/// `count` samples per class, in the order given. Leaves are looked up by name.
SyntheticSet synthesize_unseen(const GanConfig& cfg, const GeneratorParams& gen, const TaxonomyTree& tree,
                               const std::vector<std::string>& classes, const std::map<std::string, ClassText>& texts,
                               std::size_t count, std::uint64_t seed);

}  // namespace fgzsd
