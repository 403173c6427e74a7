// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Attention-based visual-semantic similarity between a text (word vectors e,
// D x N_text) and an image (region vectors v, D x N_img), and the symmetric
// batch cross-entropy ("avss") loss built on it.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgzsd/autodiff.hpp"
#include "fgzsd/matrix.hpp"
#include "fgzsd/rng.hpp"

namespace fgzsd {

/// How region context vectors weight the regions. `Literal` applies a second
/// row softmax to the already-normalised attention S; `Single` uses S directly.
enum class AttentionMode { Literal, Single };

AttentionMode parse_attention_mode(const std::string& s);
const char* to_string(AttentionMode m);

struct EncoderConfig {
    std::size_t dim = 16;
    std::size_t regions = 289;
    double xi = 5.0;
    AttentionMode attention = AttentionMode::Literal;

    void validate() const;
    nlohmann::json to_json() const;
};

struct EncodedPair {
    Matrix words;     // D x N_text
    Vector sentence;  // D
    Matrix regions;   // D x N_img
};

struct Attention {
    Matrix weights;  // S: N_text x N_img, rows sum to 1
    Matrix context;  // r: D x N_text
};

Attention word_region_attention(const Matrix& words, const Matrix& regions,
                                AttentionMode mode = AttentionMode::Literal);

/// (1/xi) log Σ_i exp(xi · cos(r_i, e_i)).
double image_text_similarity(const EncodedPair& pair, double xi, AttentionMode mode = AttentionMode::Literal);

/// Sum over the batch of the text->image and image->text cross-entropies, halved.
double avss_loss(std::span<const EncodedPair> batch, double xi, AttentionMode mode = AttentionMode::Literal);

namespace ad {

struct AttentionVars {
    Var weights;
    Var context;
};

AttentionVars word_region_attention(Var words, Var regions, AttentionMode mode);
/// Per-word relevance R(r_i, e_i) as a 1 x N_text row.
Var word_relevance(Var words, Var regions, AttentionMode mode);
Var image_text_similarity(Var words, Var regions, double xi, AttentionMode mode);

struct PairVars {
    Var words;
    Var regions;
};

Var avss_loss(std::span<const PairVars> batch, double xi, AttentionMode mode);

}  // namespace ad

/// Linear word embedding; the sentence vector is the mean word vector.
struct TextEncoder {
    Matrix embedding;  // D x vocab
};

/// Linear map from raw region features to the shared space.
struct ImageEncoder {
    Matrix weight;  // D x feature_dim
    Matrix bias;    // D x 1
};

/// Desk-scale stand-in for the sequence/CNN encoders: anything producing
/// (e, s) for a text and v for an image plugs into the losses above.
class ToyEncoders {
public:
    ToyEncoders() = default;
    ToyEncoders(EncoderConfig config, std::size_t vocab, std::size_t feature_dim, std::uint64_t seed);

    const EncoderConfig& config() const noexcept { return config_; }
    std::size_t vocab_size() const noexcept { return text_.embedding.cols(); }
    std::size_t feature_dim() const noexcept { return image_.weight.cols(); }

    /// Returns (e, s).
    std::pair<Matrix, Vector> encode_text(std::span<const std::size_t> tokens) const;
    /// region_features is feature_dim x N_img.
    Matrix encode_image(const Matrix& region_features) const;
    EncodedPair encode(std::span<const std::size_t> tokens, const Matrix& region_features) const;

    /// Tape-bound versions; parameters register through Tape::param().
    ad::Var words(ad::Tape& tape, std::span<const std::size_t> tokens) const;
    ad::Var sentence(ad::Tape& tape, std::span<const std::size_t> tokens) const;
    ad::Var regions(ad::Tape& tape, const Matrix& region_features) const;

    std::vector<Matrix*> parameters();

    void save(const std::filesystem::path& base) const;
    static ToyEncoders load(const std::filesystem::path& base);

private:
    EncoderConfig config_;
    std::uint64_t seed_ = 0;
    TextEncoder text_;
    ImageEncoder image_;
};

struct AlignmentSample {
    std::vector<std::size_t> tokens;
    Matrix region_features;  // feature_dim x N_img
};

/// Adam on avss_loss over mini-batches of up to `batch` samples drawn without
/// replacement per step, skipping samples whose text is already in the batch.
/// Returns the loss before each step.
std::vector<double> train_alignment(ToyEncoders& enc, std::span<const AlignmentSample> data, std::size_t steps,
                                    std::size_t batch, double lr, Rng& rng);

}  // namespace fgzsd
