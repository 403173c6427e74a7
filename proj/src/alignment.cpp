// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/alignment.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "fgzsd/checkpoint.hpp"
#include "fgzsd/error.hpp"
#include "fgzsd/numerics.hpp"
#include "fgzsd/optim.hpp"

namespace fgzsd {

AttentionMode parse_attention_mode(const std::string& s) {
    if (s == "literal") return AttentionMode::Literal;
    if (s == "single") return AttentionMode::Single;
    fail(ErrorCode::ConfigError, "attention must be 'literal' or 'single', got '" + s + "'");
}

const char* to_string(AttentionMode m) { return m == AttentionMode::Literal ? "literal" : "single"; }

void EncoderConfig::validate() const {
    if (dim < 1) fail(ErrorCode::ConfigError, "encoder dim must be >= 1");
    if (regions < 1) fail(ErrorCode::ConfigError, "region count must be >= 1");
    if (!(xi > 0.0)) fail(ErrorCode::ConfigError, "xi must be > 0");
}

nlohmann::json EncoderConfig::to_json() const {
    return {{"dim", dim}, {"regions", regions}, {"xi", xi}, {"attention", to_string(attention)}};
}

namespace ad {

AttentionVars word_region_attention(Var words, Var regions, AttentionMode mode) {
    if (words.rows() != regions.rows()) fail(ErrorCode::DimMismatch, "word and region vectors differ in dimension");
    Var weights = softmax_rows(matmul(transpose(words), regions));
    Var mix = mode == AttentionMode::Literal ? softmax_rows(weights) : weights;
    Var context = matmul(regions, transpose(mix));
    return {weights, context};
}

Var word_relevance(Var words, Var regions, AttentionMode mode) {
    return cosine_cols(word_region_attention(words, regions, mode).context, words);
}

Var image_text_similarity(Var words, Var regions, double xi, AttentionMode mode) {
    if (!(xi > 0.0)) fail(ErrorCode::InvalidArgument, "xi must be > 0");
    return scale(logsumexp(scale(word_relevance(words, regions, mode), xi)), 1.0 / xi);
}

Var avss_loss(std::span<const PairVars> batch, double xi, AttentionMode mode) {
    const std::size_t n = batch.size();
    if (n < 2) fail(ErrorCode::BatchTooSmall, "avss loss needs at least two pairs");
    // sim(k, i) = Sim(V_k, E_i): image k against text i.
    std::vector<Var> rows;
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<Var> cells;
        for (std::size_t i = 0; i < n; ++i)
            cells.push_back(image_text_similarity(batch[i].words, batch[k].regions, xi, mode));
        rows.push_back(concat_cols(cells));
    }
    Var sim = concat_rows(rows);
    std::vector<Var> diag_cells;
    for (std::size_t i = 0; i < n; ++i) diag_cells.push_back(element(sim, i, i));
    Var matched = sum(concat_cols(diag_cells));
    // Text i normalised over images k (column-wise), image i over texts (row-wise).
    Var over_images = sum(logsumexp_rows(transpose(sim)));
    Var over_texts = sum(logsumexp_rows(sim));
    Var text_to_image = sub(over_images, matched);
    Var image_to_text = sub(over_texts, matched);
    return scale(add(text_to_image, image_to_text), 0.5);
}

}  // namespace ad

Attention word_region_attention(const Matrix& words, const Matrix& regions, AttentionMode mode) {
    ad::Tape tape;
    auto a = ad::word_region_attention(tape.constant(words), tape.constant(regions), mode);
    return {a.weights.value(), a.context.value()};
}

double image_text_similarity(const EncodedPair& pair, double xi, AttentionMode mode) {
    ad::Tape tape;
    return ad::image_text_similarity(tape.constant(pair.words), tape.constant(pair.regions), xi, mode).value().item();
}

double avss_loss(std::span<const EncodedPair> batch, double xi, AttentionMode mode) {
    ad::Tape tape;
    std::vector<ad::PairVars> vars;
    for (const auto& p : batch) vars.push_back({tape.constant(p.words), tape.constant(p.regions)});
    return ad::avss_loss(vars, xi, mode).value().item();
}

ToyEncoders::ToyEncoders(EncoderConfig config, std::size_t vocab, std::size_t feature_dim, std::uint64_t seed)
    : config_(config), seed_(seed) {
    config_.validate();
    if (vocab == 0 || feature_dim == 0) fail(ErrorCode::ConfigError, "vocabulary and feature dims must be positive");
    Rng rng(seed);
    text_.embedding = Matrix(config_.dim, vocab);
    for (double& x : text_.embedding.data()) x = rng.uniform(-0.1, 0.1);
    image_.weight = Matrix(config_.dim, feature_dim);
    image_.bias = Matrix(config_.dim, 1);
    for (double& x : image_.weight.data()) x = rng.uniform(-0.1, 0.1);
    for (double& x : image_.bias.data()) x = rng.uniform(-0.1, 0.1);
}

ad::Var ToyEncoders::words(ad::Tape& tape, std::span<const std::size_t> tokens) const {
    if (tokens.empty()) fail(ErrorCode::EmptyInput, "text has no tokens");
    for (std::size_t t : tokens)
        if (t >= vocab_size()) fail(ErrorCode::InvalidArgument, "token id out of vocabulary");
    return ad::gather_cols(tape.param(text_.embedding), tokens);
}

ad::Var ToyEncoders::sentence(ad::Tape& tape, std::span<const std::size_t> tokens) const {
    return ad::mean_cols(words(tape, tokens));
}

ad::Var ToyEncoders::regions(ad::Tape& tape, const Matrix& region_features) const {
    if (region_features.rows() != feature_dim()) fail(ErrorCode::DimMismatch, "region feature dimension");
    return ad::add_colvec(ad::matmul(tape.param(image_.weight), tape.constant(region_features)), tape.param(image_.bias));
}

std::pair<Matrix, Vector> ToyEncoders::encode_text(std::span<const std::size_t> tokens) const {
    ad::Tape tape;
    ad::Var e = words(tape, tokens);
    // Recording a node may reallocate the tape, so copy values only after.
    ad::Var s = ad::mean_cols(e);
    return {e.value(), s.value().col(0)};
}

Matrix ToyEncoders::encode_image(const Matrix& region_features) const {
    ad::Tape tape;
    return regions(tape, region_features).value();
}

EncodedPair ToyEncoders::encode(std::span<const std::size_t> tokens, const Matrix& region_features) const {
    auto [e, s] = encode_text(tokens);
    return {std::move(e), std::move(s), encode_image(region_features)};
}

std::vector<Matrix*> ToyEncoders::parameters() { return {&text_.embedding, &image_.weight, &image_.bias}; }

void ToyEncoders::save(const std::filesystem::path& base) const {
    Checkpoint c;
    c.tensors = {{"text.embedding", text_.embedding}, {"image.weight", image_.weight}, {"image.bias", image_.bias}};
    c.meta = {{"kind", "toy_encoders"}, {"seed", seed_}, {"config", config_.to_json()}};
    write_checkpoint(base, c);
}

ToyEncoders ToyEncoders::load(const std::filesystem::path& base) {
    Checkpoint c = read_checkpoint(base);
    ToyEncoders enc;
    const auto& cfg = c.meta.at("config");
    enc.config_.dim = cfg.at("dim").get<std::size_t>();
    enc.config_.regions = cfg.at("regions").get<std::size_t>();
    enc.config_.xi = cfg.at("xi").get<double>();
    enc.config_.attention = parse_attention_mode(cfg.at("attention").get<std::string>());
    enc.seed_ = c.meta.at("seed").get<std::uint64_t>();
    enc.text_.embedding = c.at("text.embedding");
    enc.image_.weight = c.at("image.weight");
    enc.image_.bias = c.at("image.bias");
    return enc;
}

std::vector<double> train_alignment(ToyEncoders& enc, std::span<const AlignmentSample> data, std::size_t steps,
                                    std::size_t batch, double lr, Rng& rng) {
    if (data.size() < 2 || batch < 2) fail(ErrorCode::BatchTooSmall, "alignment training needs batches of >= 2 pairs");
    std::set<std::vector<std::size_t>> distinct;
    for (const auto& s : data) distinct.insert(s.tokens);
    if (distinct.size() < 2) fail(ErrorCode::BatchTooSmall, "alignment training needs at least two distinct texts");
    batch = std::min(batch, distinct.size());
    Adam opt(lr);
    auto params = enc.parameters();
    std::vector<double> losses;
    std::vector<std::size_t> order(data.size());
    for (std::size_t step = 0; step < steps; ++step) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        ad::Tape tape;
        // A text already in the batch would be a false negative for its twin.
        std::vector<ad::PairVars> pairs;
        std::set<std::vector<std::size_t>> taken;
        for (std::size_t i = 0; i < order.size() && pairs.size() < batch; ++i) {
            const auto& s = data[order[i]];
            if (!taken.insert(s.tokens).second) continue;
            pairs.push_back({enc.words(tape, s.tokens), enc.regions(tape, s.region_features)});
        }
        ad::Var loss = ad::avss_loss(pairs, enc.config().xi, enc.config().attention);
        losses.push_back(loss.value().item());
        tape.backward(loss);
        opt.step(tape, params);
    }
    return losses;
}

}  // namespace fgzsd
