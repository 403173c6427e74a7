// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "fgzsd/alignment.hpp"
#include "fgzsd/error.hpp"
#include "fgzsd/numerics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fgzsd;

TEST_CASE("attention matches the loop oracle in both modes") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 2 + rng.below(5), nt = 1 + rng.below(6), ni = 1 + rng.below(9);
        Matrix e = test::random_matrix(rng, d, nt, 1.5);
        Matrix v = test::random_matrix(rng, d, ni, 1.5);
        for (bool literal : {true, false}) {
            auto mode = literal ? AttentionMode::Literal : AttentionMode::Single;
            auto got = word_region_attention(e, v, mode);
            auto want = oracle::attention(e, v, literal);
            REQUIRE(got.weights.rows() == nt);
            REQUIRE(got.weights.cols() == ni);
            REQUIRE(got.context.rows() == d);
            REQUIRE(got.context.cols() == nt);
            for (std::size_t i = 0; i < nt; ++i) {
                double row = 0;
                for (std::size_t j = 0; j < ni; ++j) {
                    CHECK(std::abs(got.weights(i, j) - want.weights[i][j]) < 1e-12);
                    row += got.weights(i, j);
                }
                CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
                for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(got.context(k, i) - want.ctx[i][k]) < 1e-12);
            }
            EncodedPair p{e, {}, v};
            CHECK(std::abs(image_text_similarity(p, 5.0, mode) - oracle::similarity(e, v, 5.0, literal)) < 1e-12);
        }
    }
}

TEST_CASE("literal and single attention genuinely differ") {
    Matrix e{{3.0, -1.0}, {0.5, 2.0}};
    Matrix v{{1.0, -2.0, 0.3}, {0.0, 1.0, -1.0}};
    auto a = word_region_attention(e, v, AttentionMode::Literal);
    auto b = word_region_attention(e, v, AttentionMode::Single);
    CHECK(max_abs_diff(a.weights, b.weights) == 0.0);
    CHECK(max_abs_diff(a.context, b.context) > 1e-3);
}

TEST_CASE("single region: context equals that region, similarity is pooled cosine") {
    Matrix e{{1.0, 0.0}, {0.0, 1.0}};
    Matrix v{{2.0}, {2.0}};
    auto a = word_region_attention(e, v);
    CHECK(a.context(0, 0) == doctest::Approx(2.0));
    CHECK(a.context(1, 1) == doctest::Approx(2.0));
    const double c = 1.0 / std::sqrt(2.0);
    const double want = std::log(2.0 * std::exp(5.0 * c)) / 5.0;
    CHECK(image_text_similarity({e, {}, v}, 5.0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("similarity tends to the max relevance as xi grows") {
    Rng rng(3);
    Matrix e = test::random_matrix(rng, 6, 5, 1.0);
    Matrix v = test::random_matrix(rng, 6, 7, 1.0);
    auto ctx = word_region_attention(e, v).context;
    double best = -2;
    for (std::size_t i = 0; i < e.cols(); ++i) best = std::max(best, cosine(ctx.col(i), e.col(i)));
    double prev_gap = INFINITY;
    for (double xi : {5.0, 50.0, 500.0}) {
        const double gap = image_text_similarity({e, {}, v}, xi) - best;
        CHECK(gap >= 0.0);
        CHECK(gap < std::log(5.0) / xi + 1e-12);
        CHECK(gap < prev_gap);
        prev_gap = gap;
    }
}

TEST_CASE("avss loss matches the oracle and survives huge inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + rng.below(4), d = 3 + rng.below(3);
        std::vector<EncodedPair> batch;
        std::vector<Matrix> words, regions;
        for (std::size_t i = 0; i < n; ++i) {
            words.push_back(test::random_matrix(rng, d, 1 + rng.below(4), 1.0));
            regions.push_back(test::random_matrix(rng, d, 2 + rng.below(5), 1.0));
            batch.push_back({words.back(), {}, regions.back()});
        }
        for (bool literal : {true, false}) {
            auto mode = literal ? AttentionMode::Literal : AttentionMode::Single;
            const double got = avss_loss(batch, 5.0, mode);
            CHECK(std::abs(got - oracle::avss(words, regions, 5.0, literal)) < 1e-10);
            CHECK(got > 0.0);
        }
        for (auto& p : batch) {
            p.words = 1e6 * p.words;
            p.regions = 1e6 * p.regions;
        }
        CHECK(std::isfinite(avss_loss(batch, 5.0)));
    }
}

TEST_CASE("similarity closed forms") {
    Matrix e{{1.0}, {2.0}};
    Matrix v{{0.3, -1.0}, {0.7, 2.0}};
    auto ctx = word_region_attention(e, v).context;
    CHECK(image_text_similarity({e, {}, v}, 5.0) == doctest::Approx(cosine(ctx.col(0), e.col(0))).epsilon(1e-14));

    // Identical words give identical relevances c, so Sim = c + log(N)/xi.
    Matrix e3{{1.0, 1.0, 1.0}, {2.0, 2.0, 2.0}};
    const double c = cosine(ctx.col(0), e.col(0));
    CHECK(image_text_similarity({e3, {}, v}, 5.0) == doctest::Approx(c + std::log(3.0) / 5.0).epsilon(1e-13));

    Rng rng(8);
    Matrix e4 = test::random_matrix(rng, 5, 4, 1.0);
    Matrix v4 = test::random_matrix(rng, 5, 6, 1.0);
    auto c4 = word_region_attention(e4, v4).context;
    double best = -2;
    for (std::size_t i = 0; i < 4; ++i) best = std::max(best, cosine(c4.col(i), e4.col(i)));
    CHECK(std::abs(image_text_similarity({e4, {}, v4}, 50.0) - best) < 0.05);
}

TEST_CASE("avss for two pairs equals the hand expansion") {
    Rng rng(21);
    std::vector<EncodedPair> b;
    for (int i = 0; i < 2; ++i) b.push_back({test::random_matrix(rng, 3, 2, 1.0), {}, test::random_matrix(rng, 3, 3, 1.0)});
    auto sim = [&](int k, int i) { return image_text_similarity({b[i].words, {}, b[k].regions}, 5.0); };
    const double a = sim(0, 0), bb = sim(0, 1), c = sim(1, 0), d = sim(1, 1);
    const double t2i = -std::log(std::exp(a) / (std::exp(a) + std::exp(c))) - std::log(std::exp(d) / (std::exp(bb) + std::exp(d)));
    const double i2t = -std::log(std::exp(a) / (std::exp(a) + std::exp(bb))) - std::log(std::exp(d) / (std::exp(c) + std::exp(d)));
    CHECK(avss_loss(b, 5.0) == doctest::Approx(0.5 * (t2i + i2t)).epsilon(1e-13));

    std::vector<EncodedPair> swapped{b[1], b[0]};
    CHECK(avss_loss(swapped, 5.0) == doctest::Approx(avss_loss(b, 5.0)).epsilon(1e-13));
}

TEST_CASE("avss rejects degenerate input") {
    Matrix e{{1.0}, {0.0}};
    Matrix v{{1.0}, {1.0}};
    std::vector<EncodedPair> one{{e, {}, v}};
    CHECK(test::code_of([&] { avss_loss(one, 5.0); }) == ErrorCode::BatchTooSmall);
    Matrix zero(2, 1);
    CHECK(test::code_of([&] { image_text_similarity({zero, {}, v}, 5.0); }) == ErrorCode::ZeroNorm);
    Matrix v3(3, 2, {1, 2, 3, 4, 5, 6});
    CHECK(test::code_of([&] { word_region_attention(e, v3); }) == ErrorCode::DimMismatch);
}

TEST_CASE("avss gradients agree with finite differences") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng rng(seed);
        std::vector<Matrix> inputs;
        for (int i = 0; i < 3; ++i) {
            inputs.push_back(test::random_matrix(rng, 4, 2 + rng.below(2), 1.0));
            inputs.push_back(test::random_matrix(rng, 4, 3, 1.0));
        }
        for (auto mode : {AttentionMode::Literal, AttentionMode::Single}) {
            DiffFn f = [mode](ad::Tape&, std::span<const ad::Var> x) {
                std::vector<ad::PairVars> b;
                for (std::size_t i = 0; i < x.size(); i += 2) b.push_back({x[i], x[i + 1]});
                return ad::avss_loss(b, 5.0, mode);
            };
            CHECK(grad_check(f, inputs, 1e-5).max_rel_error < 1e-6);
        }
    }
}

TEST_CASE("toy encoders: shapes, training reduces loss, checkpoint round trip") {
    EncoderConfig cfg;
    cfg.dim = 8;
    ToyEncoders enc(cfg, 8, 3, 42);
    // Four classes; each caption is a class-specific pair of tokens.
    std::vector<AlignmentSample> data;
    Rng rng(9);
    for (std::size_t cls = 0; cls < 4; ++cls) {
        AlignmentSample s;
        s.tokens = {cls, cls + 4};
        s.region_features = Matrix(3, 4);
        for (std::size_t j = 0; j < 4; ++j) {
            s.region_features(0, j) = std::cos(1.5 * static_cast<double>(cls)) + 0.05 * rng.normal();
            s.region_features(1, j) = std::sin(1.5 * static_cast<double>(cls)) + 0.05 * rng.normal();
            s.region_features(2, j) = 1.0;
        }
        data.push_back(s);
    }
    auto pair = enc.encode(data[0].tokens, data[0].region_features);
    CHECK(pair.words.rows() == 8);
    CHECK(pair.words.cols() == 2);
    CHECK(pair.sentence.size() == 8);
    CHECK(pair.regions.cols() == 4);

    Rng train_rng(1);
    auto losses = train_alignment(enc, data, 200, 4, 0.05, train_rng);
    REQUIRE(losses.size() == 200);
    CHECK(losses.back() <= 0.5 * losses.front());

    auto dir = test::temp_dir("encoders");
    enc.save(dir / "enc");
    auto back = ToyEncoders::load(dir / "enc");
    auto p2 = back.encode(data[1].tokens, data[1].region_features);
    auto p1 = enc.encode(data[1].tokens, data[1].region_features);
    CHECK(max_abs_diff(p1.words, p2.words) == 0.0);
    CHECK(max_abs_diff(p1.regions, p2.regions) == 0.0);
    CHECK(back.config().xi == 5.0);

    const std::size_t one[] = {3}, twice[] = {2, 2};
    auto [e1, s1] = enc.encode_text(one);
    CHECK(max_abs_diff(Matrix::column(s1), e1) == 0.0);
    auto [e2, s2] = enc.encode_text(twice);
    CHECK(max_abs_diff(Matrix::column(e2.col(0)), Matrix::column(e2.col(1))) == 0.0);
    CHECK(ToyEncoders(cfg, 8, 3, 42).encode_image(data[0].region_features).data()[0] ==
          ToyEncoders(cfg, 8, 3, 42).encode_image(data[0].region_features).data()[0]);

    const std::size_t bad[] = {99};
    CHECK(test::code_of([&] { enc.encode_text(bad); }) == ErrorCode::InvalidArgument);
    CHECK(test::code_of([&] { parse_attention_mode("double"); }) == ErrorCode::ConfigError);
}
