// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fgzsd/checkpoint.hpp"
#include "fgzsd/error.hpp"
#include "fgzsd/fusion.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fgzsd;

namespace {

FeatureMap random_map(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
    return {test::random_matrix(rng, c, h * w, 1.0), h, w};
}

GanConfig small_config() {
    GanConfig cfg;
    cfg.noise_dim = 4;
    cfg.blocks = 2;
    cfg.channels = 3;
    cfg.base_height = 1;
    cfg.base_width = 1;
    cfg.out_channels = 2;
    cfg.text_dim = 3;
    cfg.mlp_hidden = 4;
    cfg.disc_hidden = 5;
    return cfg;
}

}  // namespace

TEST_CASE("sentence affine: identity, constant, and loop oracle") {
    Rng rng(1);
    FeatureMap f = random_map(rng, 3, 2, 2);
    Vector s{0.5, -1.0};

    FusionParams p = zero_fusion(2, 4, 3);
    for (std::size_t c = 0; c < 3; ++c) p.gamma_s.layers.back().bias(c, 0) = 1.0;
    CHECK(max_abs_diff(sentence_affine(p, s, f).data, f.data) == 0.0);

    FusionParams q = zero_fusion(2, 4, 3);
    for (std::size_t c = 0; c < 3; ++c) q.theta_s.layers.back().bias(c, 0) = 2.5;
    CHECK(max_abs_diff(sentence_affine(q, s, f).data, Matrix::filled(3, 4, 2.5)) == 0.0);

    for (int trial = 0; trial < 10; ++trial) {
        FusionParams r = random_fusion(2, 4, 3, rng);
        auto got = sentence_affine(r, s, f);
        auto want = oracle::affine(oracle::to_grid(f.data), oracle::mlp(r.gamma_s, s), oracle::mlp(r.theta_s, s));
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(got.data(c, j) - want[c][j]) < 1e-12);
    }
    Vector bad{1.0};
    CHECK(test::code_of([&] { sentence_affine(p, bad, f); }) == ErrorCode::DimMismatch);
    FeatureMap f2 = random_map(rng, 2, 2, 2);
    CHECK(test::code_of([&] { sentence_affine(p, s, f2); }) == ErrorCode::DimMismatch);
}

TEST_CASE("word affine reduces to one word's MLP output when that word is fully relevant") {
    Rng rng(2);
    FusionParams p = random_fusion(3, 4, 3, rng);
    Matrix e{{0.3}, {-0.7}, {1.1}};
    // Every position equals the word, so the attended context is the word itself.
    Matrix fd(3, 4);
    for (std::size_t j = 0; j < 4; ++j) fd.set_col(j, e.col(0));
    FeatureMap f{fd, 2, 2};
    auto got = word_affine(p, e, f);
    auto g = oracle::mlp(p.gamma_w, e.col(0)), t = oracle::mlp(p.theta_w, e.col(0));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < 4; ++j) CHECK(got.data(c, j) == doctest::Approx(g[c] * fd(c, j) + t[c]).epsilon(1e-12));
}

TEST_CASE("duplicated word equals one word at double weight") {
    Rng rng(3);
    FusionParams p = random_fusion(3, 4, 3, rng);
    FeatureMap f = random_map(rng, 3, 2, 3);
    Matrix one = test::random_matrix(rng, 3, 1, 1.0);
    Matrix two(3, 2);
    two.set_col(0, one.col(0));
    two.set_col(1, one.col(0));
    FusionParams doubled = p;
    for (auto* m : {&doubled.gamma_w, &doubled.theta_w}) {
        auto& last = m->layers.back();
        last.weight = 2.0 * last.weight;
        last.bias = 2.0 * last.bias;
    }
    CHECK(max_abs_diff(word_affine(p, two, f).data, word_affine(doubled, one, f).data) < 1e-12);
}

TEST_CASE("word affine matches the loop oracle and ignores word order") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t c = 2 + rng.below(3), d = 2 + rng.below(3);
        FusionParams p = random_fusion(d, 4, c, rng);
        FeatureMap f = random_map(rng, c, 1 + rng.below(3), 1 + rng.below(3));
        FeatureMap attend = random_map(rng, c, f.height, f.width);
        Matrix e = test::random_matrix(rng, d, 3, 1.0);
        for (bool literal : {true, false}) {
            auto mode = literal ? AttentionMode::Literal : AttentionMode::Single;
            auto got = word_affine(p, e, f, mode, &attend);
            auto [g, t] = oracle::word_gamma_theta(p.gamma_w, p.theta_w, p.region_proj, e, attend.data, literal);
            auto want = oracle::affine(oracle::to_grid(f.data), g, t);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t j = 0; j < f.data.cols(); ++j) CHECK(std::abs(got.data(ch, j) - want[ch][j]) < 1e-10);
        }
        Matrix perm(d, 3);
        perm.set_col(0, e.col(2));
        perm.set_col(1, e.col(0));
        perm.set_col(2, e.col(1));
        CHECK(max_abs_diff(word_affine(p, e, f, AttentionMode::Literal, &attend).data,
                           word_affine(p, perm, f, AttentionMode::Literal, &attend).data) < 1e-12);
    }
    FusionParams p = random_fusion(3, 4, 3, rng);
    FeatureMap zero{Matrix(3, 4), 2, 2};
    Matrix e = test::random_matrix(rng, 3, 2, 1.0);
    CHECK(test::code_of([&] { word_affine(p, e, zero); }) == ErrorCode::ZeroNorm);
}

TEST_CASE("msa block shapes and the residual-only case") {
    Rng rng(5);
    MsaBlockParams zero{zero_fusion(3, 4, 2), zero_fusion(3, 4, 2)};
    Matrix e = test::random_matrix(rng, 3, 2, 1.0);
    Vector s = e.col(0);
    FeatureMap point{Matrix{{1.5}, {-2.0}}, 1, 1};
    auto out = msa_block(zero, e, s, point);
    REQUIRE(out.height == 2);
    REQUIRE(out.width == 2);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(out.data(0, j) == 1.5);
        CHECK(out.data(1, j) == -2.0);
    }

    FeatureMap f = random_map(rng, 2, 3, 2);
    auto residual = msa_block(zero, e, s, f);
    CHECK(max_abs_diff(residual.data, upsample2x(f.data, 3, 2)) == 0.0);

    MsaBlockParams live{random_fusion(3, 4, 2, rng), random_fusion(3, 4, 2, rng)};
    FeatureMap base = random_map(rng, 2, 4, 4);
    auto x = msa_block(live, e, s, msa_block(live, e, s, base));
    CHECK(x.height == 16);
    CHECK(x.width == 16);
    CHECK(x.channels() == 2);
}

TEST_CASE("generator output size follows the block count") {
    GanConfig cfg = small_config();
    cfg.blocks = 1;
    cfg.base_height = cfg.base_width = 4;
    Rng rng(6);
    auto gen = GeneratorParams::init(cfg, rng);
    Matrix e = test::random_matrix(rng, 3, 2, 1.0);
    Vector s = e.col(1);
    Vector z{0.1, -0.2, 0.3, 1.0};
    auto a = generate(cfg, gen, z, e, s);
    CHECK(a.height == 8);
    CHECK(a.width == 8);
    CHECK(a.channels() == 2);
    CHECK(max_abs_diff(a.data, generate(cfg, gen, z, e, s).data) == 0.0);

    GanConfig deep = small_config();
    deep.blocks = 7;
    deep.base_height = deep.base_width = 2;
    deep.channels = 1;
    deep.out_channels = 1;
    deep.mlp_hidden = 2;
    auto g7 = GeneratorParams::init(deep, rng);
    auto big = generate(deep, g7, z, e, s);
    CHECK(big.height == 256);
    CHECK(big.width == 256);
    CHECK(deep.out_height() == 256);

    Vector short_z{1.0};
    CHECK(test::code_of([&] { generate(cfg, gen, short_z, e, s); }) == ErrorCode::DimMismatch);
    GanConfig bad = cfg;
    bad.blocks = 0;
    CHECK(test::code_of([&] { bad.validate(); }) == ErrorCode::ConfigError);
}

TEST_CASE("hinge losses") {
    double one[] = {1.0}, minus_one[] = {-1.0}, zero[] = {0.0};
    auto met = gan_losses(one, minus_one, minus_one);
    CHECK(met.discriminator == 0.0);
    CHECK(met.generator == 1.0);
    CHECK(gan_losses(zero, minus_one, minus_one).discriminator == 1.0);

    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> r(4), f(4), m(4);
        for (std::size_t i = 0; i < 4; ++i) {
            r[i] = rng.uniform(-2, 2);
            f[i] = rng.uniform(-2, 2);
            m[i] = rng.uniform(-2, 2);
        }
        auto got = gan_losses(r, f, m);
        auto [d, g] = oracle::hinge(r, f, m);
        CHECK(std::abs(got.discriminator - d) < 1e-12);
        CHECK(std::abs(got.generator - g) < 1e-12);
        CHECK(got.discriminator >= 0.0);
    }
}

TEST_CASE("discriminator and generator gradients agree with finite differences") {
    GanConfig cfg = small_config();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(seed);
        auto gen = GeneratorParams::init(cfg, rng);
        auto disc = DiscriminatorParams::init(cfg, rng);
        Matrix e = test::random_matrix(rng, 3, 2, 1.0);
        Matrix s = Matrix::column(e.col(0));
        Matrix wrong = test::random_matrix(rng, 3, 1, 1.0);
        std::vector<Matrix> noise, reals;
        for (int i = 0; i < 4; ++i) {
            noise.push_back(test::random_matrix(rng, cfg.noise_dim, 1, 1.0));
            reals.push_back(test::random_matrix(rng, cfg.out_channels, 16, 1.0));
        }
        auto d_loss = [&](ad::Tape& tape) {
            std::vector<ad::Var> r, f, m;
            for (int i = 0; i < 4; ++i) {
                ad::MapVar x{tape.constant(reals[i]), 4, 4};
                r.push_back(ad::discriminate(tape, disc, x, tape.constant(s)));
                auto g = ad::generate(tape, cfg, gen, tape.constant(noise[i]), tape.constant(e), tape.constant(s));
                f.push_back(ad::discriminate(tape, disc, g, tape.constant(s)));
                m.push_back(ad::discriminate(tape, disc, x, tape.constant(wrong)));
            }
            return ad::gan_losses(ad::concat_cols(r), ad::concat_cols(f), ad::concat_cols(m));
        };
        auto dp = disc.parameters();
        CHECK(param_grad_check([&](ad::Tape& t) { return d_loss(t).first; }, dp).max_rel_error < 1e-6);
        auto gp = gen.parameters();
        CHECK(param_grad_check([&](ad::Tape& t) { return d_loss(t).second; }, gp).max_rel_error < 1e-6);
    }
}

TEST_CASE("gan training runs and synthesis is class-conditional") {
    GanConfig cfg = small_config();
    cfg.blocks = 1;
    Rng rng(8);
    auto gen = GeneratorParams::init(cfg, rng);
    auto disc = DiscriminatorParams::init(cfg, rng);
    std::map<std::string, ClassText> texts;
    texts["a"] = {Matrix{{1.0, 0.2}, {0.0, 0.1}, {0.3, 0.0}}, {}};
    texts["b"] = {Matrix{{-0.5, 0.0}, {1.0, 0.4}, {0.0, -0.9}}, {}};
    for (auto& [id, t] : texts) {
        t.sentence = Vector(3, 0.0);
        for (std::size_t j = 0; j < t.words.cols(); ++j)
            for (std::size_t k = 0; k < 3; ++k) t.sentence[k] += t.words(k, j) / 2.0;
    }
    std::vector<GanSample> data;
    for (int i = 0; i < 8; ++i) {
        const bool a = i % 2 == 0;
        data.push_back({{Matrix::filled(2, 4, a ? 1.0 : -1.0) + test::random_matrix(rng, 2, 4, 0.1), 2, 2}, a ? "a" : "b"});
    }
    auto log = train_gan(cfg, gen, disc, data, texts, 300, 4, 0.01, rng);
    CHECK(log.size() == 300);
    for (const auto& l : log) {
        CHECK(std::isfinite(l.discriminator));
        CHECK(std::isfinite(l.generator));
    }

    auto tree = TaxonomyTree::build({{"a", {"g"}}, {"b", {"g"}}, {"c", {"h"}}});
    CHECK(synthesize_unseen(cfg, gen, tree, {"a", "b"}, texts, 0, 1).samples.empty());
    auto set = synthesize_unseen(cfg, gen, tree, {"a", "b"}, texts, 5, 1);
    REQUIRE(set.samples.size() == 10);
    CHECK(std::count_if(set.samples.begin(), set.samples.end(), [](auto& s) { return s.class_id == "a"; }) == 5);
    CHECK(set.samples[7].path == tree.path(tree.leaf("b")));
    CHECK(test::code_of([&] { synthesize_unseen(cfg, gen, tree, {"zzz"}, texts, 1, 1); }) == ErrorCode::UnknownClass);
    CHECK(test::code_of([&] { synthesize_unseen(cfg, gen, tree, {"c"}, texts, 1, 1); }) == ErrorCode::UnknownClass);
    auto again = synthesize_unseen(cfg, gen, tree, {"a", "b"}, texts, 5, 1);
    CHECK(max_abs_diff(again.samples[3].map.data, set.samples[3].map.data) == 0.0);

    // Permutation test on pooled features: the class split should separate the
    // means better than almost every random relabelling.
    auto big = synthesize_unseen(cfg, gen, tree, {"a", "b"}, texts, 40, 2);
    std::vector<Vector> feats;
    for (auto& s : big.samples) feats.push_back(s.map.pooled());
    auto statistic = [&](const std::vector<int>& label) {
        Vector ma(2, 0.0), mb(2, 0.0);
        double na = 0, nb = 0;
        for (std::size_t i = 0; i < feats.size(); ++i) {
            auto& m = label[i] ? ma : mb;
            (label[i] ? na : nb) += 1;
            for (std::size_t k = 0; k < 2; ++k) m[k] += feats[i][k];
        }
        double d = 0;
        for (std::size_t k = 0; k < 2; ++k) d += std::pow(ma[k] / na - mb[k] / nb, 2);
        return d;
    };
    std::vector<int> labels;
    for (auto& s : big.samples) labels.push_back(s.class_id == "a");
    const double observed = statistic(labels);
    int beaten = 0;
    Rng prng(99);
    for (int k = 0; k < 200; ++k) {
        auto shuffled = labels;
        prng.shuffle(shuffled);
        if (statistic(shuffled) >= observed) ++beaten;
    }
    CHECK(beaten <= 10);

    auto dir = test::temp_dir("synth");
    set.save(dir / "set");
    auto back = SyntheticSet::load(dir / "set", tree);
    REQUIRE(back.samples.size() == 10);
    CHECK(back.seed == 1);
    CHECK(back.samples[6].class_id == "b");
    CHECK(max_abs_diff(back.samples[6].map.data, set.samples[6].map.data) == 0.0);
    auto meta = read_checkpoint(dir / "set").meta;
    CHECK(meta["index"].size() == 2);
    CHECK(meta["index"][1]["count"] == 5);
    CHECK(meta["index"][0]["shape"] == nlohmann::json::array({2, 2, 2}));
}
