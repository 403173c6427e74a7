// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>

#include "fgzsd/alignment.hpp"
#include "fgzsd/fusion.hpp"
#include "fgzsd/hicl.hpp"
#include "fgzsd/hier_head.hpp"
#include "fgzsd/numerics.hpp"
#include "fgzsd/rng.hpp"

namespace fgzsd {

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.uniform(-scale, scale);
    return m;
}

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// Small tree with 1-2 inner levels and ancestors shared between leaves.
TaxonomyTree random_tree(Rng& rng) {
    const std::size_t levels = between(rng, 1, 2), leaves = between(rng, 2, 8);
    std::vector<TaxonomyRow> rows;
    for (std::size_t i = 0; i < leaves; ++i) {
        TaxonomyRow r{"leaf" + std::to_string(i), {}};
        for (std::size_t l = 0; l < levels; ++l)
            r.ancestors.push_back("n" + std::to_string(l) + "_" + std::to_string(rng.below(2)));
        rows.push_back(std::move(r));
    }
    return TaxonomyTree::build(rows);
}

double avss_instance(Rng& rng, double eps) {
    const std::size_t dim = between(rng, 2, 8), batch = between(rng, 2, 4), regions = between(rng, 2, 6);
    std::vector<Matrix> inputs;
    for (std::size_t i = 0; i < batch; ++i) {
        inputs.push_back(random_matrix(rng, dim, between(rng, 2, 5)));
        inputs.push_back(random_matrix(rng, dim, regions));
    }
    const double xi = rng.uniform(0.5, 8.0);
    const AttentionMode mode = rng.below(2) ? AttentionMode::Literal : AttentionMode::Single;
    DiffFn f = [&](ad::Tape&, std::span<const ad::Var> x) {
        std::vector<ad::PairVars> b;
        for (std::size_t i = 0; i < x.size(); i += 2) b.push_back({x[i], x[i + 1]});
        return ad::avss_loss(b, xi, mode);
    };
    return grad_check(f, inputs, eps).max_rel_error;
}

// Distance of a discriminator score, or of any hidden pre-activation on the
// way to it, from a kink of the hinge loss or of a ReLU.
double kink_margin(const DiscriminatorParams& disc, const Matrix& map, const Matrix& sentence, double hinge_at) {
    ad::Tape tape;
    const ad::Var parts[] = {ad::reshape(tape.constant(map), map.rows() * map.cols(), 1), tape.constant(sentence)};
    Vector h = ad::concat_rows(parts).value().col(0);
    double margin = INFINITY;
    const auto& layers = disc.mlp.layers;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        Vector next(layers[k].weight.rows());
        for (std::size_t i = 0; i < next.size(); ++i) {
            double z = layers[k].bias(i, 0);
            for (std::size_t j = 0; j < h.size(); ++j) z += layers[k].weight(i, j) * h[j];
            if (k + 1 < layers.size()) {
                margin = std::min(margin, std::abs(z));
                z = std::max(z, 0.0);
            } else {
                margin = std::min(margin, std::abs(z - hinge_at));
            }
            next[i] = z;
        }
        h = std::move(next);
    }
    return margin;
}

struct GanResult {
    double d_err = 0, g_err = 0;
    std::size_t redraws = 0;
};

// Central differences are only meaningful away from kinks, so instances with
// a ReLU or hinge argument within kKinkMargin of zero are redrawn (and counted).
constexpr double kKinkMargin = 1e-3;

GanResult gan_instance(Rng& rng, double eps) {
    GanResult res;
    for (;; ++res.redraws) {
        GanConfig cfg;
        cfg.noise_dim = between(rng, 2, 4);
        cfg.blocks = between(rng, 1, 2);
        cfg.channels = between(rng, 2, 4);
        cfg.base_height = cfg.base_width = 1;
        cfg.out_channels = between(rng, 1, 3);
        cfg.text_dim = between(rng, 2, 5);
        cfg.mlp_hidden = between(rng, 2, 5);
        cfg.disc_hidden = between(rng, 3, 6);
        cfg.attention = rng.below(2) ? AttentionMode::Literal : AttentionMode::Single;
        auto gen = GeneratorParams::init(cfg, rng);
        auto disc = DiscriminatorParams::init(cfg, rng);
        const Matrix words = random_matrix(rng, cfg.text_dim, between(rng, 2, 4));
        const Matrix sentence = Matrix::column(words.col(0));
        const Matrix wrong = random_matrix(rng, cfg.text_dim, 1);
        const std::size_t n = between(rng, 2, 4);
        std::vector<Matrix> noise, reals, fakes;
        for (std::size_t i = 0; i < n; ++i) {
            noise.push_back(random_matrix(rng, cfg.noise_dim, 1));
            reals.push_back(random_matrix(rng, cfg.out_channels, cfg.out_height() * cfg.out_width()));
            fakes.push_back(generate(cfg, gen, noise.back().col(0), words, sentence.col(0)).data);
        }
        double margin = INFINITY;
        for (std::size_t i = 0; i < n; ++i) {
            margin = std::min(margin, kink_margin(disc, reals[i], sentence, 1.0));
            margin = std::min(margin, kink_margin(disc, fakes[i], sentence, -1.0));
            margin = std::min(margin, kink_margin(disc, reals[i], wrong, -1.0));
        }
        if (margin < kKinkMargin) continue;

        auto losses = [&](ad::Tape& tape) {
            std::vector<ad::Var> r, f, m;
            for (std::size_t i = 0; i < n; ++i) {
                ad::MapVar x{tape.constant(reals[i]), cfg.out_height(), cfg.out_width()};
                r.push_back(ad::discriminate(tape, disc, x, tape.constant(sentence)));
                auto g =
                    ad::generate(tape, cfg, gen, tape.constant(noise[i]), tape.constant(words), tape.constant(sentence));
                f.push_back(ad::discriminate(tape, disc, g, tape.constant(sentence)));
                m.push_back(ad::discriminate(tape, disc, x, tape.constant(wrong)));
            }
            return ad::gan_losses(ad::concat_cols(r), ad::concat_cols(f), ad::concat_cols(m));
        };
        auto dp = disc.parameters();
        auto gp = gen.parameters();
        res.d_err = param_grad_check([&](ad::Tape& t) { return losses(t).first; }, dp, eps).max_rel_error;
        res.g_err = param_grad_check([&](ad::Tape& t) { return losses(t).second; }, gp, eps).max_rel_error;
        return res;
    }
}

double hicl_instance(Rng& rng, double eps) {
    const TaxonomyTree tree = random_tree(rng);
    const std::size_t dim = between(rng, 2, 8);
    std::map<std::string, Vector> leaf_vectors;
    for (NodeId leaf : tree.leaves()) leaf_vectors[tree.node(leaf).name] = random_matrix(rng, dim, 1).col(0);
    const NodeSemantics sem = aggregate_semantics(tree, leaf_vectors);
    const MomentumCacheBank bank = init_caches(tree, sem, std::nullopt, 0.99);
    const Matrix table = log_similarity_table(sem);
    HiclConfig cfg;
    cfg.tau = rng.uniform(0.2, 1.0);
    cfg.phi = static_cast<LevelWeight>(rng.below(3));
    cfg.negatives = rng.below(2) ? NegativeEnumeration::Unique : NegativeEnumeration::PerLeaf;
    const std::size_t n = between(rng, 1, 4);
    std::vector<Matrix> xs;
    std::vector<NodeId> leaves;
    for (std::size_t i = 0; i < n; ++i) {
        xs.push_back(random_matrix(rng, dim, 1));
        leaves.push_back(tree.leaves()[rng.below(tree.leaves().size())]);
    }
    DiffFn f = [&](ad::Tape& tape, std::span<const ad::Var> v) {
        return ad::hicl_loss(tape, v, leaves, bank, tree, table, cfg);
    };
    return grad_check(f, xs, eps).max_rel_error;
}

double hier_ce_instance(Rng& rng, double eps) {
    const TaxonomyTree tree = random_tree(rng);
    const std::size_t dim = between(rng, 1, 8);
    HierHead head = HierHead::init(tree, dim, rng, 1.0);
    const Matrix x = random_matrix(rng, dim, 1, 2.0);
    const NodeId leaf = tree.leaves()[rng.below(tree.leaves().size())];
    DiffFn f = [&](ad::Tape& tape, std::span<const ad::Var> v) {
        return ad::hier_ce_loss(tape, head, tree, v[0], leaf);
    };
    const std::vector<Matrix> in{x};
    const double wrt_x = grad_check(f, in, eps).max_rel_error;
    auto params = head.parameters();
    const double wrt_params =
        param_grad_check([&](ad::Tape& tape) { return ad::hier_ce_loss(tape, head, tree, tape.constant(x), leaf); },
                         params, eps)
            .max_rel_error;
    return std::max(wrt_x, wrt_params);
}

double total_instance(Rng& rng, double eps) {
    std::vector<Matrix> in;
    for (int i = 0; i < 7; ++i) in.push_back(Matrix::scalar(rng.uniform(-3, 3)));
    const LossWeights w{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
    DiffFn f = [&](ad::Tape&, std::span<const ad::Var> v) {
        return ad::total_loss({v[0], v[1], v[2], v[3], v[4], v[5], v[6]}, w);
    };
    return grad_check(f, in, eps).max_rel_error;
}

}  // namespace

std::vector<GradSuiteRow> gradient_suite(std::size_t seeds, double tolerance, double eps) {
    std::vector<GradSuiteRow> rows{{"avss_loss"},    {"gan_losses (D)"}, {"gan_losses (G)"},
                                   {"hicl_loss"},    {"hier_ce_loss"},   {"total_loss"}};
    auto record = [](GradSuiteRow& r, double err) {
        ++r.instances;
        r.max_rel_error = std::max(r.max_rel_error, err);
    };
    for (std::size_t s = 0; s < seeds; ++s) {
        Rng base(s);
        Rng a = base.fork(1), g = base.fork(2), h = base.fork(3), c = base.fork(4), t = base.fork(5);
        record(rows[0], avss_instance(a, eps));
        const GanResult gan = gan_instance(g, eps);
        record(rows[1], gan.d_err);
        record(rows[2], gan.g_err);
        rows[1].redraws += gan.redraws;
        rows[2].redraws += gan.redraws;
        record(rows[3], hicl_instance(h, eps));
        record(rows[4], hier_ce_instance(c, eps));
        record(rows[5], total_instance(t, eps));
    }
    for (auto& r : rows) r.pass = r.instances > 0 && r.max_rel_error <= tolerance;
    return rows;
}

std::string format_gradient_suite(const std::vector<GradSuiteRow>& rows) {
    std::string out = "loss              instances  redrawn  max_rel_error  result\n";
    char line[128];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-17s %9zu  %7zu  %13.3e  %s\n", r.loss.c_str(), r.instances, r.redraws,
                      r.max_rel_error, r.pass ? "PASS" : "FAIL");
        out += line;
    }
    return out;
}

}  // namespace fgzsd
