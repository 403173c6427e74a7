// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fgzsd/error.hpp"
#include "fgzsd/hier_head.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fgzsd;

namespace {

HierHead zero_head(const TaxonomyTree& tree, std::size_t dim) {
    Rng rng(0);
    HierHead h = HierHead::init(tree, dim, rng);
    for (Matrix* p : h.parameters())
        for (double& v : p->data()) v = 0.0;
    return h;
}

HierHead random_head(const TaxonomyTree& tree, std::size_t dim, Rng& rng) { return HierHead::init(tree, dim, rng, 1.5); }

Vector random_x(Rng& rng, std::size_t dim) {
    Vector x(dim);
    for (double& v : x) v = rng.uniform(-2, 2);
    return x;
}

std::vector<double> logits(const DenseLayer& l, const Vector& x) {
    std::vector<double> z(l.weight.rows());
    for (std::size_t r = 0; r < z.size(); ++r) {
        z[r] = l.bias(r, 0);
        for (std::size_t c = 0; c < x.size(); ++c) z[r] += l.weight(r, c) * x[c];
    }
    return z;
}

// Leaf posterior by walking the path and multiplying softmax conditionals,
// optionally restricted to children with an allowed leaf below.
double enumerate_posterior(const HierHead& h, const TaxonomyTree& t, const Vector& x, NodeId leaf,
                           const std::set<NodeId>* allowed) {
    auto open = [&](NodeId n) {
        if (!allowed) return true;
        for (NodeId l : t.leaf_descendants(n))
            if (allowed->count(l)) return true;
        return false;
    };
    if (!open(leaf)) return 0.0;
    const auto path = t.path(leaf);
    double p = 1.0;
    for (std::size_t l = 0; l + 1 < path.size(); ++l) {
        const auto& kids = t.node(path[l]).children;
        auto z = logits(h.classifiers[path[l]], x);
        std::vector<double> zo;
        std::size_t at = 0;
        for (std::size_t k = 0; k < kids.size(); ++k) {
            if (!open(kids[k])) continue;
            if (kids[k] == path[l + 1]) at = zo.size();
            zo.push_back(z[k]);
        }
        p *= oracle::softmax(zo)[at];
    }
    return p;
}

}  // namespace

TEST_CASE("head shape follows the tree") {
    Rng rng(1);
    auto tree = TaxonomyTree::build(test::random_rows(rng, 2, 12));
    auto h = HierHead::init(tree, 5, rng);
    for (const auto& n : tree.nodes()) {
        if (n.children.empty()) {
            CHECK(h.classifiers[n.id].weight.empty());
            CHECK(test::code_of([&] { h.classifier_parameters(n.id); }) == ErrorCode::InvalidArgument);
        } else {
            CHECK(h.classifiers[n.id].weight.rows() == n.children.size());
            CHECK(h.classifiers[n.id].weight.cols() == 5);
        }
    }
    CHECK(h.regressor.weight.rows() == 4);
    CHECK(h.regressor.bias == Matrix(4, 1));
}

TEST_CASE("uniform logits give uniform posteriors") {
    auto two = TaxonomyTree::build({{"a", {}}, {"b", {}}});
    auto p2 = head_forward(zero_head(two, 3), two, Vector{1, 2, 3});
    CHECK(p2.leaf_posteriors == Vector{0.5, 0.5});

    auto four = TaxonomyTree::build({{"a", {"A"}}, {"b", {"A"}}, {"c", {"B"}}, {"d", {"B"}}});
    auto p4 = head_forward(zero_head(four, 2), four, Vector{-1, 4});
    for (double p : p4.leaf_posteriors) CHECK(p == 0.25);
    CHECK(p4.steps.size() == 2);
    CHECK(p4.score == 0.25);
}

TEST_CASE("leaf posteriors match path enumeration") {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        Rng rng(seed);
        auto tree = TaxonomyTree::build(test::random_rows(rng, 1 + rng.below(3), 2 + rng.below(12)));
        const std::size_t dim = 1 + rng.below(6);
        auto h = random_head(tree, dim, rng);
        const Vector x = random_x(rng, dim);

        auto pred = head_forward(h, tree, x);
        double total = 0;
        for (std::size_t i = 0; i < tree.leaves().size(); ++i) {
            CHECK(std::abs(pred.leaf_posteriors[i] - enumerate_posterior(h, tree, x, tree.leaves()[i], nullptr)) <
                  1e-12);
            total += pred.leaf_posteriors[i];
        }
        CHECK(std::abs(total - 1.0) < 1e-8);
        for (const auto& s : pred.steps) CHECK((s.prob >= 0.0 && s.prob <= 1.0));

        std::set<NodeId> allowed;
        for (NodeId l : tree.leaves())
            if (rng.uniform(0, 1) < 0.5) allowed.insert(l);
        if (allowed.empty()) allowed.insert(tree.leaves().back());
        auto masked = head_forward(h, tree, x, &allowed);
        total = 0;
        for (std::size_t i = 0; i < tree.leaves().size(); ++i) {
            const NodeId l = tree.leaves()[i];
            CHECK(std::abs(masked.leaf_posteriors[i] - enumerate_posterior(h, tree, x, l, &allowed)) < 1e-12);
            if (!allowed.count(l)) CHECK(masked.leaf_posteriors[i] == 0.0);
            total += masked.leaf_posteriors[i];
        }
        CHECK(std::abs(total - 1.0) < 1e-8);
        CHECK(allowed.count(masked.leaf) == 1);
        CHECK(allowed.count(masked.best_leaf) == 1);
    }
}

TEST_CASE("head_forward errors") {
    auto tree = TaxonomyTree::build({{"a", {"A"}}, {"b", {"A"}}, {"c", {"B"}}});
    auto h = zero_head(tree, 2);
    CHECK(test::code_of([&] { head_forward(h, tree, Vector{1, 2, 3}); }) == ErrorCode::DimMismatch);
    std::set<NodeId> inner{tree.root()};
    CHECK(test::code_of([&] { head_forward(h, tree, Vector{1, 2}, &inner); }) == ErrorCode::UnknownClass);
    std::set<NodeId> none;
    CHECK(test::code_of([&] { head_forward(h, tree, Vector{1, 2}, &none); }) == ErrorCode::EmptyInput);
    auto other = TaxonomyTree::build({{"a", {}}, {"b", {}}});
    CHECK(test::code_of([&] { head_forward(h, other, Vector{1, 2}); }) == ErrorCode::DimMismatch);
}

TEST_CASE("hierarchical cross-entropy") {
    auto tree = TaxonomyTree::build({{"a", {"A"}}, {"b", {"A"}}, {"c", {"B"}}, {"d", {"B"}}});
    auto h = zero_head(tree, 2);
    const Vector x{0.3, -0.7};
    CHECK(hier_ce_loss(h, tree, x, tree.leaf("c")) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));

    // Correct child far ahead at every node on the path to "b".
    const auto path = tree.path(tree.leaf("b"));
    for (std::size_t l = 0; l + 1 < path.size(); ++l) {
        const auto& kids = tree.node(path[l]).children;
        for (std::size_t k = 0; k < kids.size(); ++k) h.classifiers[path[l]].bias(k, 0) = kids[k] == path[l + 1] ? 40 : -40;
    }
    CHECK(hier_ce_loss(h, tree, x, tree.leaf("b")) < 1e-30);
    CHECK(hier_ce_loss(h, tree, x, tree.leaf("a")) > 79);

    CHECK(test::code_of([&] { hier_ce_loss(h, tree, x, tree.root()); }) == ErrorCode::UnknownLeaf);
    CHECK(test::code_of([&] { hier_ce_loss(h, tree, x, 999); }) == ErrorCode::UnknownLeaf);
}

TEST_CASE("cross-entropy is minus the log leaf posterior and its gradients check") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 100);
        auto tree = TaxonomyTree::build(test::random_rows(rng, 1 + rng.below(2), 2 + rng.below(7)));
        const std::size_t dim = 1 + rng.below(8);
        auto h = random_head(tree, dim, rng);
        const Vector x = random_x(rng, dim);
        const NodeId leaf = tree.leaves()[rng.below(tree.leaves().size())];

        const double ce = hier_ce_loss(h, tree, x, leaf);
        const double post = head_forward(h, tree, x).leaf_posteriors[tree.leaf_index(leaf)];
        CHECK(std::abs(ce + std::log(post)) < 1e-10);

        DiffFn f = [&](ad::Tape& tape, std::span<const ad::Var> v) { return ad::hier_ce_loss(tape, h, tree, v[0], leaf); };
        const std::vector<Matrix> in{Matrix::column(x)};
        CHECK(std::abs(evaluate(f, in) - ce) < 1e-12);
        CHECK(grad_check(f, in).max_rel_error < 1e-4);

        ParamFn pf = [&](ad::Tape& tape) {
            return ad::hier_ce_loss(tape, h, tree, tape.constant(Matrix::column(x)), leaf);
        };
        CHECK(param_grad_check(pf, h.parameters()).max_rel_error < 1e-4);
    }
}

TEST_CASE("total loss") {
    LossWeights w;
    CHECK(total_loss({}, w) == 0.0);
    LossComponents ones{1, 1, 0, 1, 1, 1, 1};
    CHECK(total_loss(ones, w) == doctest::Approx(3.11).epsilon(1e-15));

    // Affine in every component with its configured slope.
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        LossComponents c{rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3),
                         rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 9)};
        LossWeights lw{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
        const double base = total_loss(c, lw);
        auto bumped = [&](double LossComponents::*field) {
            LossComponents d = c;
            d.*field += 1.0;
            return total_loss(d, lw) - base;
        };
        CHECK(bumped(&LossComponents::rpn) == doctest::Approx(1.0));
        CHECK(bumped(&LossComponents::reg) == doctest::Approx(1.0));
        CHECK(bumped(&LossComponents::cls) == doctest::Approx(1.0));
        CHECK(bumped(&LossComponents::avss) == doctest::Approx(lw.avss));
        CHECK(bumped(&LossComponents::disc) == doctest::Approx(lw.adversarial));
        CHECK(bumped(&LossComponents::gen) == doctest::Approx(lw.adversarial));
        CHECK(bumped(&LossComponents::hicl) == doctest::Approx(lw.hicl));

        LossWeights doubled = lw;
        doubled.hicl *= 2;
        CHECK(total_loss(c, doubled) - base == doctest::Approx(lw.hicl * c.hicl));
    }

    LossComponents bad;
    bad.hicl = NAN;
    CHECK(test::code_of([&] { total_loss(bad, w); }) == ErrorCode::NonFinite);
    bad.hicl = INFINITY;
    CHECK(test::code_of([&] { total_loss(bad, w); }) == ErrorCode::NonFinite);
    CHECK(test::code_of([] { LossWeights{-0.1, 0.5, 0.01}.validate(); }) == ErrorCode::ConfigError);
    CHECK(test::code_of([] { LossWeights::from_json({{"hicl", -1.0}}); }) == ErrorCode::ConfigError);
    auto back = LossWeights::from_json(LossWeights{0.2, 0.3, 0.4}.to_json());
    CHECK(back.avss == 0.2);
    CHECK(back.adversarial == 0.3);
    CHECK(back.hicl == 0.4);
}

TEST_CASE("total loss on the tape matches the scalar form and its gradients check") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 300);
        std::vector<Matrix> in;
        for (int i = 0; i < 7; ++i) in.push_back(Matrix::scalar(rng.uniform(-2, 2)));
        LossWeights w{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
        DiffFn f = [&](ad::Tape&, std::span<const ad::Var> v) {
            return ad::total_loss({v[0], v[1], v[2], v[3], v[4], v[5], v[6]}, w);
        };
        LossComponents c{in[0].item(), in[1].item(), in[2].item(), in[3].item(),
                         in[4].item(), in[5].item(), in[6].item()};
        CHECK(std::abs(evaluate(f, in) - total_loss(c, w)) < 1e-12);
        CHECK(grad_check(f, in).max_rel_error < 1e-4);
    }
}

TEST_CASE("greedy and posterior decoding") {
    // Root prefers A (0.6) but A spreads that over three leaves, so the single
    // leaf under B (0.4) has the largest posterior.
    auto tree = TaxonomyTree::build({{"a1", {"A"}}, {"a2", {"A"}}, {"a3", {"A"}}, {"b1", {"B"}}});
    auto h = zero_head(tree, 1);
    h.classifiers[tree.root()].bias(0, 0) = std::log(0.6);
    h.classifiers[tree.root()].bias(1, 0) = std::log(0.4);
    auto pred = head_forward(h, tree, Vector{0.0});
    CHECK(tree.node(pred.leaf).name == "a1");
    CHECK(tree.node(pred.best_leaf).name == "b1");
    CHECK(pred.score == doctest::Approx(0.2));

    // Greedy equals the exhaustive argmax whenever every greedy step keeps the
    // argmax leaf inside the chosen subtree; other cases are counted.
    std::size_t agree_required = 0, disagreements = 0, trials = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        Rng rng(seed + 7);
        auto t = TaxonomyTree::build(test::random_rows(rng, 2, 3 + rng.below(10)));
        auto hh = random_head(t, 3, rng);
        const Vector x = random_x(rng, 3);
        auto p = head_forward(hh, t, x);
        ++trials;
        std::size_t best = 0;
        for (std::size_t i = 1; i < p.leaf_posteriors.size(); ++i)
            if (p.leaf_posteriors[i] > p.leaf_posteriors[best]) best = i;
        const NodeId argmax_leaf = t.leaves()[best];
        CHECK(p.best_leaf == argmax_leaf);
        bool kept = true;
        for (const auto& s : p.steps) {
            const auto below = t.leaf_descendants(s.child);
            kept = kept && std::find(below.begin(), below.end(), argmax_leaf) != below.end();
        }
        if (kept) {
            ++agree_required;
            CHECK(p.leaf == argmax_leaf);
        }
        if (p.leaf != argmax_leaf) ++disagreements;
    }
    MESSAGE("greedy vs argmax: " << disagreements << " disagreements in " << trials << " random heads ("
                                 << agree_required << " with the argmax kept on the greedy path)");
    CHECK(disagreements + agree_required == trials);
    CHECK(parse_decoding("greedy") == Decoding::Greedy);
    CHECK(std::string(to_string(parse_decoding("posterior"))) == "posterior");
    CHECK(test::code_of([] { parse_decoding("beam"); }) == ErrorCode::ConfigError);
}

TEST_CASE("box deltas") {
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        const double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
        BBox p{x, y, x + rng.uniform(1, 30), y + rng.uniform(1, 30)};
        BBox t{x + rng.uniform(-5, 5), y + rng.uniform(-5, 5), 0, 0};
        t.x_max = t.x_min + rng.uniform(1, 30);
        t.y_max = t.y_min + rng.uniform(1, 30);
        auto d = box_deltas(p, t);
        auto back = apply_deltas(p, d);
        CHECK(back.x_min == doctest::Approx(t.x_min));
        CHECK(back.y_max == doctest::Approx(t.y_max));
    }
    BBox p{0, 0, 10, 10};
    auto same = apply_deltas(p, Vector{0, 0, 0, 0});
    CHECK(same.x_max == 10);
    CHECK(std::isfinite(apply_deltas(p, Vector{0, 0, 1e6, 0}).x_max));
    CHECK(test::code_of([&] { apply_deltas(p, Vector{0, 0}); }) == ErrorCode::DimMismatch);
    CHECK(test::code_of([&] { box_deltas(p, BBox{1, 1, 0, 0}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("predict") {
    auto tree = TaxonomyTree::build({{"a", {"A"}}, {"b", {"A"}}, {"c", {"B"}}, {"d", {"B"}}});
    Rng rng(11);
    auto h = random_head(tree, 3, rng);
    std::vector<Proposal> none;
    CHECK(predict(h, tree, none).empty());

    std::vector<Proposal> props;
    for (int i = 0; i < 20; ++i) props.push_back({"img" + std::to_string(i), random_x(rng, 3), {1, 2, 11, 22}});
    auto greedy = predict(h, tree, props);
    auto post = predict(h, tree, props, Decoding::Posterior);
    REQUIRE(greedy.size() == props.size());
    for (std::size_t i = 0; i < props.size(); ++i) {
        auto fw = head_forward(h, tree, props[i].feature);
        double prod = 1.0;
        for (const auto& s : fw.steps) prod *= s.prob;
        CHECK(greedy[i].score == doctest::Approx(prod).epsilon(1e-14));
        CHECK(greedy[i].class_id == tree.node(fw.leaf).name);
        CHECK(post[i].class_id == tree.node(fw.best_leaf).name);
        CHECK(post[i].score == fw.leaf_posteriors[tree.leaf_index(fw.best_leaf)]);
        CHECK(greedy[i].image_id == props[i].image_id);
    }

    // Saturated logits towards "d"; a zero regressor passes the proposal through.
    auto sat = zero_head(tree, 3);
    sat.classifiers[tree.root()].bias(1, 0) = 60;
    sat.classifiers[tree.node(tree.leaf("d")).parent.value()].bias(1, 0) = 60;
    auto det = predict(sat, tree, std::span<const Proposal>(props.data(), 1));
    CHECK(det[0].class_id == "d");
    CHECK(det[0].score == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(det[0].box.x_min == doctest::Approx(1.0));
    CHECK(det[0].box.y_max == doctest::Approx(22.0));

    std::set<NodeId> only_a{tree.leaf("a")};
    auto restricted = predict(sat, tree, std::span<const Proposal>(props.data(), 1), Decoding::Greedy, &only_a);
    CHECK(restricted[0].class_id == "a");
    CHECK(restricted[0].score == 1.0);
}

TEST_CASE("flattened tree keeps the leaves") {
    Rng rng(12);
    auto tree = TaxonomyTree::build(test::random_rows(rng, 2, 9));
    auto flat = flatten(tree);
    CHECK(flat.depth() == 1);
    std::set<std::string> a, b;
    for (NodeId l : tree.leaves()) a.insert(tree.node(l).name);
    for (NodeId l : flat.leaves()) b.insert(flat.node(l).name);
    CHECK(flat.leaves().size() == tree.leaves().size());
    CHECK(a == b);
}
