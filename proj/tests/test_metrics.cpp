// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fgzsd/error.hpp"
#include "fgzsd/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fgzsd;

TEST_CASE("iou basics") {
    BBox a{0, 0, 1, 1}, b{0.5, 0, 1.5, 1}, far{3, 3, 4, 4};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, far) == 0.0);
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(iou(a, b) == iou(b, a));
    BBox touching{1, 0, 2, 1};
    CHECK(iou(a, touching) == 0.0);
}

TEST_CASE("harmonic mean against the published table") {
    struct Row {
        double s, u, hm;
    };
    const Row rows[] = {{69.7, 1.3, 2.552},   {70.3, 1.53, 2.995},  {71.4, 1.54, 3.015}, {69.3, 2.04, 3.963},
                        {69.0, 2.55, 4.918},  {71.3, 2.88, 5.536},  {71.7, 3.03, 5.814}, {78.5, 9.85, 17.504}};
    for (const auto& r : rows) CHECK(std::abs(harmonic_mean(r.s, r.u) - r.hm) <= 0.001);
    CHECK(harmonic_mean(42.0, 42.0) == doctest::Approx(42.0));
    CHECK(test::code_of([] { harmonic_mean(0.0, 0.0); }) == ErrorCode::BothZero);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const double s = rng.uniform(0, 100), u = rng.uniform(0, 100);
        const double h = harmonic_mean(s, u);
        CHECK(h <= 2 * std::min(s, u) + 1e-12);
        CHECK(h <= (s + u) / 2 + 1e-12);
    }
}

TEST_CASE("recall edge cases and the duplicate-match fixture") {
    DetectionSet perfect;
    perfect.ground_truth = {{"i", {0, 0, 10, 10}, "a"}, {"i", {20, 20, 30, 30}, "b"}};
    for (const auto& g : perfect.ground_truth) perfect.predictions.push_back({g.image_id, g.box, g.class_id, 0.9});
    CHECK(recall_at_k(perfect, 100, 0.5) == 100.0);
    CHECK(mean_ap(perfect, 0.5) == 100.0);

    DetectionSet empty = perfect;
    empty.predictions.clear();
    CHECK(recall_at_k(empty, 100, 0.5) == 0.0);

    // Two predictions cover the same ground truth; the second is a duplicate and
    // cannot recall the far-off third box.
    DetectionSet dup;
    dup.ground_truth = {{"i", {0, 0, 10, 10}, "a"}, {"i", {1, 0, 11, 10}, "a"}, {"i", {50, 50, 60, 60}, "a"}};
    dup.predictions = {{"i", {0, 0, 10, 10}, "a", 0.9}, {"i", {0.5, 0, 10.5, 10}, "a", 0.8}};
    // Brute force over all assignments of predictions to distinct ground truth.
    std::vector<int> assign(3);
    int best = 0;
    for (int p0 = -1; p0 < 3; ++p0)
        for (int p1 = -1; p1 < 3; ++p1) {
            if (p0 >= 0 && p0 == p1) continue;
            int hits = 0;
            if (p0 >= 0 && iou(dup.predictions[0].box, dup.ground_truth[p0].box) >= 0.5) ++hits;
            if (p1 >= 0 && iou(dup.predictions[1].box, dup.ground_truth[p1].box) >= 0.5) ++hits;
            best = std::max(best, hits);
        }
    CHECK(best == 2);
    CHECK(recall_at_k(dup, 100, 0.5) == doctest::Approx(100.0 * best / 3.0));
    CHECK(recall_at_k(dup, 1, 0.5) == doctest::Approx(100.0 / 3.0));
    CHECK(recall_at_k(dup, 100, 0.5, true) == doctest::Approx(200.0 / 3.0));

    DetectionSet wrong;
    wrong.ground_truth = {{"i", {0, 0, 10, 10}, "a"}};
    wrong.predictions = {{"i", {0, 0, 10, 10}, "b", 0.9}};
    CHECK(average_precision(wrong, "a", 0.5) == 0.0);
    CHECK(recall_at_k(wrong, 100, 0.5) == 0.0);
    CHECK(recall_at_k(wrong, 100, 0.5, true) == 100.0);
}

TEST_CASE("recall and AP match independent oracles") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        auto d = oracle::random_detections(rng, 1 + rng.below(3), 1 + rng.below(3), 4, 6);
        for (double thr : {0.4, 0.5, 0.6}) {
            for (std::size_t k : {1, 3, 100}) {
                CHECK(recall_at_k(d, k, thr) == oracle::recall(d, k, thr));
                CHECK(recall_at_k(d, k, thr, true) == oracle::recall(d, k, thr, true));
            }
            CHECK(std::abs(mean_ap(d, thr) - oracle::map(d, thr)) < 1e-9);
        }
        // Monotonicity in k and threshold.
        CHECK(recall_at_k(d, 1, 0.5) <= recall_at_k(d, 3, 0.5));
        CHECK(recall_at_k(d, 100, 0.6) <= recall_at_k(d, 100, 0.4));
        // Strictly monotone score rescaling leaves AP alone.
        auto scaled = d;
        for (auto& p : scaled.predictions) p.score = std::exp(3.0 * p.score) - 7.0;
        CHECK(mean_ap(scaled, 0.5) == doctest::Approx(mean_ap(d, 0.5)).epsilon(1e-12));
    }
}

TEST_CASE("AP on a hand-checked five-detection list") {
    DetectionSet d;
    d.ground_truth = {{"i", {0, 0, 10, 10}, "a"}, {"i", {20, 0, 30, 10}, "a"}, {"j", {0, 0, 10, 10}, "a"}};
    d.predictions = {{"i", {0, 0, 10, 10}, "a", 0.95},    // TP
                     {"i", {40, 40, 50, 50}, "a", 0.9},   // FP
                     {"j", {0, 0, 10, 10}, "a", 0.8},     // TP
                     {"i", {0, 0, 10, 10}, "a", 0.7},     // FP (duplicate)
                     {"i", {20, 0, 30, 10}, "a", 0.6}};   // TP
    // Precisions at the hits: 1/1, 2/3, 3/5; envelope gives 1, 2/3, 3/5.
    const double want = 100.0 * (1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0;
    CHECK(average_precision(d, "a", 0.5) == doctest::Approx(want).epsilon(1e-13));
    CHECK(oracle::ap(d, "a", 0.5) == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("evaluate settings and report") {
    DetectionSet d;
    d.ground_truth = {{"i", {0, 0, 10, 10}, "s1"}, {"j", {0, 0, 10, 10}, "u1"}};
    for (const auto& g : d.ground_truth) d.predictions.push_back({g.image_id, g.box, g.class_id, 0.5});
    std::set<std::string> unseen{"u1"};
    auto full = evaluate(d, unseen, Setting::Gzsd);
    REQUIRE(full.seen);
    CHECK(full.seen->map_05 == 100.0);
    CHECK(full.unseen.recall_06 == 100.0);
    REQUIRE(full.hm);
    CHECK(*full.hm == 100.0);
    auto tsv = full.to_tsv();
    CHECK(tsv.find("Setting\tRecall@100 S\tRecall@100 U\tmAP S\tmAP U\tHM\n") == 0);
    CHECK(tsv.find("FG-GZSD\t100.000\t100.000\t100.000\t100.000\t100.000") != std::string::npos);

    CHECK(test::code_of([&] { evaluate(d, unseen, Setting::Zsd); }) == ErrorCode::SettingMismatch);
    auto only_unseen = filter_classes(d, unseen);
    auto zsd = evaluate(only_unseen, unseen, Setting::Zsd);
    CHECK(!zsd.seen);
    CHECK(zsd.unseen.map_05 == 100.0);
    CHECK(zsd.to_tsv().find("U\t100.000") != std::string::npos);

    DetectionSet blank;
    blank.ground_truth = d.ground_truth;
    auto none = evaluate(blank, unseen, Setting::Gzsd);
    CHECK(!none.hm);

    DetectionSet bad = d;
    bad.predictions[0].box = {5, 5, 1, 1};
    CHECK(test::code_of([&] { evaluate(bad, unseen, Setting::Gzsd); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("detections file round trip") {
    auto dir = test::temp_dir("dets");
    std::vector<Detection> dets{{"img1", {1.5, 2, 3, 4.25}, "17", 0.125}, {"img2", {0, 0, 1, 1}, "3", 1.0}};
    write_detections(dir / "d.jsonl", dets);
    auto back = read_detections(dir / "d.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].box.y_max == 4.25);
    CHECK(back[1].class_id == "3");
    {
        std::ofstream out(dir / "bad.jsonl");
        out << "{\"image_id\": 1}\n";
    }
    CHECK(test::code_of([&] { read_detections(dir / "bad.jsonl"); }) == ErrorCode::ParseError);
    CHECK(test::code_of([&] { read_detections(dir / "missing.jsonl"); }) == ErrorCode::IoError);
}
