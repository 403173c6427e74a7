// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fgzsd/error.hpp"

namespace fgzsd {

void DetectionSet::validate() const {
    for (const auto& d : predictions) {
        if (!d.box.valid()) fail(ErrorCode::InvalidArgument, "invalid prediction box in image '" + d.image_id + "'");
        if (!std::isfinite(d.score)) fail(ErrorCode::NonFinite, "non-finite score in image '" + d.image_id + "'");
    }
    for (const auto& g : ground_truth)
        if (!g.box.valid()) fail(ErrorCode::InvalidArgument, "invalid ground-truth box in image '" + g.image_id + "'");
}

double iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

namespace {

/// Indices sorted by descending score, stable in input order.
std::vector<std::size_t> by_score(const std::vector<const Detection*>& preds) {
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return preds[a]->score > preds[b]->score; });
    return order;
}

/// Greedy matching of score-ordered predictions to ground truth; returns,
/// per prediction in the given order, whether it matched.
std::vector<bool> greedy_match(const std::vector<const Detection*>& ordered, const std::vector<const GroundTruth*>& gts,
                               double iou_thresh, bool class_agnostic, std::size_t* matched_gt) {
    std::vector<bool> taken(gts.size(), false), hit(ordered.size(), false);
    for (std::size_t p = 0; p < ordered.size(); ++p) {
        double best = -1;
        std::size_t best_g = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g]->image_id != ordered[p]->image_id) continue;
            if (!class_agnostic && gts[g]->class_id != ordered[p]->class_id) continue;
            const double o = iou(ordered[p]->box, gts[g]->box);
            if (o >= iou_thresh && o > best) {
                best = o;
                best_g = g;
            }
        }
        if (best_g < gts.size()) {
            taken[best_g] = true;
            hit[p] = true;
        }
    }
    if (matched_gt) *matched_gt = static_cast<std::size_t>(std::count(taken.begin(), taken.end(), true));
    return hit;
}

}  // namespace

double recall_at_k(const DetectionSet& dets, std::size_t k, double iou_thresh, bool class_agnostic) {
    if (dets.ground_truth.empty()) return 0.0;
    std::map<std::string, std::vector<const Detection*>> per_image;
    for (const auto& d : dets.predictions) per_image[d.image_id].push_back(&d);
    std::map<std::string, std::vector<const GroundTruth*>> gt_image;
    for (const auto& g : dets.ground_truth) gt_image[g.image_id].push_back(&g);

    std::size_t recalled = 0;
    for (const auto& [image, gts] : gt_image) {
        auto it = per_image.find(image);
        if (it == per_image.end()) continue;
        auto order = by_score(it->second);
        std::vector<const Detection*> kept;
        for (std::size_t i = 0; i < order.size() && i < k; ++i) kept.push_back(it->second[order[i]]);
        std::size_t matched = 0;
        greedy_match(kept, gts, iou_thresh, class_agnostic, &matched);
        recalled += matched;
    }
    return 100.0 * static_cast<double>(recalled) / static_cast<double>(dets.ground_truth.size());
}

double average_precision(const DetectionSet& dets, const std::string& class_id, double iou_thresh) {
    std::vector<const GroundTruth*> gts;
    for (const auto& g : dets.ground_truth)
        if (g.class_id == class_id) gts.push_back(&g);
    if (gts.empty()) return 0.0;
    std::vector<const Detection*> preds;
    for (const auto& d : dets.predictions)
        if (d.class_id == class_id) preds.push_back(&d);
    auto order = by_score(preds);
    std::vector<const Detection*> ordered;
    for (std::size_t i : order) ordered.push_back(preds[i]);
    auto hit = greedy_match(ordered, gts, iou_thresh, false, nullptr);

    std::vector<double> precision, recall;
    double tp = 0;
    for (std::size_t i = 0; i < hit.size(); ++i) {
        tp += hit[i] ? 1.0 : 0.0;
        precision.push_back(tp / static_cast<double>(i + 1));
        recall.push_back(tp / static_cast<double>(gts.size()));
    }
    // Monotone envelope from the right, then area under the step curve.
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0, prev_recall = 0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return 100.0 * ap;
}

double mean_ap(const DetectionSet& dets, double iou_thresh) {
    std::set<std::string> classes;
    for (const auto& g : dets.ground_truth) classes.insert(g.class_id);
    if (classes.empty()) return 0.0;
    double total = 0;
    for (const auto& c : classes) total += average_precision(dets, c, iou_thresh);
    return total / static_cast<double>(classes.size());
}

double harmonic_mean(double s, double u) {
    if (s < 0 || u < 0) fail(ErrorCode::InvalidArgument, "harmonic mean of negative values");
    if (s + u == 0.0) fail(ErrorCode::BothZero, "harmonic mean undefined when both values are zero");
    return 2.0 * s * u / (s + u);
}

Setting parse_setting(const std::string& s) {
    if (s == "zsd" || s == "fg-zsd" || s == "FG-ZSD") return Setting::Zsd;
    if (s == "gzsd" || s == "fg-gzsd" || s == "FG-GZSD") return Setting::Gzsd;
    fail(ErrorCode::ConfigError, "setting must be zsd or gzsd, got '" + s + "'");
}

const char* to_string(Setting s) { return s == Setting::Zsd ? "FG-ZSD" : "FG-GZSD"; }

DetectionSet filter_classes(const DetectionSet& dets, const std::set<std::string>& keep) {
    DetectionSet out;
    for (const auto& d : dets.predictions)
        if (keep.count(d.class_id)) out.predictions.push_back(d);
    for (const auto& g : dets.ground_truth)
        if (keep.count(g.class_id)) out.ground_truth.push_back(g);
    return out;
}

namespace {

SplitMetrics split_metrics(const DetectionSet& dets, bool class_agnostic) {
    return {recall_at_k(dets, 100, 0.4, class_agnostic), recall_at_k(dets, 100, 0.5, class_agnostic),
            recall_at_k(dets, 100, 0.6, class_agnostic), mean_ap(dets, 0.5)};
}

}  // namespace

EvalReport evaluate(const DetectionSet& dets, const std::set<std::string>& unseen_classes, Setting setting,
                    bool class_agnostic_recall) {
    dets.validate();
    std::set<std::string> seen_classes;
    for (const auto& g : dets.ground_truth)
        if (!unseen_classes.count(g.class_id)) seen_classes.insert(g.class_id);
    for (const auto& d : dets.predictions)
        if (!unseen_classes.count(d.class_id)) seen_classes.insert(d.class_id);

    EvalReport r;
    r.setting = setting;
    if (setting == Setting::Zsd) {
        for (const auto& g : dets.ground_truth)
            if (!unseen_classes.count(g.class_id))
                fail(ErrorCode::SettingMismatch, "seen-class ground truth '" + g.class_id + "' under FG-ZSD");
        r.unseen = split_metrics(filter_classes(dets, unseen_classes), class_agnostic_recall);
        return r;
    }
    r.seen = split_metrics(filter_classes(dets, seen_classes), class_agnostic_recall);
    r.unseen = split_metrics(filter_classes(dets, unseen_classes), class_agnostic_recall);
    if (r.seen->map_05 + r.unseen.map_05 > 0) r.hm = harmonic_mean(r.seen->map_05, r.unseen.map_05);
    return r;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

std::string EvalReport::to_tsv() const {
    std::ostringstream out;
    if (setting == Setting::Gzsd) {
        out << "Setting\tRecall@100 S\tRecall@100 U\tmAP S\tmAP U\tHM\n";
        out << to_string(setting) << '\t' << fmt(seen->recall_05) << '\t' << fmt(unseen.recall_05) << '\t'
            << fmt(seen->map_05) << '\t' << fmt(unseen.map_05) << '\t' << (hm ? fmt(*hm) : "-") << "\n\n";
    }
    out << "Split\tRecall@100 IoU=0.4\tRecall@100 IoU=0.5\tRecall@100 IoU=0.6\tmAP IoU=0.5\n";
    auto row = [&](const char* name, const SplitMetrics& m) {
        out << name << '\t' << fmt(m.recall_04) << '\t' << fmt(m.recall_05) << '\t' << fmt(m.recall_06) << '\t'
            << fmt(m.map_05) << '\n';
    };
    if (seen) row("S", *seen);
    row("U", unseen);
    return out.str();
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open detections file " + path.string());
    std::vector<Detection> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            Detection d;
            const auto& id = j.at("image_id");
            d.image_id = id.is_string() ? id.get<std::string>() : id.dump();
            d.box = {j.at("x_min").get<double>(), j.at("y_min").get<double>(), j.at("x_max").get<double>(),
                     j.at("y_max").get<double>()};
            const auto& cls = j.at("class_id");
            d.class_id = cls.is_string() ? cls.get<std::string>() : cls.dump();
            d.score = j.at("score").get<double>();
            out.push_back(d);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
    for (const auto& d : dets) {
        nlohmann::json j = {{"image_id", d.image_id}, {"x_min", d.box.x_min}, {"y_min", d.box.y_min},
                            {"x_max", d.box.x_max},   {"y_max", d.box.y_max}, {"class_id", d.class_id},
                            {"score", d.score}};
        out << j.dump() << '\n';
    }
}

std::vector<GroundTruth> ground_truth_of(const DatasetManifest& manifest) {
    std::vector<GroundTruth> out;
    for (const auto& img : manifest.images)
        for (const auto& b : img.boxes) out.push_back({img.id, b.box, b.class_id});
    return out;
}

}  // namespace fgzsd
