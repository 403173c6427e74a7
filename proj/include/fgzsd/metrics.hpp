// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Detection evaluation: IoU, Recall@k, all-point-interpolated AP/mAP, and the
// seen/unseen/harmonic-mean report.

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fgzsd/data_model.hpp"

namespace fgzsd {

struct Detection {
    std::string image_id;
    BBox box;
    std::string class_id;
    double score = 0;
};

struct GroundTruth {
    std::string image_id;
    BBox box;
    std::string class_id;
};

struct DetectionSet {
    std::vector<Detection> predictions;
    std::vector<GroundTruth> ground_truth;

    /// Rejects invalid boxes and non-finite scores.
    void validate() const;
};

double iou(const BBox& a, const BBox& b);

/// Percent of ground-truth boxes recalled by the top-k predictions of their
/// image. Predictions are matched greedily in descending score order (input
/// order breaks ties); each takes the unmatched ground truth of the same class
/// (any class when class_agnostic) with the highest IoU >= iou_thresh.
double recall_at_k(const DetectionSet& dets, std::size_t k, double iou_thresh, bool class_agnostic = false);

/// All-point interpolated AP for one class, in percent. Zero when the class
/// has no ground truth.
double average_precision(const DetectionSet& dets, const std::string& class_id, double iou_thresh);
/// Mean AP over classes with at least one ground-truth box.
double mean_ap(const DetectionSet& dets, double iou_thresh);

/// 2su/(s+u). Throws BothZero when s = u = 0.
double harmonic_mean(double s, double u);

enum class Setting { Zsd, Gzsd };
Setting parse_setting(const std::string& s);
const char* to_string(Setting s);

struct SplitMetrics {
    double recall_04 = 0, recall_05 = 0, recall_06 = 0;
    double map_05 = 0;
};

struct EvalReport {
    Setting setting = Setting::Zsd;
    std::optional<SplitMetrics> seen;
    SplitMetrics unseen;
    std::optional<double> hm;

    std::string to_tsv() const;
};

/// Under Zsd any seen-class ground truth is a SettingMismatch. Each split is
/// scored on its own ground truth and on predictions labelled with its classes.
EvalReport evaluate(const DetectionSet& dets, const std::set<std::string>& unseen_classes, Setting setting,
                    bool class_agnostic_recall = false);

/// Restricts a set to ground truth and predictions whose class is in `keep`.
DetectionSet filter_classes(const DetectionSet& dets, const std::set<std::string>& keep);

/// JSON-lines, one detection per line.
std::vector<Detection> read_detections(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets);

/// Ground truth from every box of a manifest.
std::vector<GroundTruth> ground_truth_of(const DatasetManifest& manifest);

}  // namespace fgzsd
