// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale benchmark and the three-phase training schedule around the
// hierarchical head: train the detector on seen classes, train the
// text-conditioned generator, then fine-tune the head on synthesized unseen
// features mixed with real seen ones.
//
// Benchmark: G genera x 4 species. A species is a pair of binary attributes
// (a, b); its 2-D feature is the genus centre plus (±offset, ±offset) plus
// Gaussian noise, and its text is the tokens "genus_g a_x b_y". Even genera
// hold out species 00 and 11, odd genera 01 and 10, so every attribute pair is
// seen somewhere.
//
// The raw feature is the sum of the parts; the detector only sees that sum,
// while alignment sees the parts as separate image regions.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgzsd/alignment.hpp"
#include "fgzsd/data_model.hpp"
#include "fgzsd/fusion.hpp"
#include "fgzsd/hicl.hpp"
#include "fgzsd/hier_head.hpp"
#include "fgzsd/metrics.hpp"
#include "fgzsd/numerics.hpp"
#include "fgzsd/taxonomy.hpp"

namespace fgzsd {

struct ToyBenchmarkSpec {
    std::size_t genera = 4;
    std::size_t train_per_class = 40;
    std::size_t test_per_class = 20;
    double genus_radius = 6.0;
    double attribute_offset = 1.5;
    double noise = 0.3;

    void validate() const;
    nlohmann::json to_json() const;
    static ToyBenchmarkSpec from_json(const nlohmann::json& j);
};

struct ToySample {
    std::string image_id;
    NodeId leaf = 0;
    Vector raw;  // 2-D class feature
    BBox box;
    BBox proposal;  // ground truth with a biased jitter
    /// Image sub-regions for text alignment, one column each: the genus part,
    /// the two attribute parts and background. Rows are channels (genus x,
    /// genus y, attribute a, attribute b); every entry carries noise.
    Matrix regions;
};

struct ToyBenchmark {
    ToyBenchmarkSpec spec;
    TaxonomyTree tree;
    SplitAssignment split;
    std::vector<std::string> vocab;
    /// Token ids of each leaf's text, indexed like tree.leaves().
    std::vector<std::vector<std::size_t>> tokens;
    std::vector<ToySample> train;  // seen classes only
    std::vector<ToySample> test;   // every class

    const std::vector<std::size_t>& tokens_of(NodeId leaf) const { return tokens.at(tree.leaf_index(leaf)); }
    std::set<NodeId> seen_set() const { return {split.seen.begin(), split.seen.end()}; }
    std::set<NodeId> unseen_set() const { return {split.unseen.begin(), split.unseen.end()}; }
    /// Test images as a manifest (one box per image, attribute text as description).
    nlohmann::json test_manifest() const;
};

ToyBenchmark make_toy_benchmark(const ToyBenchmarkSpec& spec, std::uint64_t seed);

struct PhaseSchedule {
    std::size_t align_steps = 150;
    std::size_t detector_steps = 400;
    std::size_t gan_steps = 600;
    std::size_t finetune_steps = 200;
    std::size_t batch = 16;
    double lr = 0.01;
    double align_lr = 0.05;
    double gan_lr = 0.005;
};

struct ToyConfig {
    std::uint64_t seed = 0;
    ToyBenchmarkSpec bench;
    std::size_t feature_dim = 8;  // ROI feature dim, equal to the text dim
    std::size_t backbone_hidden = 16;
    double xi = 5.0;
    AttentionMode attention = AttentionMode::Literal;
    HiclConfig hicl;
    double momentum = 0.99;
    bool use_hicl = true;
    LossWeights weights;
    bool flat_head = false;
    Decoding decoding = Decoding::Greedy;
    bool finetune_full_head = false;
    std::size_t gan_noise = 4;
    std::size_t gan_channels = 8;
    std::size_t gan_hidden = 16;
    std::size_t gan_disc_hidden = 64;
    double gan_adam_beta1 = 0.5;
    std::size_t real_maps_per_class = 10;
    std::size_t synth_maps_per_class = 4;
    PhaseSchedule schedule;

    GanConfig gan_config() const;
    EncoderConfig encoder_config() const;
    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are a ConfigError.
    static ToyConfig from_json(const nlohmann::json& j);
};

/// Every trainable part of the pipeline.
struct ToyModel {
    ToyConfig config;
    TaxonomyTree tree;       // full taxonomy
    TaxonomyTree head_tree;  // taxonomy, or its flattened form
    ToyEncoders encoders;
    MlpParams backbone;  // 2 -> hidden -> feature_dim
    HierHead head;
    GeneratorParams generator;
    DiscriminatorParams discriminator;
    MomentumCacheBank caches;
    Matrix log_sim;

    static ToyModel init(const ToyConfig& cfg, const ToyBenchmark& bench);

    Vector features(const Vector& raw) const;
    /// Text conditioning of every leaf, keyed by leaf name.
    std::map<std::string, ClassText> class_texts(const ToyBenchmark& bench) const;
    /// Rebuilds prototypes and the node similarity table from the current text encoder.
    void refresh_semantics(const ToyBenchmark& bench);

    std::vector<std::pair<std::string, Matrix*>> named_parameters();
    void save(const std::filesystem::path& base) const;
    static ToyModel load(const std::filesystem::path& base, const ToyBenchmark& bench);
};

struct LogEntry {
    std::size_t step = 0;
    std::string phase;
    LossComponents components;
    double total = 0;

    nlohmann::json to_json() const;
};

void run_alignment(ToyModel& model, const ToyBenchmark& bench, std::vector<LogEntry>& log);
void run_detector(ToyModel& model, const ToyBenchmark& bench, std::vector<LogEntry>& log);
void run_gan(ToyModel& model, const ToyBenchmark& bench, std::vector<LogEntry>& log);
void run_finetune(ToyModel& model, const ToyBenchmark& bench, std::vector<LogEntry>& log);

struct ToyRun {
    ToyModel model;
    std::vector<LogEntry> log;
};

/// All phases in order: alignment (its text vectors seed the prototypes),
/// detector, generator, fine-tuning.
ToyRun train_toy(const ToyConfig& cfg, const ToyBenchmark& bench);
ToyRun train_toy(const ToyConfig& cfg);

struct ToyEval {
    double seen_accuracy = 0;    // seen test samples, decoded over all leaves
    double unseen_accuracy = 0;  // unseen test samples, decoded over unseen leaves
    double intra_genus = 0;      // mean distance between species centroids within a genus
    double inter_genus = 0;      // mean distance between species centroids across genera
};

ToyEval evaluate_toy(const ToyModel& model, const ToyBenchmark& bench);

/// Detections on the test images; restricted to unseen leaves when `unseen_only`.
std::vector<Detection> toy_detections(const ToyModel& model, const ToyBenchmark& bench, bool unseen_only);

}  // namespace fgzsd
