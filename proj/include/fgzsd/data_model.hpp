// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgzsd/taxonomy.hpp"

namespace fgzsd {

struct BBox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    bool valid() const;
};

struct Annotation {
    BBox box;
    std::string class_id;
};

struct ImageRecord {
    std::string id;
    double width = 0;
    double height = 0;
    std::vector<std::string> captions;
    std::vector<Annotation> boxes;
};

struct ClassRecord {
    std::string id;
    std::string name;
    std::string description;
    std::vector<std::string> path;  // ancestors, level 1 .. L-1
};

/// Parsed and validated dataset manifest. Taxonomy leaves are named by class id.
struct DatasetManifest {
    std::vector<std::string> level_names;  // levels 1..L; may be empty
    std::vector<ClassRecord> classes;
    std::vector<ImageRecord> images;
    TaxonomyTree tree;

    const ClassRecord& class_record(const std::string& id) const;
    /// Display label for a level (1..L), falling back to "level<k>".
    std::string level_label(std::size_t level) const;
};

/// Parses and validates. Schema/type problems raise ParseError; semantic
/// violations are collected and raised together as ValidationError.
DatasetManifest parse_manifest(const nlohmann::json& j);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct SplitAssignment {
    std::vector<NodeId> seen;    // node order
    std::vector<NodeId> unseen;  // node order

    bool is_unseen(NodeId leaf) const;
    nlohmann::json to_json(const TaxonomyTree& tree, std::uint64_t seed) const;
    static SplitAssignment from_json(const nlohmann::json& j, const TaxonomyTree& tree);
};

/// Genus-centred seen/unseen split. Every genus (level L-1 node) with two or
/// more species gets one unseen species; the remaining quota comes first from
/// single-species genera, then from multi-species genera while keeping one seen
/// species each, and only then from anywhere.
SplitAssignment genus_split(const TaxonomyTree& tree, double target_unseen_fraction, std::uint64_t seed);

/// Constraint audit used by tests and the CLI: disjoint, covering, and the
/// one-unseen-per-multi-species-genus floor. Returns violated constraints.
std::vector<std::string> audit_split(const TaxonomyTree& tree, const SplitAssignment& split);

struct StatsColumn {
    std::vector<std::size_t> nodes_per_level;  // index k = level k+1
    std::size_t images = 0;
    std::size_t img_per_class_min = 0;
    std::size_t img_per_class_max = 0;
    double img_per_class_avg = 0;
    std::size_t captions = 0;
    double box_area_min = 0;
    double box_area_max = 0;
    double box_aspect_min = 0;
    double box_aspect_max = 0;
};

struct StatsReport {
    std::vector<std::string> level_labels;  // "#orders", ..., "#species(#cls)"
    StatsColumn total, seen, unseen;
    std::vector<std::string> mixed_images;  // images holding boxes from both splits

    /// Tab-separated table with the row layout of the dataset statistics table.
    std::string to_tsv() const;
};

StatsReport dataset_stats(const DatasetManifest& manifest, const SplitAssignment& split);

}  // namespace fgzsd
