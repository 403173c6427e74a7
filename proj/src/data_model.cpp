// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fgzsd/error.hpp"
#include "fgzsd/rng.hpp"

namespace fgzsd {

bool BBox::valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) && std::isfinite(y_max) &&
           x_min < x_max && y_min < y_max;
}

const ClassRecord& DatasetManifest::class_record(const std::string& id) const {
    for (const auto& c : classes)
        if (c.id == id) return c;
    fail(ErrorCode::UnknownClass, "no class with id '" + id + "'");
}

std::string DatasetManifest::level_label(std::size_t level) const {
    if (level >= 1 && level <= level_names.size()) return level_names[level - 1];
    return "level" + std::to_string(level);
}

namespace {

// Ids may be given as strings or integers; both normalise to a string.
std::string id_string(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    fail(ErrorCode::ParseError, "id must be a string or integer");
}

}  // namespace

DatasetManifest parse_manifest(const nlohmann::json& j) {
    DatasetManifest m;
    try {
        if (!j.is_object()) fail(ErrorCode::ParseError, "manifest must be a JSON object");
        if (j.contains("taxonomy")) m.level_names = j.at("taxonomy").get<std::vector<std::string>>();
        for (const auto& c : j.at("classes")) {
            ClassRecord rec;
            rec.id = id_string(c.at("id"));
            rec.name = c.value("name", rec.id);
            rec.description = c.value("description", std::string());
            rec.path = c.at("path").get<std::vector<std::string>>();
            m.classes.push_back(std::move(rec));
        }
        for (const auto& im : j.at("images")) {
            ImageRecord rec;
            rec.id = id_string(im.at("id"));
            rec.width = im.at("w").get<double>();
            rec.height = im.at("h").get<double>();
            if (im.contains("captions")) rec.captions = im.at("captions").get<std::vector<std::string>>();
            for (const auto& b : im.at("boxes")) {
                Annotation a;
                a.box = {b.at("x_min").get<double>(), b.at("y_min").get<double>(), b.at("x_max").get<double>(),
                         b.at("y_max").get<double>()};
                a.class_id = id_string(b.at("class_id"));
                rec.boxes.push_back(std::move(a));
            }
            m.images.push_back(std::move(rec));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, e.what());
    }

    std::vector<std::string> violations;
    if (m.classes.empty()) violations.push_back("manifest declares no classes");
    std::set<std::string> class_ids, image_ids;
    const std::size_t depth = m.classes.empty() ? 0 : m.classes.front().path.size();
    for (const auto& c : m.classes) {
        if (!class_ids.insert(c.id).second) violations.push_back("class " + c.id + ": duplicate class id");
        if (c.path.size() != depth) violations.push_back("class " + c.id + ": path depth differs from other classes");
        if (!m.level_names.empty() && c.path.size() + 1 != m.level_names.size()) {
            violations.push_back("class " + c.id + ": path depth does not match taxonomy level names");
        }
    }
    const bool caption_bearing =
        std::any_of(m.images.begin(), m.images.end(), [](const ImageRecord& im) { return !im.captions.empty(); });
    for (const auto& im : m.images) {
        const std::string where = "image " + im.id + ": ";
        if (!image_ids.insert(im.id).second) violations.push_back(where + "duplicate image id");
        if (!(im.width > 0 && im.height > 0)) violations.push_back(where + "non-positive size");
        if (caption_bearing && im.captions.empty()) violations.push_back(where + "no captions");
        for (std::size_t k = 0; k < im.boxes.size(); ++k) {
            const auto& a = im.boxes[k];
            const std::string box = where + "box " + std::to_string(k) + ": ";
            if (!class_ids.count(a.class_id)) violations.push_back(box + "unknown class '" + a.class_id + "'");
            if (!a.box.valid()) {
                violations.push_back(box + "requires x_min < x_max and y_min < y_max");
            } else if (a.box.x_min < 0 || a.box.y_min < 0 || a.box.x_max > im.width || a.box.y_max > im.height) {
                violations.push_back(box + "outside image bounds");
            }
        }
    }
    if (violations.empty()) {
        std::vector<TaxonomyRow> rows;
        for (const auto& c : m.classes) rows.push_back({c.id, c.path});
        try {
            m.tree = TaxonomyTree::build(rows);
        } catch (const Error& e) {
            violations.push_back(std::string("taxonomy: ") + e.what());
        }
    }
    if (!violations.empty()) throw ValidationError(std::move(violations));
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
    return parse_manifest(j);
}

bool SplitAssignment::is_unseen(NodeId leaf) const { return std::binary_search(unseen.begin(), unseen.end(), leaf); }

nlohmann::json SplitAssignment::to_json(const TaxonomyTree& tree, std::uint64_t seed) const {
    nlohmann::json s = nlohmann::json::array(), u = nlohmann::json::array();
    for (NodeId n : seen) s.push_back(tree.node(n).name);
    for (NodeId n : unseen) u.push_back(tree.node(n).name);
    return {{"seen", std::move(s)}, {"unseen", std::move(u)}, {"seed", seed}};
}

SplitAssignment SplitAssignment::from_json(const nlohmann::json& j, const TaxonomyTree& tree) {
    SplitAssignment out;
    try {
        for (const auto& id : j.at("seen")) out.seen.push_back(tree.leaf(id_string(id)));
        for (const auto& id : j.at("unseen")) out.unseen.push_back(tree.leaf(id_string(id)));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, e.what());
    }
    std::sort(out.seen.begin(), out.seen.end());
    std::sort(out.unseen.begin(), out.unseen.end());
    return out;
}

SplitAssignment genus_split(const TaxonomyTree& tree, double fraction, std::uint64_t seed) {
    if (tree.depth() < 2) fail(ErrorCode::InvalidArgument, "genus split needs a genus level (depth >= 2)");
    if (!(fraction > 0.0 && fraction < 0.5)) fail(ErrorCode::InvalidArgument, "unseen fraction must lie in (0, 0.5)");

    const std::size_t n_leaves = tree.leaves().size();
    const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_leaves)));
    std::vector<NodeId> multi, singles;
    for (NodeId g : tree.nodes_at_level(tree.depth() - 1)) {
        (tree.node(g).children.size() >= 2 ? multi : singles).push_back(g);
    }
    const std::size_t floor = multi.size();
    if (floor > target + singles.size()) {
        fail(ErrorCode::InfeasibleFraction, "one unseen species per multi-species genus needs " + std::to_string(floor) +
                                                " unseen classes, target is " + std::to_string(target));
    }

    Rng rng(seed);
    std::set<NodeId> unseen;
    std::map<NodeId, std::size_t> unseen_in_genus;
    for (NodeId g : multi) {
        const auto& ch = tree.node(g).children;
        unseen.insert(ch[rng.below(ch.size())]);
        unseen_in_genus[g] = 1;
    }

    // Discretionary pools, each ordered by leaf id and then shuffled with the seed.
    auto by_name = [&](std::vector<NodeId>& v) {
        std::sort(v.begin(), v.end(), [&](NodeId a, NodeId b) { return tree.node(a).name < tree.node(b).name; });
        rng.shuffle(v);
    };
    std::size_t need = target > floor ? target - floor : 0;

    std::vector<NodeId> pool;
    for (NodeId g : singles) pool.push_back(tree.node(g).children.front());
    by_name(pool);
    for (std::size_t i = 0; i < pool.size() && need > 0; ++i, --need) unseen.insert(pool[i]);

    if (need > 0) {
        pool.clear();
        for (NodeId g : multi)
            for (NodeId c : tree.node(g).children)
                if (!unseen.count(c)) pool.push_back(c);
        by_name(pool);
        std::vector<NodeId> leftovers;
        for (NodeId c : pool) {
            const NodeId g = *tree.node(c).parent;
            if (need > 0 && unseen_in_genus[g] + 1 < tree.node(g).children.size()) {
                unseen.insert(c);
                ++unseen_in_genus[g];
                --need;
            } else {
                leftovers.push_back(c);
            }
        }
        for (std::size_t i = 0; i < leftovers.size() && need > 0; ++i, --need) unseen.insert(leftovers[i]);
    }

    SplitAssignment out;
    for (NodeId l : tree.leaves()) (unseen.count(l) ? out.unseen : out.seen).push_back(l);
    return out;
}

std::vector<std::string> audit_split(const TaxonomyTree& tree, const SplitAssignment& split) {
    std::vector<std::string> problems;
    std::map<NodeId, int> membership;
    for (NodeId n : split.seen) membership[n] |= 1;
    for (NodeId n : split.unseen) membership[n] |= 2;
    for (const auto& [n, m] : membership) {
        if (!tree.is_leaf(n)) problems.push_back("node " + tree.node(n).name + " is not a leaf");
        if (m == 3) problems.push_back("leaf " + tree.node(n).name + " is both seen and unseen");
    }
    for (NodeId l : tree.leaves())
        if (!membership.count(l)) problems.push_back("leaf " + tree.node(l).name + " is unassigned");
    if (tree.depth() >= 2) {
        for (NodeId g : tree.nodes_at_level(tree.depth() - 1)) {
            const auto& ch = tree.node(g).children;
            if (ch.size() < 2) continue;
            const bool any_unseen = std::any_of(ch.begin(), ch.end(), [&](NodeId c) { return membership[c] & 2; });
            if (!any_unseen) problems.push_back("genus " + tree.node(g).name + " has no unseen species");
        }
    }
    return problems;
}

namespace {

struct ColumnBuilder {
    std::set<NodeId> nodes;
    std::set<std::string> images;
    std::map<NodeId, std::set<std::string>> images_per_class;
    std::size_t captions = 0;
    std::vector<double> areas, aspects;
};

StatsColumn finish(const ColumnBuilder& b, const TaxonomyTree& tree, const std::vector<NodeId>& classes) {
    StatsColumn c;
    c.nodes_per_level.assign(tree.depth(), 0);
    for (NodeId n : b.nodes)
        if (tree.node(n).level >= 1) ++c.nodes_per_level[tree.node(n).level - 1];
    c.images = b.images.size();
    c.captions = b.captions;
    if (!classes.empty()) {
        std::size_t lo = SIZE_MAX, hi = 0, total = 0;
        for (NodeId cls : classes) {
            auto it = b.images_per_class.find(cls);
            const std::size_t n = it == b.images_per_class.end() ? 0 : it->second.size();
            lo = std::min(lo, n);
            hi = std::max(hi, n);
            total += n;
        }
        c.img_per_class_min = lo;
        c.img_per_class_max = hi;
        c.img_per_class_avg = static_cast<double>(total) / static_cast<double>(classes.size());
    }
    if (!b.areas.empty()) {
        c.box_area_min = *std::min_element(b.areas.begin(), b.areas.end());
        c.box_area_max = *std::max_element(b.areas.begin(), b.areas.end());
        c.box_aspect_min = *std::min_element(b.aspects.begin(), b.aspects.end());
        c.box_aspect_max = *std::max_element(b.aspects.begin(), b.aspects.end());
    }
    return c;
}

std::string num(double v, int decimals) {
    char buf[64];
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        std::snprintf(buf, sizeof buf, "%.0f", v);
    } else {
        std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    }
    return buf;
}

std::string range(double lo, double hi, int decimals) { return "[" + num(lo, decimals) + ", " + num(hi, decimals) + "]"; }

}  // namespace

StatsReport dataset_stats(const DatasetManifest& manifest, const SplitAssignment& split) {
    const TaxonomyTree& tree = manifest.tree;
    StatsReport report;
    for (std::size_t l = 1; l <= tree.depth(); ++l) {
        std::string label = "#" + manifest.level_label(l);
        if (l == tree.depth()) label += "(#cls)";
        report.level_labels.push_back(std::move(label));
    }

    ColumnBuilder all, seen, unseen;
    auto touch_class = [&](ColumnBuilder& b, NodeId leaf) {
        for (NodeId n : tree.path(leaf)) b.nodes.insert(n);
    };
    for (NodeId l : tree.leaves()) touch_class(all, l);
    for (NodeId l : split.seen) touch_class(seen, l);
    for (NodeId l : split.unseen) touch_class(unseen, l);

    for (const auto& im : manifest.images) {
        bool has_seen = false, has_unseen = false;
        all.images.insert(im.id);
        all.captions += im.captions.size();
        for (const auto& a : im.boxes) {
            const NodeId leaf = tree.leaf(a.class_id);
            const bool u = split.is_unseen(leaf);
            ColumnBuilder& side = u ? unseen : seen;
            (u ? has_unseen : has_seen) = true;
            for (ColumnBuilder* b : {&all, &side}) {
                b->images_per_class[leaf].insert(im.id);
                b->areas.push_back(a.box.area());
                b->aspects.push_back(a.box.width() / a.box.height());
            }
        }
        if (has_seen) {
            seen.images.insert(im.id);
            seen.captions += im.captions.size();
        }
        if (has_unseen) {
            unseen.images.insert(im.id);
            unseen.captions += im.captions.size();
        }
        if (has_seen && has_unseen) report.mixed_images.push_back(im.id);
    }
    report.total = finish(all, tree, tree.leaves());
    report.seen = finish(seen, tree, split.seen);
    report.unseen = finish(unseen, tree, split.unseen);
    return report;
}

std::string StatsReport::to_tsv() const {
    std::ostringstream os;
    const StatsColumn* cols[] = {&total, &seen, &unseen};
    os << "\tTotal\tSeen classes\tUnseen classes\n";
    for (std::size_t l = 0; l < level_labels.size(); ++l) {
        os << level_labels[l];
        for (auto* c : cols) os << '\t' << c->nodes_per_level[l];
        os << '\n';
    }
    auto row = [&](const char* label, auto cell) {
        os << label;
        for (auto* c : cols) os << '\t' << cell(*c);
        os << '\n';
    };
    row("#images(#img)", [](const StatsColumn& c) { return std::to_string(c.images); });
    row("Range of #img/#cls", [](const StatsColumn& c) {
        return range(static_cast<double>(c.img_per_class_min), static_cast<double>(c.img_per_class_max), 0);
    });
    row("Avg of #img/#cls", [](const StatsColumn& c) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", c.img_per_class_avg);
        return std::string(buf);
    });
    row("#img captions", [](const StatsColumn& c) { return std::to_string(c.captions); });
    row("box-size range", [](const StatsColumn& c) { return range(c.box_area_min, c.box_area_max, 2); });
    row("box W/H range", [](const StatsColumn& c) { return range(c.box_aspect_min, c.box_aspect_max, 2); });
    os << "#mixed-split images\t" << mixed_images.size() << "\t-\t-\n";
    return os.str();
}

}  // namespace fgzsd
