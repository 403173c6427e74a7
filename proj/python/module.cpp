// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the main operations. Matrices cross the boundary as
// 2-D float64 numpy arrays; configs and reports as JSON-compatible dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "fgzsd/alignment.hpp"
#include "fgzsd/data_model.hpp"
#include "fgzsd/error.hpp"
#include "fgzsd/gradient_suite.hpp"
#include "fgzsd/hicl.hpp"
#include "fgzsd/hier_head.hpp"
#include "fgzsd/metrics.hpp"
#include "fgzsd/numerics.hpp"
#include "fgzsd/taxonomy.hpp"
#include "fgzsd/toy.hpp"

namespace py = pybind11;
using namespace fgzsd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() == 1) {
        Matrix m(static_cast<std::size_t>(a.shape(0)), 1);
        std::copy(a.data(), a.data() + a.size(), m.data().begin());
        return m;
    }
    if (a.ndim() != 2) throw py::value_error("expected a 1-D or 2-D array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data().begin());
    return m;
}

Array to_array(const Matrix& m) {
    Array a({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), a.mutable_data());
    return a;
}

// nlohmann <-> Python through the json module keeps the binding small.
nlohmann::json to_json(const py::object& o) {
    const auto text = py::module_::import("json").attr("dumps")(o).cast<std::string>();
    return nlohmann::json::parse(text);
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

TaxonomyTree tree_from_rows(const std::vector<std::pair<std::string, std::vector<std::string>>>& rows) {
    std::vector<TaxonomyRow> r;
    for (const auto& [leaf, ancestors] : rows) r.push_back({leaf, ancestors});
    return TaxonomyTree::build(r);
}

BBox to_box(const std::vector<double>& b) {
    if (b.size() != 4) throw py::value_error("a box is [x_min, y_min, x_max, y_max]");
    return {b[0], b[1], b[2], b[3]};
}

py::dict eval_dict(const SplitMetrics& s) {
    py::dict d;
    d["recall_04"] = s.recall_04;
    d["recall_05"] = s.recall_05;
    d["recall_06"] = s.recall_06;
    d["map_05"] = s.map_05;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Fine-grained zero-shot detection core";

    static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(error, e.what());
        }
    });

    // numerics
    m.def("logsumexp", [](const std::vector<double>& z) { return logsumexp(z); });
    m.def("cosine", [](const std::vector<double>& a, const std::vector<double>& b) { return cosine(a, b); });

    // metrics
    m.def("harmonic_mean", &harmonic_mean, py::arg("seen"), py::arg("unseen"));
    m.def(
        "iou", [](const std::vector<double>& a, const std::vector<double>& b) { return iou(to_box(a), to_box(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "evaluate",
        [](const std::vector<py::dict>& predictions, const std::vector<py::dict>& ground_truth,
           const std::set<std::string>& unseen, const std::string& setting, bool class_agnostic) {
            DetectionSet d;
            for (const auto& p : predictions)
                d.predictions.push_back({p["image_id"].cast<std::string>(), to_box(p["box"].cast<std::vector<double>>()),
                                         p["class_id"].cast<std::string>(), p["score"].cast<double>()});
            for (const auto& g : ground_truth)
                d.ground_truth.push_back({g["image_id"].cast<std::string>(),
                                          to_box(g["box"].cast<std::vector<double>>()), g["class_id"].cast<std::string>()});
            const auto r = evaluate(d, unseen, parse_setting(setting), class_agnostic);
            py::dict out;
            out["setting"] = to_string(r.setting);
            out["unseen"] = eval_dict(r.unseen);
            out["seen"] = r.seen ? py::object(eval_dict(*r.seen)) : py::object(py::none());
            out["hm"] = r.hm ? py::object(py::float_(*r.hm)) : py::object(py::none());
            out["tsv"] = r.to_tsv();
            return out;
        },
        py::arg("predictions"), py::arg("ground_truth"), py::arg("unseen"), py::arg("setting") = "gzsd",
        py::arg("class_agnostic_recall") = false);

    // taxonomy and splits
    m.def(
        "genus_split",
        [](const std::vector<std::pair<std::string, std::vector<std::string>>>& rows, double fraction,
           std::uint64_t seed) {
            const auto tree = tree_from_rows(rows);
            const auto split = genus_split(tree, fraction, seed);
            return to_py(split.to_json(tree, seed));
        },
        py::arg("rows"), py::arg("fraction"), py::arg("seed") = 0,
        "rows: [(leaf, [ancestor level 1, ..., level L-1])]. Returns {seen, unseen, seed}.");
    m.def(
        "audit_split",
        [](const std::vector<std::pair<std::string, std::vector<std::string>>>& rows, const py::object& split) {
            const auto tree = tree_from_rows(rows);
            return audit_split(tree, SplitAssignment::from_json(to_json(split), tree));
        },
        py::arg("rows"), py::arg("split"));
    m.def(
        "validate_manifest",
        [](const std::filesystem::path& path) {
            const auto man = load_manifest(path);
            py::dict d;
            d["images"] = man.images.size();
            d["classes"] = man.classes.size();
            d["levels"] = man.tree.depth();
            return d;
        },
        py::arg("path"));

    // alignment
    m.def(
        "image_text_similarity",
        [](const Array& words, const Array& regions, double xi, const std::string& mode) {
            return image_text_similarity({to_matrix(words), {}, to_matrix(regions)}, xi, parse_attention_mode(mode));
        },
        py::arg("words"), py::arg("regions"), py::arg("xi") = 5.0, py::arg("attention") = "literal",
        "words: D x N_text, regions: D x N_img.");
    m.def(
        "avss_loss",
        [](const std::vector<std::pair<Array, Array>>& batch, double xi, const std::string& mode) {
            std::vector<EncodedPair> pairs;
            for (const auto& [w, r] : batch) pairs.push_back({to_matrix(w), {}, to_matrix(r)});
            return avss_loss(pairs, xi, parse_attention_mode(mode));
        },
        py::arg("batch"), py::arg("xi") = 5.0, py::arg("attention") = "literal");
    m.def(
        "word_region_attention",
        [](const Array& words, const Array& regions, const std::string& mode) {
            const auto a = word_region_attention(to_matrix(words), to_matrix(regions), parse_attention_mode(mode));
            return py::make_tuple(to_array(a.weights), to_array(a.context));
        },
        py::arg("words"), py::arg("regions"), py::arg("attention") = "literal",
        "Returns (weights, context).");

    // losses
    m.def(
        "total_loss",
        [](const py::dict& c, const py::object& weights) {
            LossComponents lc;
            auto get = [&](const char* k) { return c.contains(k) ? c[k].cast<double>() : 0.0; };
            lc.rpn = get("rpn");
            lc.reg = get("reg");
            lc.cls = get("cls");
            lc.avss = get("avss");
            lc.disc = get("disc");
            lc.gen = get("gen");
            lc.hicl = get("hicl");
            const LossWeights w = weights.is_none() ? LossWeights{} : LossWeights::from_json(to_json(weights));
            return total_loss(lc, w);
        },
        py::arg("components"), py::arg("weights") = py::none());
    m.def(
        "gradient_suite",
        [](std::size_t seeds, double tolerance) {
            py::list out;
            for (const auto& r : gradient_suite(seeds, tolerance)) {
                py::dict d;
                d["loss"] = r.loss;
                d["instances"] = r.instances;
                d["redraws"] = r.redraws;
                d["max_rel_error"] = r.max_rel_error;
                d["pass"] = r.pass;
                out.append(d);
            }
            return out;
        },
        py::arg("seeds") = 20, py::arg("tolerance") = 1e-4);

    // toy pipeline
    m.def(
        "default_config", [] { return to_py(ToyConfig{}.to_json()); }, "Default training config as a dict.");
    m.def(
        "train_toy",
        [](const py::object& config, const std::optional<std::filesystem::path>& checkpoint) {
            const ToyConfig cfg = ToyConfig::from_json(config.is_none() ? nlohmann::json::object() : to_json(config));
            const auto bench = make_toy_benchmark(cfg.bench, cfg.seed);
            ToyRun run;
            {
                py::gil_scoped_release release;
                run = train_toy(cfg, bench);
            }
            if (checkpoint) run.model.save(*checkpoint);
            const ToyEval ev = evaluate_toy(run.model, bench);
            py::dict d;
            d["seen_accuracy"] = ev.seen_accuracy;
            d["unseen_accuracy"] = ev.unseen_accuracy;
            d["intra_genus_distance"] = ev.intra_genus;
            d["inter_genus_distance"] = ev.inter_genus;
            py::list log;
            for (const auto& e : run.log) log.append(to_py(e.to_json()));
            d["log"] = log;
            return d;
        },
        py::arg("config") = py::none(), py::arg("checkpoint") = py::none(),
        "Runs every phase on the synthetic benchmark; returns accuracies and the loss log.");
}
