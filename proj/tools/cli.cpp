// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "fgzsd/data_model.hpp"
#include "fgzsd/gradient_suite.hpp"
#include "fgzsd/metrics.hpp"
#include "fgzsd/toy.hpp"

namespace fgzsd::cli {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::ConfigError:
            return kConfig;
        case ErrorCode::NonFinite:
        case ErrorCode::NonFiniteGradient:
        case ErrorCode::ZeroNorm:
        case ErrorCode::BothZero:
        case ErrorCode::DimMismatch:
        case ErrorCode::TapeState:
            return kNumeric;
        default:
            return kValidation;
    }
}

const char* module_of(ErrorCode code) {
    switch (code) {
        case ErrorCode::DimMismatch:
        case ErrorCode::ZeroNorm:
        case ErrorCode::EmptyInput:
        case ErrorCode::NonFinite:
        case ErrorCode::NonFiniteGradient:
        case ErrorCode::InvalidArgument:
        case ErrorCode::TapeState:
            return "numerics";
        case ErrorCode::RaggedDepth:
        case ErrorCode::DuplicateLeaf:
        case ErrorCode::UnknownLeaf:
        case ErrorCode::UnknownClass:
        case ErrorCode::MissingLeafVector:
            return "taxonomy";
        case ErrorCode::ParseError:
        case ErrorCode::ValidationError:
        case ErrorCode::InfeasibleFraction:
            return "data_model";
        case ErrorCode::BatchTooSmall:
            return "alignment";
        case ErrorCode::BothZero:
        case ErrorCode::SettingMismatch:
            return "metrics";
        case ErrorCode::ConfigError:
            return "config";
        case ErrorCode::IoError:
            return "io";
    }
    return "fgzsd";
}

namespace {

std::shared_ptr<spdlog::logger> logger() {
    static auto log = [] {
        auto l = spdlog::stderr_logger_mt("fgzsd");
        l->set_pattern("[%l] %v");
        const char* env = std::getenv("FGZSD_LOG");
        l->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
        return l;
    }();
    return log;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) fail(ErrorCode::IoError, "cannot open " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, p.string() + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write " + p.string());
    out << text;
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

// ---- validate ---------------------------------------------------------------

int cmd_validate(const fs::path& manifest, std::ostream& out) {
    const auto m = load_manifest(manifest);
    out << "valid: " << m.images.size() << " images, " << m.classes.size() << " classes, " << m.tree.depth() + 1
        << " levels\n";
    return kOk;
}

// ---- split ------------------------------------------------------------------

int cmd_split(const fs::path& manifest, double fraction, std::uint64_t seed, const fs::path& dest, std::ostream& out) {
    const auto m = load_manifest(manifest);
    const auto split = genus_split(m.tree, fraction, seed);
    const auto problems = audit_split(m.tree, split);
    if (!problems.empty()) throw ValidationError(problems);
    write_json(dest, split.to_json(m.tree, seed));
    out << split.unseen.size() << " unseen of " << m.tree.leaves().size() << " classes\n";
    return kOk;
}

// ---- stats ------------------------------------------------------------------

int cmd_stats(const fs::path& manifest, const fs::path& split_path, const std::string& dest, std::ostream& out) {
    const auto m = load_manifest(manifest);
    const auto split = SplitAssignment::from_json(read_json(split_path), m.tree);
    const std::string tsv = dataset_stats(m, split).to_tsv();
    if (dest.empty())
        out << tsv;
    else
        write_text(dest, tsv);
    return kOk;
}

// ---- eval -------------------------------------------------------------------

int cmd_eval(const fs::path& dets_path, const fs::path& manifest, const fs::path& split_path,
             const std::string& setting_name, bool class_agnostic, const std::string& dest, std::ostream& out) {
    const auto m = load_manifest(manifest);
    const auto split = SplitAssignment::from_json(read_json(split_path), m.tree);
    const Setting setting = parse_setting(setting_name);
    std::set<std::string> unseen;
    for (NodeId leaf : split.unseen) unseen.insert(m.tree.node(leaf).name);

    DetectionSet d;
    d.predictions = read_detections(dets_path);
    d.ground_truth = ground_truth_of(m);
    if (setting == Setting::Zsd) {
        // The zero-shot test set is the images whose objects are all unseen.
        std::set<std::string> keep;
        for (const auto& img : m.images) {
            const bool all_unseen = std::all_of(img.boxes.begin(), img.boxes.end(),
                                                [&](const Annotation& a) { return unseen.count(a.class_id) > 0; });
            if (all_unseen) keep.insert(img.id);
        }
        auto outside = [&](const auto& x) { return keep.count(x.image_id) == 0; };
        std::erase_if(d.ground_truth, outside);
        std::erase_if(d.predictions, outside);
    }
    const std::string tsv = evaluate(d, unseen, setting, class_agnostic).to_tsv();
    if (dest.empty())
        out << tsv;
    else
        write_text(dest, tsv);
    return kOk;
}

// ---- gradcheck --------------------------------------------------------------

int cmd_gradcheck(std::size_t seeds, double tolerance, std::ostream& out) {
    const auto rows = gradient_suite(seeds, tolerance);
    out << format_gradient_suite(rows);
    const bool ok = std::all_of(rows.begin(), rows.end(), [](const GradSuiteRow& r) { return r.pass; });
    return ok ? kOk : kNumeric;
}

// ---- train ------------------------------------------------------------------

struct TrainOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> xi, tau, momentum, lambda_avss, lambda_adv, lambda_hicl;
    std::optional<std::string> phi, decoding, attention;
    std::optional<std::size_t> align_steps, detector_steps, gan_steps, finetune_steps;
    bool no_hicl = false, flat_head = false, full_head_finetune = false;
};

ToyConfig resolve_config(const std::string& config_path, const TrainOverrides& o) {
    nlohmann::json j = config_path.empty() ? nlohmann::json::object() : read_json(config_path);
    if (!j.is_object()) fail(ErrorCode::ConfigError, "config must be a JSON object");
    // Parse once so file errors are reported against the file, then patch.
    j = ToyConfig::from_json(j).to_json();
    if (o.seed) j["seed"] = *o.seed;
    if (o.xi) j["xi"] = *o.xi;
    if (o.attention) j["attention"] = *o.attention;
    if (o.tau) j["hicl"]["tau"] = *o.tau;
    if (o.phi) j["hicl"]["phi"] = *o.phi;
    if (o.momentum) j["hicl"]["momentum"] = *o.momentum;
    if (o.no_hicl) j["hicl"]["enabled"] = false;
    if (o.lambda_avss) j["weights"]["avss"] = *o.lambda_avss;
    if (o.lambda_adv) j["weights"]["adversarial"] = *o.lambda_adv;
    if (o.lambda_hicl) j["weights"]["hicl"] = *o.lambda_hicl;
    if (o.decoding) j["decoding"] = *o.decoding;
    if (o.flat_head) j["flat_head"] = true;
    if (o.full_head_finetune) j["finetune_full_head"] = true;
    if (o.align_steps) j["schedule"]["align_steps"] = *o.align_steps;
    if (o.detector_steps) j["schedule"]["detector_steps"] = *o.detector_steps;
    if (o.gan_steps) j["schedule"]["gan_steps"] = *o.gan_steps;
    if (o.finetune_steps) j["schedule"]["finetune_steps"] = *o.finetune_steps;
    return ToyConfig::from_json(j);
}

int cmd_train(const std::string& config_path, const TrainOverrides& o, const fs::path& dir, std::ostream& out) {
    const ToyConfig cfg = resolve_config(config_path, o);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string());
    write_json(dir / "config.json", cfg.to_json());

    const ToyBenchmark bench = make_toy_benchmark(cfg.bench, cfg.seed);
    write_json(dir / "split.json", bench.split.to_json(bench.tree, cfg.seed));
    write_json(dir / "test_manifest.json", bench.test_manifest());

    logger()->info("train: seed {}, {} seen / {} unseen classes", cfg.seed, bench.split.seen.size(),
                   bench.split.unseen.size());
    ToyRun run{ToyModel::init(cfg, bench), {}};
    run_alignment(run.model, bench, run.log);
    logger()->info("alignment done ({} steps)", cfg.schedule.align_steps);
    run_detector(run.model, bench, run.log);
    logger()->info("detector done ({} steps)", cfg.schedule.detector_steps);
    run_gan(run.model, bench, run.log);
    logger()->info("generator done ({} steps)", cfg.schedule.gan_steps);
    run_finetune(run.model, bench, run.log);
    logger()->info("fine-tuning done ({} steps)", cfg.schedule.finetune_steps);
    for (const auto& e : run.log) logger()->debug("{}", e.to_json().dump());

    run.model.save(dir / "model");
    std::string lines;
    for (const auto& e : run.log) lines += e.to_json().dump() + "\n";
    write_text(dir / "log.jsonl", lines);
    write_detections(dir / "detections_gzsd.jsonl", toy_detections(run.model, bench, false));
    write_detections(dir / "detections_zsd.jsonl", toy_detections(run.model, bench, true));

    const ToyEval ev = evaluate_toy(run.model, bench);
    const nlohmann::json summary = {{"seen_accuracy", ev.seen_accuracy},
                                    {"unseen_accuracy", ev.unseen_accuracy},
                                    {"intra_genus_distance", ev.intra_genus},
                                    {"inter_genus_distance", ev.inter_genus}};
    write_json(dir / "summary.json", summary);
    out << summary.dump(2) << "\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Fine-grained zero-shot detection toolkit"};
    app.require_subcommand(1);

    std::string manifest, split_path, dets, dest, setting = "gzsd", config;
    double fraction = 0.2, tolerance = 1e-4;
    std::uint64_t seed = 0;
    std::size_t seeds = 20;
    bool class_agnostic = false;
    TrainOverrides o;

    auto* validate = app.add_subcommand("validate", "Check a dataset manifest");
    validate->add_option("manifest", manifest, "Manifest JSON")->required();

    auto* split = app.add_subcommand("split", "Assign seen and unseen classes");
    split->add_option("manifest", manifest, "Manifest JSON")->required();
    split->add_option("--fraction", fraction, "Target unseen fraction")->capture_default_str();
    split->add_option("--seed", seed, "Random seed")->capture_default_str();
    split->add_option("-o,--out", dest, "Split JSON to write")->required();

    auto* stats = app.add_subcommand("stats", "Dataset statistics table");
    stats->add_option("manifest", manifest, "Manifest JSON")->required();
    stats->add_option("--split", split_path, "Split JSON")->required();
    stats->add_option("-o,--out", dest, "TSV to write (default: stdout)");

    auto* eval = app.add_subcommand("eval", "Score detections");
    eval->add_option("detections", dets, "Detections JSON lines")->required();
    eval->add_option("--manifest", manifest, "Manifest JSON with the ground truth")->required();
    eval->add_option("--split", split_path, "Split JSON")->required();
    eval->add_option("--setting", setting, "zsd or gzsd")->capture_default_str();
    eval->add_flag("--class-agnostic-recall", class_agnostic, "Recall ignores labels");
    eval->add_option("-o,--out", dest, "TSV to write (default: stdout)");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
    grad->add_option("--seeds", seeds, "Random instances per loss")->capture_default_str();
    grad->add_option("--tolerance", tolerance, "Largest allowed relative error")->capture_default_str();

    auto* train = app.add_subcommand("train", "Train on the synthetic benchmark");
    train->add_option("-c,--config", config, "Config JSON; flags below override it");
    train->add_option("-o,--out", dest, "Output directory")->required();
    train->add_option("--seed", o.seed);
    train->add_option("--xi", o.xi, "Similarity sharpness");
    train->add_option("--attention", o.attention, "literal or single");
    train->add_option("--tau", o.tau, "Contrastive temperature");
    train->add_option("--phi", o.phi, "Level weight: constant, identity or square");
    train->add_option("--momentum", o.momentum, "Prototype momentum");
    train->add_flag("--no-hicl", o.no_hicl, "Drop the contrastive term");
    train->add_option("--lambda-avss", o.lambda_avss);
    train->add_option("--lambda-adv", o.lambda_adv);
    train->add_option("--lambda-hicl", o.lambda_hicl);
    train->add_option("--decoding", o.decoding, "greedy or posterior");
    train->add_flag("--flat-head", o.flat_head, "One softmax over all leaves");
    train->add_flag("--full-head-finetune", o.full_head_finetune, "Fine-tune every classifier");
    train->add_option("--align-steps", o.align_steps);
    train->add_option("--detector-steps", o.detector_steps);
    train->add_option("--gan-steps", o.gan_steps);
    train->add_option("--finetune-steps", o.finetune_steps);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage: " << e.what() << "\n";
        return kConfig;
    }

    try {
        if (*validate) return cmd_validate(manifest, out);
        if (*split) return cmd_split(manifest, fraction, seed, dest, out);
        if (*stats) return cmd_stats(manifest, split_path, dest, out);
        if (*eval) return cmd_eval(dets, manifest, split_path, setting, class_agnostic, dest, out);
        if (*grad) return cmd_gradcheck(seeds, tolerance, out);
        if (*train) return cmd_train(config, o, dest, out);
    } catch (const ValidationError& e) {
        err << module_of(e.code()) << ": " << to_string(e.code()) << ": " << e.violations().size()
            << " violation(s)\n";
        for (const auto& v : e.violations()) err << "  " << v << "\n";
        return exit_code_for(e.code());
    } catch (const Error& e) {
        err << module_of(e.code()) << ": " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const nlohmann::json::exception& e) {
        err << "config: ConfigError: " << e.what() << "\n";
        return kConfig;
    }
    return kConfig;
}

}  // namespace fgzsd::cli
