// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "cli.hpp"
#include "fgzsd/data_model.hpp"
#include "fgzsd/metrics.hpp"
#include "fgzsd/toy.hpp"
#include "test_util.hpp"

using namespace fgzsd;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// 5 genera x 5 species, one image per species.
json genera_manifest() {
    json j;
    j["taxonomy"] = {"genus", "species"};
    j["classes"] = json::array();
    j["images"] = json::array();
    for (int g = 0; g < 5; ++g)
        for (int s = 0; s < 5; ++s) {
            const std::string id = "g" + std::to_string(g) + "s" + std::to_string(s);
            j["classes"].push_back({{"id", id}, {"name", id}, {"description", ""}, {"path", {"g" + std::to_string(g)}}});
            j["images"].push_back({{"id", "img_" + id},
                                   {"w", 100},
                                   {"h", 100},
                                   {"captions", {"a bird"}},
                                   {"boxes", {{{"x_min", 10}, {"y_min", 10}, {"x_max", 60}, {"y_max", 50}, {"class_id", id}}}}});
        }
    return j;
}

}  // namespace

TEST_CASE("exit codes and error prefixes") {
    CHECK(cli::exit_code_for(ErrorCode::ValidationError) == 1);
    CHECK(cli::exit_code_for(ErrorCode::ParseError) == 1);
    CHECK(cli::exit_code_for(ErrorCode::ConfigError) == 2);
    CHECK(cli::exit_code_for(ErrorCode::NonFinite) == 3);
    CHECK(std::string(cli::module_of(ErrorCode::InfeasibleFraction)) == "data_model");
    CHECK(std::string(cli::module_of(ErrorCode::SettingMismatch)) == "metrics");

    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"validate"}).code == 2);
    auto help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("gradcheck") != std::string::npos);
}

TEST_CASE("validate") {
    auto dir = test::temp_dir("cli_validate");
    write(dir / "ok.json", genera_manifest().dump());
    auto ok = run({"validate", (dir / "ok.json").string()});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("25 images, 25 classes") != std::string::npos);

    write(dir / "broken.json", "{ \"taxonomy\": [");
    auto broken = run({"validate", (dir / "broken.json").string()});
    CHECK(broken.code == 1);
    CHECK(broken.err.find("ParseError") != std::string::npos);

    auto j = genera_manifest();
    j["images"][3]["boxes"][0]["x_max"] = 500;
    write(dir / "bad_box.json", j.dump());
    auto bad = run({"validate", (dir / "bad_box.json").string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.find(j["images"][3]["id"].get<std::string>()) != std::string::npos);

    CHECK(run({"validate", (dir / "missing.json").string()}).code == 1);
}

TEST_CASE("split, stats and the re-audited output") {
    auto dir = test::temp_dir("cli_split");
    write(dir / "m.json", genera_manifest().dump());
    const std::string m = (dir / "m.json").string();
    auto a = run({"split", m, "--fraction", "0.2", "--seed", "7", "-o", (dir / "a.json").string()});
    REQUIRE(a.code == 0);
    run({"split", m, "--fraction", "0.2", "--seed", "7", "-o", (dir / "b.json").string()});
    CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));

    auto manifest = load_manifest(dir / "m.json");
    auto split = SplitAssignment::from_json(json::parse(slurp(dir / "a.json")), manifest.tree);
    CHECK(split.unseen.size() == 5);
    CHECK(audit_split(manifest.tree, split).empty());

    auto infeasible = run({"split", m, "--fraction", "0.04", "-o", (dir / "c.json").string()});
    CHECK(infeasible.code == 1);
    CHECK(infeasible.err.find("data_model: InfeasibleFraction") != std::string::npos);

    auto stats = run({"stats", m, "--split", (dir / "a.json").string()});
    CHECK(stats.code == 0);
    CHECK(stats.out.find("#species(#cls)") != std::string::npos);
    CHECK(run({"stats", m, "--split", (dir / "a.json").string(), "-o", (dir / "s.tsv").string()}).code == 0);
    CHECK(slurp(dir / "s.tsv") == stats.out);
}

TEST_CASE("eval on a perfect fixture") {
    auto dir = test::temp_dir("cli_eval");
    write(dir / "m.json", genera_manifest().dump());
    const std::string m = (dir / "m.json").string();
    REQUIRE(run({"split", m, "--fraction", "0.2", "-o", (dir / "s.json").string()}).code == 0);
    auto manifest = load_manifest(dir / "m.json");
    std::vector<Detection> perfect;
    for (const auto& g : ground_truth_of(manifest)) perfect.push_back({g.image_id, g.box, g.class_id, 0.9});
    write_detections(dir / "d.jsonl", perfect);

    auto gzsd = run({"eval", (dir / "d.jsonl").string(), "--manifest", m, "--split", (dir / "s.json").string()});
    CHECK(gzsd.code == 0);
    CHECK(gzsd.out.find("FG-GZSD\t100.000\t100.000\t100.000\t100.000\t100.000") != std::string::npos);
    auto zsd = run({"eval", (dir / "d.jsonl").string(), "--manifest", m, "--split", (dir / "s.json").string(),
                    "--setting", "zsd"});
    CHECK(zsd.code == 0);
    CHECK(zsd.out.find("100.000") != std::string::npos);
    CHECK(run({"eval", (dir / "d.jsonl").string(), "--manifest", m, "--split", (dir / "s.json").string(), "--setting",
               "both"})
              .code == 2);
}

TEST_CASE("gradcheck passes on this build") {
    auto r = run({"gradcheck", "--seeds", "5"});
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
    CHECK(r.out.find("hier_ce_loss") != std::string::npos);
    CHECK(run({"gradcheck", "--seeds", "2", "--tolerance", "0"}).code == 3);
}

TEST_CASE("train: config file, flag overrides, zero steps and determinism") {
    auto dir = test::temp_dir("cli_train");
    write(dir / "cfg.json", R"({"seed": 2, "xi": 2.0, "schedule": {"align_steps": 0, "detector_steps": 0,
                                "gan_steps": 0, "finetune_steps": 0}})");
    auto r = run({"train", "-c", (dir / "cfg.json").string(), "--xi", "3", "-o", (dir / "zero").string()});
    REQUIRE(r.code == 0);
    auto used = json::parse(slurp(dir / "zero" / "config.json"));
    CHECK(used.at("xi") == 3.0);
    CHECK(used.at("seed") == 2);
    CHECK(slurp(dir / "zero" / "log.jsonl").empty());

    // With no steps the checkpoint is the initialization.
    const ToyConfig cfg = ToyConfig::from_json(used);
    const auto bench = make_toy_benchmark(cfg.bench, cfg.seed);
    ToyModel init = ToyModel::init(cfg, bench);
    init.save(dir / "init");
    CHECK(slurp(dir / "zero" / "model.bin") == slurp(dir / "init.bin"));
    CHECK(slurp(dir / "zero" / "model.json") == slurp(dir / "init.json"));

    const std::vector<std::string> small = {"--align-steps", "3", "--detector-steps", "3", "--gan-steps", "3",
                                            "--finetune-steps", "3"};
    std::vector<std::string> a{"train", "--seed", "5", "-o", (dir / "a").string()}, b = a;
    b[4] = (dir / "b").string();
    a.insert(a.end(), small.begin(), small.end());
    b.insert(b.end(), small.begin(), small.end());
    REQUIRE(run(a).code == 0);
    REQUIRE(run(b).code == 0);
    for (const char* f : {"model.bin", "model.json", "log.jsonl", "detections_gzsd.jsonl", "split.json",
                          "test_manifest.json", "summary.json"})
        CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
    CHECK(!slurp(dir / "a" / "log.jsonl").empty());
    auto first = json::parse(slurp(dir / "a" / "log.jsonl").substr(0, slurp(dir / "a" / "log.jsonl").find('\n')));
    CHECK(first.contains("step"));
    CHECK(first.contains("phase"));
    CHECK(first.contains("components"));

    // The written test manifest and split feed straight into eval.
    auto ev = run({"eval", (dir / "a" / "detections_gzsd.jsonl").string(), "--manifest",
                   (dir / "a" / "test_manifest.json").string(), "--split", (dir / "a" / "split.json").string()});
    CHECK(ev.code == 0);
    CHECK(run({"validate", (dir / "a" / "test_manifest.json").string()}).code == 0);

    write(dir / "bad.json", R"({"bogus": 1})");
    auto bad = run({"train", "-c", (dir / "bad.json").string(), "-o", (dir / "c").string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("config") != std::string::npos);
    CHECK(run({"train", "--phi", "cubic", "-o", (dir / "c").string()}).code == 2);
}
