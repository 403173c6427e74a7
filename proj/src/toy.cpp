// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fgzsd/checkpoint.hpp"
#include "fgzsd/error.hpp"
#include "fgzsd/optim.hpp"

namespace fgzsd {

namespace {

constexpr std::size_t kRawDim = 2;
constexpr std::size_t kParts = 3;
// Region channels: genus x, genus y, attribute a, attribute b.
constexpr std::size_t kRegionDim = 4;
constexpr double kImageSize = 100.0;

// Stream salts, one per consumer, so phases never share draws.
enum Salt : std::uint64_t { kInit = 1, kAlign, kDetector, kGan, kFinetune };

Rng stream(std::uint64_t seed, Salt salt) { return Rng(seed).fork(salt); }

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) fail(ErrorCode::ConfigError, where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            fail(ErrorCode::ConfigError, "unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("bad value for '") + key + "': " + e.what());
    }
}

std::string species_name(std::size_t g, int a, int b) {
    return "g" + std::to_string(g) + "_a" + std::to_string(a) + "b" + std::to_string(b);
}

bool held_out(std::size_t g, int a, int b) { return g % 2 == 0 ? a == b : a != b; }

}  // namespace

// ---- benchmark --------------------------------------------------------------

void ToyBenchmarkSpec::validate() const {
    if (genera < 2) fail(ErrorCode::ConfigError, "toy benchmark needs at least 2 genera");
    if (train_per_class < 1 || test_per_class < 1) fail(ErrorCode::ConfigError, "per-class sample counts must be >= 1");
    if (!(genus_radius > 0) || !(attribute_offset > 0) || !(noise >= 0))
        fail(ErrorCode::ConfigError, "toy geometry must be positive");
}

nlohmann::json ToyBenchmarkSpec::to_json() const {
    return {{"genera", genera},
            {"train_per_class", train_per_class},
            {"test_per_class", test_per_class},
            {"genus_radius", genus_radius},
            {"attribute_offset", attribute_offset},
            {"noise", noise}};
}

ToyBenchmarkSpec ToyBenchmarkSpec::from_json(const nlohmann::json& j) {
    check_keys(j, {"genera", "train_per_class", "test_per_class", "genus_radius", "attribute_offset", "noise"},
               "bench");
    ToyBenchmarkSpec s;
    read(j, "genera", s.genera);
    read(j, "train_per_class", s.train_per_class);
    read(j, "test_per_class", s.test_per_class);
    read(j, "genus_radius", s.genus_radius);
    read(j, "attribute_offset", s.attribute_offset);
    read(j, "noise", s.noise);
    return s;
}

ToyBenchmark make_toy_benchmark(const ToyBenchmarkSpec& spec, std::uint64_t seed) {
    spec.validate();
    ToyBenchmark bench;
    bench.spec = spec;

    struct Species {
        std::size_t genus;
        int a, b;
    };
    std::map<std::string, Species> species;
    std::vector<TaxonomyRow> rows;
    for (std::size_t g = 0; g < spec.genera; ++g)
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                species[species_name(g, a, b)] = {g, a, b};
                rows.push_back({species_name(g, a, b), {"g" + std::to_string(g)}});
            }
    bench.tree = TaxonomyTree::build(rows);

    for (std::size_t g = 0; g < spec.genera; ++g) bench.vocab.push_back("genus_" + std::to_string(g));
    for (const char* t : {"a_0", "a_1", "b_0", "b_1"}) bench.vocab.push_back(t);

    const std::size_t g_count = spec.genera;
    for (NodeId leaf : bench.tree.leaves()) {
        const Species& s = species.at(bench.tree.node(leaf).name);
        bench.tokens.push_back({s.genus, g_count + static_cast<std::size_t>(s.a), g_count + 2 + static_cast<std::size_t>(s.b)});
        (held_out(s.genus, s.a, s.b) ? bench.split.unseen : bench.split.seen).push_back(leaf);
    }

    Rng rng(seed);
    auto draw = [&](NodeId leaf, const std::string& image_id) {
        const Species& s = species.at(bench.tree.node(leaf).name);
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(s.genus) / static_cast<double>(g_count);
        ToySample out;
        out.image_id = image_id;
        out.leaf = leaf;
        const double parts[kParts][kRawDim] = {{spec.genus_radius * std::cos(angle), spec.genus_radius * std::sin(angle)},
                                               {(2 * s.a - 1) * spec.attribute_offset, 0.0},
                                               {0.0, (2 * s.b - 1) * spec.attribute_offset}};
        out.raw.assign(kRawDim, 0.0);
        for (std::size_t p = 0; p < kParts; ++p)
            for (std::size_t d = 0; d < kRawDim; ++d) out.raw[d] += parts[p][d] + rng.normal(0, spec.noise);
        // Each part lives in its own region and channels; the last region is background.
        out.regions = Matrix(kRegionDim, kParts + 1);
        for (std::size_t r = 0; r < out.regions.rows(); ++r)
            for (std::size_t c = 0; c < out.regions.cols(); ++c) out.regions(r, c) = rng.normal(0, spec.noise);
        out.regions(0, 0) += parts[0][0];
        out.regions(1, 0) += parts[0][1];
        out.regions(2, 1) += parts[1][0];
        out.regions(3, 2) += parts[2][1];
        const double w = rng.uniform(20, 60), h = rng.uniform(20, 60);
        const double x0 = rng.uniform(0, kImageSize - w), y0 = rng.uniform(0, kImageSize - h);
        out.box = {x0, y0, x0 + w, y0 + h};
        // Proposals run systematically large, so the regressor has something to learn.
        const double pw = w * std::exp(0.15 + 0.05 * rng.normal()), ph = h * std::exp(0.15 + 0.05 * rng.normal());
        const double cx = x0 + w / 2 + 0.05 * w * rng.normal(), cy = y0 + h / 2 + 0.05 * h * rng.normal();
        out.proposal = {cx - pw / 2, cy - ph / 2, cx + pw / 2, cy + ph / 2};
        return out;
    };
    auto id_of = [](const char* prefix, std::size_t i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s_%06zu", prefix, i);
        return std::string(buf);
    };
    for (NodeId leaf : bench.split.seen)
        for (std::size_t k = 0; k < spec.train_per_class; ++k)
            bench.train.push_back(draw(leaf, id_of("train", bench.train.size())));
    for (NodeId leaf : bench.tree.leaves())
        for (std::size_t k = 0; k < spec.test_per_class; ++k)
            bench.test.push_back(draw(leaf, id_of("test", bench.test.size())));
    return bench;
}

nlohmann::json ToyBenchmark::test_manifest() const {
    nlohmann::json classes = nlohmann::json::array(), images = nlohmann::json::array();
    auto text_of = [&](NodeId leaf) {
        std::string s;
        for (std::size_t t : tokens_of(leaf)) s += (s.empty() ? "" : " ") + vocab[t];
        return s;
    };
    for (NodeId leaf : tree.leaves()) {
        const auto& n = tree.node(leaf);
        classes.push_back({{"id", n.name},
                           {"name", n.name},
                           {"description", text_of(leaf)},
                           {"path", {tree.node(*n.parent).name}}});
    }
    for (const auto& s : test) {
        images.push_back({{"id", s.image_id},
                          {"w", kImageSize},
                          {"h", kImageSize},
                          {"captions", {text_of(s.leaf)}},
                          {"boxes",
                           {{{"x_min", s.box.x_min},
                             {"y_min", s.box.y_min},
                             {"x_max", s.box.x_max},
                             {"y_max", s.box.y_max},
                             {"class_id", tree.node(s.leaf).name}}}}});
    }
    return {{"taxonomy", {"genus", "species"}}, {"classes", classes}, {"images", images}};
}

// ---- config -----------------------------------------------------------------

GanConfig ToyConfig::gan_config() const {
    GanConfig g;
    g.noise_dim = gan_noise;
    g.blocks = 1;
    g.channels = gan_channels;
    g.base_height = g.base_width = 1;
    g.out_channels = kRawDim;
    g.text_dim = feature_dim;
    g.mlp_hidden = gan_hidden;
    g.disc_hidden = gan_disc_hidden;
    g.adam_beta1 = gan_adam_beta1;
    g.attention = attention;
    return g;
}

EncoderConfig ToyConfig::encoder_config() const {
    EncoderConfig e;
    e.dim = feature_dim;
    e.regions = kParts + 1;
    e.xi = xi;
    e.attention = attention;
    return e;
}

void ToyConfig::validate() const {
    bench.validate();
    if (feature_dim < 1 || backbone_hidden < 1) fail(ErrorCode::ConfigError, "feature widths must be >= 1");
    if (!(xi > 0)) fail(ErrorCode::ConfigError, "xi must be > 0");
    hicl.validate(2);
    if (!(momentum >= 0 && momentum < 1)) fail(ErrorCode::ConfigError, "momentum must lie in [0, 1)");
    weights.validate();
    if (schedule.batch < 2) fail(ErrorCode::ConfigError, "batch must be >= 2");
    if (!(schedule.lr > 0) || !(schedule.align_lr > 0) || !(schedule.gan_lr > 0))
        fail(ErrorCode::ConfigError, "learning rates must be > 0");
    if (real_maps_per_class < 1) fail(ErrorCode::ConfigError, "real_maps_per_class must be >= 1");
    gan_config().validate();
}

nlohmann::json ToyConfig::to_json() const {
    return {{"seed", seed},
            {"bench", bench.to_json()},
            {"feature_dim", feature_dim},
            {"backbone_hidden", backbone_hidden},
            {"xi", xi},
            {"attention", to_string(attention)},
            {"hicl",
             {{"tau", hicl.tau},
              {"phi", to_string(hicl.phi)},
              {"negatives", to_string(hicl.negatives)},
              {"momentum", momentum},
              {"enabled", use_hicl}}},
            {"weights", weights.to_json()},
            {"flat_head", flat_head},
            {"decoding", to_string(decoding)},
            {"finetune_full_head", finetune_full_head},
            {"gan",
             {{"noise", gan_noise},
              {"channels", gan_channels},
              {"hidden", gan_hidden},
              {"disc_hidden", gan_disc_hidden},
              {"adam_beta1", gan_adam_beta1},
              {"real_maps_per_class", real_maps_per_class},
              {"synth_maps_per_class", synth_maps_per_class}}},
            {"schedule",
             {{"align_steps", schedule.align_steps},
              {"detector_steps", schedule.detector_steps},
              {"gan_steps", schedule.gan_steps},
              {"finetune_steps", schedule.finetune_steps},
              {"batch", schedule.batch},
              {"lr", schedule.lr},
              {"align_lr", schedule.align_lr},
              {"gan_lr", schedule.gan_lr}}}};
}

ToyConfig ToyConfig::from_json(const nlohmann::json& j) {
    check_keys(j,
               {"seed", "bench", "feature_dim", "backbone_hidden", "xi", "attention", "hicl", "weights", "flat_head",
                "decoding", "finetune_full_head", "gan", "schedule"},
               "config");
    ToyConfig c;
    read(j, "seed", c.seed);
    if (j.contains("bench")) c.bench = ToyBenchmarkSpec::from_json(j.at("bench"));
    read(j, "feature_dim", c.feature_dim);
    read(j, "backbone_hidden", c.backbone_hidden);
    read(j, "xi", c.xi);
    std::string s;
    if (j.contains("attention")) {
        read(j, "attention", s);
        c.attention = parse_attention_mode(s);
    }
    if (j.contains("hicl")) {
        const auto& h = j.at("hicl");
        check_keys(h, {"tau", "phi", "negatives", "momentum", "enabled"}, "hicl");
        read(h, "tau", c.hicl.tau);
        if (h.contains("phi")) {
            read(h, "phi", s);
            c.hicl.phi = parse_level_weight(s);
        }
        if (h.contains("negatives")) {
            read(h, "negatives", s);
            c.hicl.negatives = parse_negative_enumeration(s);
        }
        read(h, "momentum", c.momentum);
        read(h, "enabled", c.use_hicl);
    }
    if (j.contains("weights")) {
        check_keys(j.at("weights"), {"avss", "adversarial", "hicl"}, "weights");
        c.weights = LossWeights::from_json(j.at("weights"));
    }
    read(j, "flat_head", c.flat_head);
    if (j.contains("decoding")) {
        read(j, "decoding", s);
        c.decoding = parse_decoding(s);
    }
    read(j, "finetune_full_head", c.finetune_full_head);
    if (j.contains("gan")) {
        const auto& g = j.at("gan");
        check_keys(g, {"noise", "channels", "hidden", "disc_hidden", "adam_beta1", "real_maps_per_class",
                       "synth_maps_per_class"},
                   "gan");
        read(g, "noise", c.gan_noise);
        read(g, "channels", c.gan_channels);
        read(g, "hidden", c.gan_hidden);
        read(g, "disc_hidden", c.gan_disc_hidden);
        read(g, "adam_beta1", c.gan_adam_beta1);
        read(g, "real_maps_per_class", c.real_maps_per_class);
        read(g, "synth_maps_per_class", c.synth_maps_per_class);
    }
    if (j.contains("schedule")) {
        const auto& p = j.at("schedule");
        check_keys(p,
                   {"align_steps", "detector_steps", "gan_steps", "finetune_steps", "batch", "lr", "align_lr",
                    "gan_lr"},
                   "schedule");
        read(p, "align_steps", c.schedule.align_steps);
        read(p, "detector_steps", c.schedule.detector_steps);
        read(p, "gan_steps", c.schedule.gan_steps);
        read(p, "finetune_steps", c.schedule.finetune_steps);
        read(p, "batch", c.schedule.batch);
        read(p, "lr", c.schedule.lr);
        read(p, "align_lr", c.schedule.align_lr);
        read(p, "gan_lr", c.schedule.gan_lr);
    }
    c.validate();
    return c;
}

// ---- model ------------------------------------------------------------------

ToyModel ToyModel::init(const ToyConfig& cfg, const ToyBenchmark& bench) {
    cfg.validate();
    ToyModel m;
    m.config = cfg;
    m.tree = bench.tree;
    m.head_tree = cfg.flat_head ? flatten(bench.tree) : bench.tree;
    Rng rng = stream(cfg.seed, kInit);
    m.encoders = ToyEncoders(cfg.encoder_config(), bench.vocab.size(), kRegionDim, rng.next_u64());
    const std::size_t dims[] = {kRawDim, cfg.backbone_hidden, cfg.feature_dim};
    m.backbone = MlpParams::init(dims, rng, 0.3);
    m.head = HierHead::init(m.head_tree, cfg.feature_dim, rng);
    const GanConfig gan = cfg.gan_config();
    m.generator = GeneratorParams::init(gan, rng);
    m.discriminator = DiscriminatorParams::init(gan, rng);
    m.refresh_semantics(bench);
    return m;
}

Vector ToyModel::features(const Vector& raw) const { return mlp_forward(backbone, raw); }

std::map<std::string, ClassText> ToyModel::class_texts(const ToyBenchmark& bench) const {
    std::map<std::string, ClassText> out;
    for (NodeId leaf : bench.tree.leaves()) {
        auto [words, sentence] = encoders.encode_text(bench.tokens_of(leaf));
        const double k = 1.0 / norm2(sentence);
        for (double& v : sentence) v *= k;
        for (double& v : words.data()) v *= k;
        out[bench.tree.node(leaf).name] = {std::move(words), std::move(sentence)};
    }
    return out;
}

void ToyModel::refresh_semantics(const ToyBenchmark& bench) {
    std::map<std::string, Vector> leaf_vectors;
    for (NodeId leaf : bench.tree.leaves())
        leaf_vectors[bench.tree.node(leaf).name] = encoders.encode_text(bench.tokens_of(leaf)).second;
    const NodeSemantics sem = aggregate_semantics(tree, leaf_vectors);
    caches = init_caches(tree, sem, std::nullopt, config.momentum);
    log_sim = log_similarity_table(sem);
}

std::vector<std::pair<std::string, Matrix*>> ToyModel::named_parameters() {
    std::vector<std::pair<std::string, Matrix*>> out;
    auto enc = encoders.parameters();
    const char* enc_names[] = {"encoder.text.embedding", "encoder.image.weight", "encoder.image.bias"};
    for (std::size_t i = 0; i < enc.size(); ++i) out.emplace_back(enc_names[i], enc[i]);
    for (std::size_t k = 0; k < backbone.layers.size(); ++k) {
        out.emplace_back("backbone." + std::to_string(k) + ".weight", &backbone.layers[k].weight);
        out.emplace_back("backbone." + std::to_string(k) + ".bias", &backbone.layers[k].bias);
    }
    for (NodeId n = 0; n < head.classifiers.size(); ++n) {
        if (head.classifiers[n].weight.empty()) continue;
        out.emplace_back("head.node" + std::to_string(n) + ".weight", &head.classifiers[n].weight);
        out.emplace_back("head.node" + std::to_string(n) + ".bias", &head.classifiers[n].bias);
    }
    out.emplace_back("head.regressor.weight", &head.regressor.weight);
    out.emplace_back("head.regressor.bias", &head.regressor.bias);
    auto gen = generator.parameters();
    for (std::size_t i = 0; i < gen.size(); ++i) out.emplace_back("generator." + std::to_string(i), gen[i]);
    auto disc = discriminator.parameters();
    for (std::size_t i = 0; i < disc.size(); ++i) out.emplace_back("discriminator." + std::to_string(i), disc[i]);
    return out;
}

void ToyModel::save(const std::filesystem::path& base) const {
    ToyModel copy = *this;
    Checkpoint c;
    for (const auto& [name, p] : copy.named_parameters()) c.tensors.push_back({name, *p});
    c.tensors.push_back({"caches", caches.prototypes()});
    c.tensors.push_back({"log_sim", log_sim});
    c.meta = {{"kind", "toy_model"}, {"config", config.to_json()}, {"cache_step", caches.step()}};
    write_checkpoint(base, c);
}

ToyModel ToyModel::load(const std::filesystem::path& base, const ToyBenchmark& bench) {
    const Checkpoint c = read_checkpoint(base);
    if (c.meta.value("kind", std::string()) != "toy_model") fail(ErrorCode::ParseError, "not a toy model checkpoint");
    ToyModel m = init(ToyConfig::from_json(c.meta.at("config")), bench);
    for (auto& [name, p] : m.named_parameters()) {
        const Matrix& v = c.at(name);
        if (!v.same_shape(*p)) fail(ErrorCode::DimMismatch, "checkpoint tensor '" + name + "' has the wrong shape");
        *p = v;
    }
    m.caches = MomentumCacheBank::restore(c.at("caches"), m.config.momentum, true,
                                          c.meta.at("cache_step").get<std::uint64_t>());
    m.log_sim = c.at("log_sim");
    return m;
}

nlohmann::json LogEntry::to_json() const {
    return {{"step", step}, {"phase", phase}, {"components", components.to_json()}, {"total", total}};
}

// ---- phases -----------------------------------------------------------------

namespace {

void push_log(std::vector<LogEntry>& log, std::size_t step, const char* phase, const LossComponents& c,
              const LossWeights& w) {
    log.push_back({step, phase, c, total_loss(c, w)});
}

/// x / ‖x‖ on the tape.
ad::Var unit(ad::Tape& tape, ad::Var x) {
    ad::Var inv = ad::div(tape.constant(Matrix::scalar(1.0)), ad::sqrt(ad::sum(ad::square(x))));
    return ad::mul_scalar(inv, x);
}

ad::Var batch_mean(std::span<const ad::Var> parts) { return ad::mean(ad::concat_cols(parts)); }

NodeId head_leaf(const ToyModel& m, NodeId leaf) { return m.head_tree.leaf(m.tree.node(leaf).name); }

}  // namespace

void run_alignment(ToyModel& model, const ToyBenchmark& bench, std::vector<LogEntry>& log) {
    const auto& cfg = model.config;
    if (cfg.schedule.align_steps == 0) return;
    Rng rng = stream(cfg.seed, kAlign);
    std::vector<AlignmentSample> data;
    for (const auto& s : bench.train) data.push_back({bench.tokens_of(s.leaf), s.regions});
    const auto losses = train_alignment(model.encoders, data, cfg.schedule.align_steps, cfg.schedule.batch,
                                        cfg.schedule.align_lr, rng);
    for (std::size_t i = 0; i < losses.size(); ++i) {
        LossComponents c;
        c.avss = losses[i];
        push_log(log, i, "align", c, cfg.weights);
    }
    model.refresh_semantics(bench);
}

void run_detector(ToyModel& model, const ToyBenchmark& bench, std::vector<LogEntry>& log) {
    const auto& cfg = model.config;
    if (cfg.schedule.detector_steps == 0) return;
    if (bench.train.empty()) fail(ErrorCode::EmptyInput, "no training samples");
    Rng rng = stream(cfg.seed, kDetector);
    Adam opt(cfg.schedule.lr);
    std::vector<Matrix*> params;
    model.backbone.collect(params);
    for (Matrix* p : model.head.parameters()) params.push_back(p);

    for (std::size_t step = 0; step < cfg.schedule.detector_steps; ++step) {
        std::vector<const ToySample*> batch;
        for (std::size_t b = 0; b < cfg.schedule.batch; ++b) batch.push_back(&bench.train[rng.below(bench.train.size())]);

        ad::Tape tape;
        std::vector<ad::Var> ce, reg, units;
        std::vector<NodeId> leaves;
        for (const ToySample* s : batch) {
            ad::Var x = ad::mlp(tape, model.backbone, tape.constant(Matrix::column(s->raw)));
            ce.push_back(ad::hier_ce_loss(tape, model.head, model.head_tree, x, head_leaf(model, s->leaf)));
            ad::Var delta = ad::sub(ad::regress(tape, model.head, x),
                                    tape.constant(Matrix::column(box_deltas(s->proposal, s->box))));
            reg.push_back(ad::sum(ad::smooth_l1(delta)));
            units.push_back(unit(tape, x));
            leaves.push_back(s->leaf);
        }
        ad::Var zero = tape.constant(Matrix::scalar(0.0));
        ad::LossVars parts{zero, batch_mean(reg), batch_mean(ce), zero, zero, zero, zero};
        if (cfg.use_hicl)
            parts.hicl = ad::hicl_loss(tape, units, leaves, model.caches, model.tree, model.log_sim, cfg.hicl);
        ad::Var total = ad::total_loss(parts, cfg.weights);
        tape.backward(total);
        opt.step(tape, params);

        LossComponents c;
        c.reg = parts.reg.value().item();
        c.cls = parts.cls.value().item();
        c.hicl = parts.hicl.value().item();
        push_log(log, step, "detector", c, cfg.weights);
        if (cfg.use_hicl)
            for (std::size_t i = 0; i < units.size(); ++i) model.caches.update(model.tree, units[i].value().col(0), leaves[i]);
    }
}

void run_gan(ToyModel& model, const ToyBenchmark& bench, std::vector<LogEntry>& log) {
    const auto& cfg = model.config;
    if (cfg.schedule.gan_steps == 0) return;
    Rng rng = stream(cfg.seed, kGan);
    const GanConfig gan = cfg.gan_config();
    const auto all_texts = model.class_texts(bench);
    std::map<std::string, ClassText> texts;
    std::vector<GanSample> data;
    const double scale = 1.0 / cfg.bench.genus_radius;
    for (NodeId leaf : bench.split.seen) {
        const std::string& name = bench.tree.node(leaf).name;
        texts[name] = all_texts.at(name);
        std::vector<const ToySample*> pool;
        for (const auto& s : bench.train)
            if (s.leaf == leaf) pool.push_back(&s);
        if (pool.empty()) continue;
        for (std::size_t k = 0; k < cfg.real_maps_per_class; ++k) {
            // One sample per map: the upsampled base is spatially constant, so
            // real maps are too.
            Matrix map(kRawDim, gan.out_height() * gan.out_width());
            const ToySample* s = pool[rng.below(pool.size())];
            for (std::size_t p = 0; p < map.cols(); ++p)
                for (std::size_t d = 0; d < kRawDim; ++d) map(d, p) = s->raw[d] * scale;
            data.push_back({FeatureMap(std::move(map), gan.out_height(), gan.out_width()), name});
        }
    }
    const auto steps = train_gan(gan, model.generator, model.discriminator, data, texts, cfg.schedule.gan_steps,
                                 cfg.schedule.batch, cfg.schedule.gan_lr, rng);
    for (std::size_t i = 0; i < steps.size(); ++i) {
        LossComponents c;
        c.disc = steps[i].discriminator;
        c.gen = steps[i].generator;
        push_log(log, i, "gan", c, cfg.weights);
    }
}

void run_finetune(ToyModel& model, const ToyBenchmark& bench, std::vector<LogEntry>& log) {
    const auto& cfg = model.config;
    if (cfg.schedule.finetune_steps == 0 || bench.split.unseen.empty()) return;
    Rng rng = stream(cfg.seed, kFinetune);
    const GanConfig gan = cfg.gan_config();
    std::vector<std::string> unseen_names;
    for (NodeId leaf : bench.split.unseen) unseen_names.push_back(bench.tree.node(leaf).name);
    const SyntheticSet synth = synthesize_unseen(gan, model.generator, bench.tree, unseen_names,
                                                 model.class_texts(bench), cfg.synth_maps_per_class, rng.next_u64());

    struct Item {
        Vector x;
        NodeId leaf;
    };
    std::vector<Item> fake, real;
    for (const auto& s : synth.samples)
        for (std::size_t p = 0; p < s.map.data.cols(); ++p) {
            Vector raw = s.map.data.col(p);
            for (double& v : raw) v *= cfg.bench.genus_radius;
            fake.push_back({model.features(raw), head_leaf(model, s.leaf)});
        }
    for (const auto& s : bench.train) real.push_back({model.features(s.raw), head_leaf(model, s.leaf)});
    if (fake.empty() || real.empty()) return;

    // Classifiers that may move: those over nodes with an unseen leaf below,
    // other than the root; the root alone when nothing else qualifies.
    std::vector<Matrix*> params;
    std::set<NodeId> targets;
    for (NodeId leaf : bench.split.unseen)
        for (NodeId n : model.head_tree.path(head_leaf(model, leaf)))
            if (!model.head_tree.is_leaf(n) && (cfg.finetune_full_head || n != model.head_tree.root())) targets.insert(n);
    if (cfg.finetune_full_head)
        for (const auto& n : model.head_tree.nodes())
            if (!n.children.empty()) targets.insert(n.id);
    if (targets.empty()) targets.insert(model.head_tree.root());
    for (NodeId n : targets)
        for (Matrix* p : model.head.classifier_parameters(n)) params.push_back(p);

    Adam opt(cfg.schedule.lr);
    const std::size_t half = cfg.schedule.batch / 2;
    for (std::size_t step = 0; step < cfg.schedule.finetune_steps; ++step) {
        ad::Tape tape;
        std::vector<ad::Var> ce;
        for (std::size_t b = 0; b < cfg.schedule.batch; ++b) {
            const Item& it = b < half ? fake[rng.below(fake.size())] : real[rng.below(real.size())];
            ce.push_back(ad::hier_ce_loss(tape, model.head, model.head_tree, tape.constant(Matrix::column(it.x)), it.leaf));
        }
        ad::Var zero = tape.constant(Matrix::scalar(0.0));
        ad::LossVars parts{zero, zero, batch_mean(ce), zero, zero, zero, zero};
        ad::Var total = ad::total_loss(parts, cfg.weights);
        tape.backward(total);
        opt.step(tape, params);
        LossComponents c;
        c.cls = parts.cls.value().item();
        push_log(log, step, "finetune", c, cfg.weights);
    }
}

ToyRun train_toy(const ToyConfig& cfg, const ToyBenchmark& bench) {
    ToyRun run{ToyModel::init(cfg, bench), {}};
    run_alignment(run.model, bench, run.log);
    run_detector(run.model, bench, run.log);
    run_gan(run.model, bench, run.log);
    run_finetune(run.model, bench, run.log);
    return run;
}

ToyRun train_toy(const ToyConfig& cfg) { return train_toy(cfg, make_toy_benchmark(cfg.bench, cfg.seed)); }

// ---- evaluation -------------------------------------------------------------

namespace {

NodeId decode(const ToyModel& m, const Vector& x, const std::set<NodeId>* allowed) {
    const auto pred = head_forward(m.head, m.head_tree, x, allowed);
    const NodeId leaf = m.config.decoding == Decoding::Greedy ? pred.leaf : pred.best_leaf;
    return m.tree.leaf(m.head_tree.node(leaf).name);
}

std::set<NodeId> head_leaves(const ToyModel& m, const std::vector<NodeId>& leaves) {
    std::set<NodeId> out;
    for (NodeId l : leaves) out.insert(head_leaf(m, l));
    return out;
}

}  // namespace

ToyEval evaluate_toy(const ToyModel& model, const ToyBenchmark& bench) {
    const auto unseen = bench.unseen_set();
    const auto allowed = head_leaves(model, bench.split.unseen);
    std::size_t seen_hits = 0, seen_total = 0, unseen_hits = 0, unseen_total = 0;
    std::map<NodeId, std::pair<Vector, std::size_t>> centroid;
    for (const auto& s : bench.test) {
        const Vector x = model.features(s.raw);
        if (unseen.count(s.leaf)) {
            ++unseen_total;
            unseen_hits += decode(model, x, &allowed) == s.leaf;
        } else {
            ++seen_total;
            seen_hits += decode(model, x, nullptr) == s.leaf;
        }
        const double n = norm2(x);
        auto& [sum, count] = centroid[s.leaf];
        sum.resize(x.size(), 0.0);
        for (std::size_t k = 0; k < x.size(); ++k) sum[k] += n > kZeroNorm ? x[k] / n : 0.0;
        ++count;
    }
    ToyEval e;
    e.seen_accuracy = seen_total ? static_cast<double>(seen_hits) / static_cast<double>(seen_total) : 0.0;
    e.unseen_accuracy = unseen_total ? static_cast<double>(unseen_hits) / static_cast<double>(unseen_total) : 0.0;

    std::vector<std::pair<NodeId, Vector>> means;
    for (auto& [leaf, acc] : centroid) {
        Vector m = acc.first;
        for (double& v : m) v /= static_cast<double>(acc.second);
        means.emplace_back(leaf, std::move(m));
    }
    double intra = 0, inter = 0;
    std::size_t n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < means.size(); ++i)
        for (std::size_t j = i + 1; j < means.size(); ++j) {
            double d = 0;
            for (std::size_t k = 0; k < means[i].second.size(); ++k) {
                const double t = means[i].second[k] - means[j].second[k];
                d += t * t;
            }
            d = std::sqrt(d);
            if (bench.tree.node(means[i].first).parent == bench.tree.node(means[j].first).parent) {
                intra += d;
                ++n_intra;
            } else {
                inter += d;
                ++n_inter;
            }
        }
    e.intra_genus = n_intra ? intra / static_cast<double>(n_intra) : 0.0;
    e.inter_genus = n_inter ? inter / static_cast<double>(n_inter) : 0.0;
    return e;
}

std::vector<Detection> toy_detections(const ToyModel& model, const ToyBenchmark& bench, bool unseen_only) {
    const auto unseen = bench.unseen_set();
    const auto allowed = head_leaves(model, bench.split.unseen);
    std::vector<Proposal> proposals;
    for (const auto& s : bench.test)
        if (!unseen_only || unseen.count(s.leaf)) proposals.push_back({s.image_id, model.features(s.raw), s.proposal});
    return predict(model.head, model.head_tree, proposals, model.config.decoding, unseen_only ? &allowed : nullptr);
}

}  // namespace fgzsd
