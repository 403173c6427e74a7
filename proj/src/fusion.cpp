// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fgzsd/checkpoint.hpp"
#include "fgzsd/error.hpp"
#include "fgzsd/optim.hpp"

namespace fgzsd {

FeatureMap::FeatureMap(Matrix d, std::size_t h, std::size_t w) : height(h), width(w), data(std::move(d)) {
    if (h == 0 || w == 0 || data.rows() == 0) fail(ErrorCode::InvalidArgument, "feature map dims must be >= 1");
    if (data.cols() != h * w) fail(ErrorCode::DimMismatch, "feature map data does not match H*W");
}

Vector FeatureMap::pooled() const {
    Vector out(channels(), 0.0);
    for (std::size_t c = 0; c < channels(); ++c) {
        for (std::size_t j = 0; j < data.cols(); ++j) out[c] += data(c, j);
        out[c] /= static_cast<double>(data.cols());
    }
    return out;
}

void FusionParams::collect(std::vector<Matrix*>& out) {
    gamma_s.collect(out);
    theta_s.collect(out);
    gamma_w.collect(out);
    theta_w.collect(out);
    if (!region_proj.empty()) out.push_back(&region_proj);
}

void MsaBlockParams::collect(std::vector<Matrix*>& out) {
    fuse1.collect(out);
    fuse2.collect(out);
}

void GanConfig::validate() const {
    if (blocks < 1) fail(ErrorCode::ConfigError, "gan blocks must be >= 1");
    if (noise_dim < 1) fail(ErrorCode::ConfigError, "noise dim must be >= 1");
    if (channels < 1 || out_channels < 1 || text_dim < 1 || mlp_hidden < 1 || disc_hidden < 1)
        fail(ErrorCode::ConfigError, "gan widths must be >= 1");
    if (base_height < 1 || base_width < 1) fail(ErrorCode::ConfigError, "base resolution must be >= 1");
    if (blocks > 16) fail(ErrorCode::ConfigError, "gan blocks must be <= 16");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail(ErrorCode::ConfigError, "adam_beta1 must be in [0, 1)");
}

nlohmann::json GanConfig::to_json() const {
    return {{"noise_dim", noise_dim},     {"blocks", blocks},
            {"channels", channels},       {"base_height", base_height},
            {"base_width", base_width},   {"out_channels", out_channels},
            {"text_dim", text_dim},       {"mlp_hidden", mlp_hidden},
            {"disc_hidden", disc_hidden}, {"attention", to_string(attention)},
            {"adam_beta1", adam_beta1}};
}

GanConfig GanConfig::from_json(const nlohmann::json& j) {
    GanConfig c;
    auto take = [&](const char* key, std::size_t& field) {
        if (j.contains(key)) field = j.at(key).get<std::size_t>();
    };
    take("noise_dim", c.noise_dim);
    take("blocks", c.blocks);
    take("channels", c.channels);
    take("base_height", c.base_height);
    take("base_width", c.base_width);
    take("out_channels", c.out_channels);
    take("text_dim", c.text_dim);
    take("mlp_hidden", c.mlp_hidden);
    take("disc_hidden", c.disc_hidden);
    if (j.contains("attention")) c.attention = parse_attention_mode(j.at("attention").get<std::string>());
    if (j.contains("adam_beta1")) c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.validate();
    return c;
}

namespace {

DenseLayer dense(std::size_t out, std::size_t in, Rng& rng, double scale) {
    DenseLayer l{Matrix(out, in), Matrix(out, 1)};
    for (double& x : l.weight.data()) x = rng.uniform(-scale, scale);
    return l;
}

void collect_dense(DenseLayer& l, std::vector<Matrix*>& out) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
}

}  // namespace

FusionParams zero_fusion(std::size_t text_dim, std::size_t hidden, std::size_t channels) {
    const std::size_t dims[] = {text_dim, hidden, channels};
    FusionParams p{MlpParams::zeros(dims), MlpParams::zeros(dims), MlpParams::zeros(dims), MlpParams::zeros(dims), {}};
    if (channels != text_dim) {
        // A zero projection would make every region vector vanish.
        p.region_proj = Matrix(text_dim, channels);
        for (std::size_t k = 0; k < std::min(text_dim, channels); ++k) p.region_proj(k, k) = 1.0;
    }
    return p;
}

FusionParams random_fusion(std::size_t text_dim, std::size_t hidden, std::size_t channels, Rng& rng, double scale) {
    const std::size_t dims[] = {text_dim, hidden, channels};
    FusionParams p;
    p.gamma_s = MlpParams::init(dims, rng, scale);
    p.theta_s = MlpParams::init(dims, rng, scale);
    p.gamma_w = MlpParams::init(dims, rng, scale);
    p.theta_w = MlpParams::init(dims, rng, scale);
    if (channels != text_dim) {
        p.region_proj = Matrix(text_dim, channels);
        const double s = 1.0 / std::sqrt(static_cast<double>(channels));
        for (double& x : p.region_proj.data()) x = rng.uniform(-s, s);
    }
    return p;
}

GeneratorParams GeneratorParams::init(const GanConfig& cfg, Rng& rng) {
    cfg.validate();
    GeneratorParams g;
    const std::size_t base = cfg.channels * cfg.base_height * cfg.base_width;
    g.input = dense(base, cfg.noise_dim, rng, 1.0 / std::sqrt(static_cast<double>(cfg.noise_dim)));
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        MsaBlockParams blk;
        blk.fuse1 = random_fusion(cfg.text_dim, cfg.mlp_hidden, cfg.channels, rng);
        blk.fuse2 = random_fusion(cfg.text_dim, cfg.mlp_hidden, cfg.channels, rng);
        g.blocks.push_back(std::move(blk));
    }
    g.output = dense(cfg.out_channels, cfg.channels, rng, 1.0 / std::sqrt(static_cast<double>(cfg.channels)));
    return g;
}

std::vector<Matrix*> GeneratorParams::parameters() {
    std::vector<Matrix*> out;
    collect_dense(input, out);
    for (auto& b : blocks) b.collect(out);
    collect_dense(output, out);
    return out;
}

DiscriminatorParams DiscriminatorParams::init(const GanConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t in = cfg.out_channels * cfg.out_height() * cfg.out_width() + cfg.text_dim;
    const std::size_t dims[] = {in, cfg.disc_hidden, cfg.disc_hidden, 1};
    return {MlpParams::init(dims, rng, 1.0 / std::sqrt(static_cast<double>(in)))};
}

std::vector<Matrix*> DiscriminatorParams::parameters() {
    std::vector<Matrix*> out;
    mlp.collect(out);
    return out;
}

namespace ad {

namespace {

MapVar channel_affine(Var gamma, Var theta, MapVar f) {
    if (gamma.rows() != f.data.rows() || theta.rows() != f.data.rows())
        fail(ErrorCode::DimMismatch, "affine parameters do not match the channel count");
    return {add_colvec(mul_colvec(f.data, gamma), theta), f.height, f.width};
}

}  // namespace

MapVar sentence_affine(Tape& tape, const FusionParams& p, Var sentence, MapVar f) {
    if (sentence.cols() != 1 || sentence.rows() != p.gamma_s.in_dim())
        fail(ErrorCode::DimMismatch, "sentence vector does not match the fusion MLP input");
    return channel_affine(mlp(tape, p.gamma_s, sentence), mlp(tape, p.theta_s, sentence), f);
}

MapVar word_affine(Tape& tape, const FusionParams& p, Var words, MapVar f, AttentionMode mode, Var attend) {
    if (words.rows() != p.gamma_w.in_dim()) fail(ErrorCode::DimMismatch, "word vectors do not match the fusion MLP input");
    Var regions = p.region_proj.empty() ? attend : matmul(tape.param(p.region_proj), attend);
    Var relevance = word_relevance(words, regions, mode);  // 1 x N
    Var weights = transpose(relevance);
    Var gamma = matmul(mlp(tape, p.gamma_w, words), weights);
    Var theta = matmul(mlp(tape, p.theta_w, words), weights);
    return channel_affine(gamma, theta, f);
}

namespace {

MapVar fuse(Tape& tape, const FusionParams& p, Var words, Var sentence, MapVar f, AttentionMode mode, Var attend) {
    MapVar a = sentence_affine(tape, p, sentence, f);
    a.data = relu(a.data);
    MapVar b = word_affine(tape, p, words, a, mode, attend);
    b.data = relu(b.data);
    return b;
}

}  // namespace

MapVar msa_block(Tape& tape, const MsaBlockParams& p, Var words, Var sentence, MapVar f, AttentionMode mode) {
    MapVar up{upsample2x(f.data, f.height, f.width), 2 * f.height, 2 * f.width};
    // Word relevances attend over the upsampled block input: the intermediate
    // maps pass through ReLU and may vanish entirely.
    MapVar x = fuse(tape, p.fuse1, words, sentence, up, mode, up.data);
    x = fuse(tape, p.fuse2, words, sentence, x, mode, up.data);
    return {add(x.data, up.data), up.height, up.width};
}

MapVar generate(Tape& tape, const GanConfig& cfg, const GeneratorParams& p, Var noise, Var words, Var sentence) {
    if (noise.rows() != cfg.noise_dim || noise.cols() != 1) fail(ErrorCode::DimMismatch, "noise vector size");
    if (p.blocks.size() != cfg.blocks) fail(ErrorCode::DimMismatch, "generator block count differs from config");
    Var base = add_colvec(matmul(tape.param(p.input.weight), noise), tape.param(p.input.bias));
    MapVar f{reshape(base, cfg.channels, cfg.base_height * cfg.base_width), cfg.base_height, cfg.base_width};
    for (const auto& blk : p.blocks) f = msa_block(tape, blk, words, sentence, f, cfg.attention);
    return {add_colvec(matmul(tape.param(p.output.weight), f.data), tape.param(p.output.bias)), f.height, f.width};
}

Var discriminate(Tape& tape, const DiscriminatorParams& p, MapVar x, Var sentence) {
    Var flat = reshape(x.data, x.data.rows() * x.data.cols(), 1);
    if (flat.rows() + sentence.rows() != p.mlp.in_dim()) fail(ErrorCode::DimMismatch, "discriminator input size");
    const Var parts[] = {flat, sentence};
    return mlp(tape, p.mlp, concat_rows(parts));
}

std::pair<Var, Var> gan_losses(Var real, Var fake, Var mismatch) {
    Var real_term = neg(mean(min0(add_scalar(real, -1.0))));
    Var fake_term = scale(mean(min0(add_scalar(neg(fake), -1.0))), -0.5);
    Var mismatch_term = scale(mean(min0(add_scalar(neg(mismatch), -1.0))), -0.5);
    return {add(add(real_term, fake_term), mismatch_term), neg(mean(fake))};
}

}  // namespace ad

FeatureMap sentence_affine(const FusionParams& p, std::span<const double> sentence, const FeatureMap& f) {
    ad::Tape tape;
    auto out = ad::sentence_affine(tape, p, tape.constant(Matrix::column(sentence)),
                                   {tape.constant(f.data), f.height, f.width});
    return {out.data.value(), out.height, out.width};
}

FeatureMap word_affine(const FusionParams& p, const Matrix& words, const FeatureMap& f, AttentionMode mode,
                       const FeatureMap* attend) {
    ad::Tape tape;
    ad::Var fv = tape.constant(f.data);
    ad::Var av = attend ? tape.constant(attend->data) : fv;
    auto out = ad::word_affine(tape, p, tape.constant(words), {fv, f.height, f.width}, mode, av);
    return {out.data.value(), out.height, out.width};
}

FeatureMap msa_block(const MsaBlockParams& p, const Matrix& words, std::span<const double> sentence,
                     const FeatureMap& f, AttentionMode mode) {
    ad::Tape tape;
    auto out = ad::msa_block(tape, p, tape.constant(words), tape.constant(Matrix::column(sentence)),
                             {tape.constant(f.data), f.height, f.width}, mode);
    return {out.data.value(), out.height, out.width};
}

FeatureMap generate(const GanConfig& cfg, const GeneratorParams& p, std::span<const double> noise,
                    const Matrix& words, std::span<const double> sentence) {
    ad::Tape tape;
    auto out = ad::generate(tape, cfg, p, tape.constant(Matrix::column(noise)), tape.constant(words),
                            tape.constant(Matrix::column(sentence)));
    return {out.data.value(), out.height, out.width};
}

double discriminate(const DiscriminatorParams& p, const FeatureMap& x, std::span<const double> sentence) {
    ad::Tape tape;
    return ad::discriminate(tape, p, {tape.constant(x.data), x.height, x.width}, tape.constant(Matrix::column(sentence)))
        .value()
        .item();
}

GanLosses gan_losses(std::span<const double> real, std::span<const double> fake, std::span<const double> mismatch) {
    if (real.empty() || fake.empty() || mismatch.empty()) fail(ErrorCode::EmptyInput, "empty discriminator scores");
    ad::Tape tape;
    auto [d, g] = ad::gan_losses(tape.constant(Matrix::row(real)), tape.constant(Matrix::row(fake)),
                                 tape.constant(Matrix::row(mismatch)));
    return {d.value().item(), g.value().item()};
}

namespace {

const ClassText& text_of(const std::map<std::string, ClassText>& texts, const std::string& id) {
    auto it = texts.find(id);
    if (it == texts.end()) fail(ErrorCode::UnknownClass, "no text for class '" + id + "'");
    return it->second;
}

Matrix draw_noise(std::size_t dim, Rng& rng) {
    Matrix z(dim, 1);
    for (double& x : z.data()) x = rng.normal();
    return z;
}

}  // namespace

std::vector<GanStepLog> train_gan(const GanConfig& cfg, GeneratorParams& gen, DiscriminatorParams& disc,
                                  std::span<const GanSample> data, const std::map<std::string, ClassText>& texts,
                                  std::size_t steps, std::size_t batch, double lr, Rng& rng) {
    if (data.empty() || batch == 0) fail(ErrorCode::EmptyInput, "gan training needs data");
    if (texts.size() < 2) fail(ErrorCode::InvalidArgument, "mismatched text needs at least two classes");
    batch = std::min(batch, data.size());
    std::vector<std::string> all_classes;
    for (const auto& [id, t] : texts) all_classes.push_back(id);
    Adam opt_d(lr, cfg.adam_beta1), opt_g(lr, cfg.adam_beta1);
    auto d_params = disc.parameters();
    auto g_params = gen.parameters();
    std::vector<std::size_t> order(data.size());
    std::vector<GanStepLog> log;

    for (std::size_t step = 0; step < steps; ++step) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        std::vector<const GanSample*> picked;
        for (std::size_t b = 0; b < batch; ++b) picked.push_back(&data[order[b]]);

        GanStepLog entry;
        {
            ad::Tape tape;
            std::vector<ad::Var> real, fake, mismatch;
            for (const GanSample* s : picked) {
                const ClassText& t = text_of(texts, s->class_id);
                ad::Var sent = tape.constant(Matrix::column(t.sentence));
                ad::MapVar x{tape.constant(s->real.data), s->real.height, s->real.width};
                real.push_back(ad::discriminate(tape, disc, x, sent));

                // Generated samples are inputs to D here; G is not updated.
                FeatureMap g = generate(cfg, gen, draw_noise(cfg.noise_dim, rng).values(), t.words, t.sentence);
                fake.push_back(ad::discriminate(tape, disc, {tape.constant(g.data), g.height, g.width}, sent));

                std::vector<std::string> others;
                for (const GanSample* o : picked)
                    if (o->class_id != s->class_id) others.push_back(o->class_id);
                if (others.empty())
                    for (const auto& id : all_classes)
                        if (id != s->class_id) others.push_back(id);
                const ClassText& wrong = text_of(texts, others[rng.below(others.size())]);
                mismatch.push_back(ad::discriminate(tape, disc, x, tape.constant(Matrix::column(wrong.sentence))));
            }
            auto [l_d, l_g] = ad::gan_losses(ad::concat_cols(real), ad::concat_cols(fake), ad::concat_cols(mismatch));
            (void)l_g;
            entry.discriminator = l_d.value().item();
            tape.backward(l_d);
            opt_d.step(tape, d_params);
        }
        {
            ad::Tape tape;
            std::vector<ad::Var> fake;
            for (const GanSample* s : picked) {
                const ClassText& t = text_of(texts, s->class_id);
                ad::Var sent = tape.constant(Matrix::column(t.sentence));
                ad::MapVar g = ad::generate(tape, cfg, gen, tape.constant(draw_noise(cfg.noise_dim, rng)),
                                            tape.constant(t.words), sent);
                fake.push_back(ad::discriminate(tape, disc, g, sent));
            }
            ad::Var l_g = ad::neg(ad::mean(ad::concat_cols(fake)));
            entry.generator = l_g.value().item();
            tape.backward(l_g);
            opt_g.step(tape, g_params);
        }
        log.push_back(entry);
    }
    return log;
}

SyntheticSet synthesize_unseen(const GanConfig& cfg, const GeneratorParams& gen, const TaxonomyTree& tree,
                               const std::vector<std::string>& classes, const std::map<std::string, ClassText>& texts,
                               std::size_t count, std::uint64_t seed) {
    SyntheticSet set;
    set.seed = seed;
    Rng rng(seed);
    for (const auto& id : classes) {
        auto leaf = tree.find_leaf(id);
        if (!leaf) fail(ErrorCode::UnknownClass, "class '" + id + "' is not a taxonomy leaf");
        const ClassText& t = text_of(texts, id);
        for (std::size_t k = 0; k < count; ++k) {
            Matrix z = draw_noise(cfg.noise_dim, rng);
            set.samples.push_back({generate(cfg, gen, z.values(), t.words, t.sentence), id, *leaf, tree.path(*leaf)});
        }
    }
    return set;
}

void SyntheticSet::save(const std::filesystem::path& base) const {
    Checkpoint c;
    nlohmann::json index = nlohmann::json::array();
    nlohmann::json per_sample = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        c.tensors.push_back({"sample." + std::to_string(i), s.map.data});
        per_sample.push_back({{"class_id", s.class_id}, {"height", s.map.height}, {"width", s.map.width}});
        if (index.empty() || index.back()["class_id"] != s.class_id) {
            index.push_back({{"class_id", s.class_id},
                             {"seed", seed},
                             {"count", 0},
                             {"shape", {s.map.channels(), s.map.height, s.map.width}}});
        }
        index.back()["count"] = index.back()["count"].get<std::size_t>() + 1;
    }
    c.meta = {{"kind", "synthetic_set"}, {"seed", seed}, {"index", index}, {"samples", per_sample}};
    write_checkpoint(base, c);
}

SyntheticSet SyntheticSet::load(const std::filesystem::path& base, const TaxonomyTree& tree) {
    Checkpoint c = read_checkpoint(base);
    SyntheticSet set;
    set.seed = c.meta.at("seed").get<std::uint64_t>();
    const auto& per_sample = c.meta.at("samples");
    for (std::size_t i = 0; i < per_sample.size(); ++i) {
        const auto& s = per_sample[i];
        const std::string id = s.at("class_id").get<std::string>();
        auto leaf = tree.find_leaf(id);
        if (!leaf) fail(ErrorCode::UnknownClass, "class '" + id + "' is not a taxonomy leaf");
        set.samples.push_back({{c.at("sample." + std::to_string(i)), s.at("height").get<std::size_t>(),
                                s.at("width").get<std::size_t>()},
                               id,
                               *leaf,
                               tree.path(*leaf)});
    }
    return set;
}

}  // namespace fgzsd
