// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fgzsd/error.hpp"

namespace fgzsd {

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail(ErrorCode::DimMismatch, "cosine of vectors with different dimension");
    const double na = norm2(a);
    const double nb = norm2(b);
    if (na < kZeroNorm || nb < kZeroNorm) fail(ErrorCode::ZeroNorm, "cosine of a near-zero vector");
    return dot(a, b) / (na * nb);
}

double logsumexp(std::span<const double> z) {
    if (z.empty()) fail(ErrorCode::EmptyInput, "logsumexp of empty input");
    const double b = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - b);
    return b + std::log(s);
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double b = -INFINITY;
        for (std::size_t j = 0; j < m.cols(); ++j) b = std::max(b, m(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) = std::exp(m(i, j) - b);
            s += out(i, j);
        }
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= s;
    }
    return out;
}

std::vector<UpsampleTap> upsample_taps(std::size_t in_size) {
    std::vector<UpsampleTap> taps(2 * in_size);
    const double last = static_cast<double>(in_size - 1);
    for (std::size_t o = 0; o < taps.size(); ++o) {
        double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        src = std::clamp(src, 0.0, last);
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in_size - 1);
        const double frac = src - static_cast<double>(lo);
        taps[o] = {lo, hi, 1.0 - frac, frac};
    }
    return taps;
}

Matrix upsample2x(const Matrix& map, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0 || map.cols() != height * width) fail(ErrorCode::DimMismatch, "upsample2x spatial size");
    const auto ty = upsample_taps(height);
    const auto tx = upsample_taps(width);
    const std::size_t ow = 2 * width;
    Matrix out(map.rows(), 4 * height * width);
    for (std::size_t c = 0; c < map.rows(); ++c) {
        for (std::size_t oy = 0; oy < ty.size(); ++oy) {
            const auto& y = ty[oy];
            for (std::size_t ox = 0; ox < tx.size(); ++ox) {
                const auto& x = tx[ox];
                out(c, oy * ow + ox) = y.w_lo * (x.w_lo * map(c, y.lo * width + x.lo) + x.w_hi * map(c, y.lo * width + x.hi)) +
                                       y.w_hi * (x.w_lo * map(c, y.hi * width + x.lo) + x.w_hi * map(c, y.hi * width + x.hi));
            }
        }
    }
    return out;
}

MlpParams MlpParams::init(std::span<const std::size_t> dims, Rng& rng, double scale) {
    if (dims.size() < 2) fail(ErrorCode::InvalidArgument, "MLP needs at least input and output dims");
    MlpParams p;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        DenseLayer layer{Matrix(dims[k + 1], dims[k]), Matrix(dims[k + 1], 1)};
        for (double& w : layer.weight.data()) w = rng.uniform(-scale, scale);
        for (double& b : layer.bias.data()) b = rng.uniform(-scale, scale);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

MlpParams MlpParams::zeros(std::span<const std::size_t> dims) {
    if (dims.size() < 2) fail(ErrorCode::InvalidArgument, "MLP needs at least input and output dims");
    MlpParams p;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) p.layers.push_back({Matrix(dims[k + 1], dims[k]), Matrix(dims[k + 1], 1)});
    return p;
}

std::size_t MlpParams::in_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }

std::size_t MlpParams::out_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

void MlpParams::collect(std::vector<Matrix*>& out) {
    for (auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
}

void MlpParams::collect(std::vector<const Matrix*>& out) const {
    for (const auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
}

Vector mlp_forward(const MlpParams& p, std::span<const double> x) {
    if (p.layers.empty()) fail(ErrorCode::InvalidArgument, "empty MLP");
    Vector h(x.begin(), x.end());
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        const auto& l = p.layers[k];
        if (l.weight.cols() != h.size()) {
            fail(ErrorCode::DimMismatch, "MLP layer " + std::to_string(k) + " expects " + std::to_string(l.weight.cols()) +
                                             " inputs, got " + std::to_string(h.size()));
        }
        Vector next(l.weight.rows());
        for (std::size_t i = 0; i < next.size(); ++i) {
            double s = l.bias[i];
            for (std::size_t j = 0; j < h.size(); ++j) s += l.weight(i, j) * h[j];
            next[i] = (k + 1 < p.layers.size() && s <= 0.0) ? 0.0 : s;
        }
        h = std::move(next);
    }
    return h;
}

namespace ad {
Var mlp(Tape& tape, const MlpParams& p, Var x) {
    if (p.layers.empty()) fail(ErrorCode::InvalidArgument, "empty MLP");
    Var h = x;
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        const auto& l = p.layers[k];
        if (l.weight.cols() != h.rows()) fail(ErrorCode::DimMismatch, "MLP input dimension");
        h = add_colvec(matmul(tape.param(l.weight), h), tape.param(l.bias));
        if (k + 1 < p.layers.size()) h = relu(h);
    }
    return h;
}
}  // namespace ad

double evaluate(const DiffFn& f, std::span<const Matrix> inputs) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    vars.reserve(inputs.size());
    for (const auto& m : inputs) vars.push_back(tape.constant(m));
    return f(tape, vars).value().item();
}

GradCheckResult grad_check(const DiffFn& f, std::span<const Matrix> inputs, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) fail(ErrorCode::InvalidArgument, "grad_check eps must lie in [1e-7, 1e-3]");
    std::vector<Matrix> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const auto& m : inputs) vars.push_back(tape.input(m));
        ad::Var loss = f(tape, vars);
        tape.backward(loss);
        for (auto v : vars) analytic.push_back(tape.grad(v));
    }
    GradCheckResult result;
    std::vector<Matrix> probe(inputs.begin(), inputs.end());
    for (std::size_t k = 0; k < probe.size(); ++k) {
        for (std::size_t i = 0; i < probe[k].size(); ++i) {
            const double orig = probe[k][i];
            probe[k][i] = orig + eps;
            const double up = evaluate(f, probe);
            probe[k][i] = orig - eps;
            const double down = evaluate(f, probe);
            probe[k][i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[k][i];
            if (!std::isfinite(a) || !std::isfinite(numeric)) {
                fail(ErrorCode::NonFiniteGradient, "non-finite gradient at input " + std::to_string(k) + "[" +
                                                       std::to_string(i) + "]");
            }
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            result.max_rel_error = std::max(result.max_rel_error, err);
            ++result.coordinates;
        }
    }
    return result;
}

GradCheckResult param_grad_check(const ParamFn& f, std::span<Matrix* const> params, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) fail(ErrorCode::InvalidArgument, "grad_check eps must lie in [1e-7, 1e-3]");
    std::vector<Matrix> analytic;
    {
        ad::Tape tape;
        ad::Var loss = f(tape);
        tape.backward(loss);
        for (Matrix* p : params) {
            const Matrix* g = tape.grad_of(*p);
            analytic.push_back(g ? *g : Matrix(p->rows(), p->cols()));
        }
    }
    auto value = [&] {
        ad::Tape tape;
        return f(tape).value().item();
    };
    GradCheckResult result;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Matrix& p = *params[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double orig = p[i];
            p[i] = orig + eps;
            const double up = value();
            p[i] = orig - eps;
            const double down = value();
            p[i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[k][i];
            if (!std::isfinite(a) || !std::isfinite(numeric))
                fail(ErrorCode::NonFiniteGradient, "non-finite gradient at parameter " + std::to_string(k));
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            result.max_rel_error = std::max(result.max_rel_error, err);
            ++result.coordinates;
        }
    }
    return result;
}

}  // namespace fgzsd
