// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fgzsd/autodiff.hpp"
#include "fgzsd/matrix.hpp"
#include "fgzsd/rng.hpp"

namespace fgzsd {

inline constexpr double kZeroNorm = 1e-12;

/// aᵀb / (‖a‖‖b‖). Throws ZeroNorm if either norm < 1e-12.
double cosine(std::span<const double> a, std::span<const double> b);

/// max(z) + log Σ exp(z − max(z)).
double logsumexp(std::span<const double> z);

Matrix softmax_rows(const Matrix& m);

/// Per-axis taps for bilinear x2 upsampling (half-pixel centers, clamped edges).
struct UpsampleTap {
    std::size_t lo;
    std::size_t hi;
    double w_lo;
    double w_hi;
};
std::vector<UpsampleTap> upsample_taps(std::size_t in_size);
Matrix upsample2x(const Matrix& map, std::size_t height, std::size_t width);

struct DenseLayer {
    Matrix weight;  // out x in
    Matrix bias;    // out x 1
};

/// Stack of affine layers with ReLU between them; the last layer is affine only.
struct MlpParams {
    std::vector<DenseLayer> layers;

    /// dims = {in, hidden..., out}. Entries drawn from uniform(-scale, scale).
    static MlpParams init(std::span<const std::size_t> dims, Rng& rng, double scale = 0.1);
    /// All-zero parameters with the given layer dims.
    static MlpParams zeros(std::span<const std::size_t> dims);

    std::size_t in_dim() const;
    std::size_t out_dim() const;
    void collect(std::vector<Matrix*>& out);
    void collect(std::vector<const Matrix*>& out) const;
};

Vector mlp_forward(const MlpParams& p, std::span<const double> x);

namespace ad {
/// MLP over a batch stored column-wise: x is in x n, result is out x n.
Var mlp(Tape& tape, const MlpParams& p, Var x);
}  // namespace ad

/// Scalar function of several matrix inputs, recorded on a tape.
using DiffFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients to central differences. The per-coordinate
/// error is |analytic − numeric| / max(1, |analytic|, |numeric|); the maximum
/// over all coordinates of all inputs is returned.
GradCheckResult grad_check(const DiffFn& f, std::span<const Matrix> inputs, double eps = 1e-5);

/// Same comparison for parameters bound through Tape::param(). The storage is
/// perturbed in place and restored; f must read the parameters it is given.
using ParamFn = std::function<ad::Var(ad::Tape&)>;
GradCheckResult param_grad_check(const ParamFn& f, std::span<Matrix* const> params, double eps = 1e-5);

/// Evaluates f on constants only (no gradient bookkeeping beyond the tape).
double evaluate(const DiffFn& f, std::span<const Matrix> inputs);

}  // namespace fgzsd
