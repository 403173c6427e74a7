// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a dynamically recorded tape.
//
// Every value is a Matrix (scalars are 1x1). Nodes are appended in creation
// order, which is a valid topological order, so backward() is a single reverse
// sweep that visits each node once. A tape supports exactly one backward pass;
// call reset() before recording the next step.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "fgzsd/matrix.hpp"

namespace fgzsd::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape is reset.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Declared input: gradient is tracked and readable after backward().
    Var input(Matrix value);
    /// Constant: never receives a gradient.
    Var constant(Matrix value);
    /// Input bound to a persistent parameter matrix. Repeated calls with the same
    /// matrix return the same node, so gradients from every use accumulate.
    Var param(const Matrix& storage);

    const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
    /// Gradient of the last backward() target w.r.t. v (zeros if v did not contribute).
    const Matrix& grad(Var v) const;
    /// Gradient for a matrix registered through param(); nullptr if never bound.
    const Matrix* grad_of(const Matrix& storage) const;

    void backward(Var loss);
    void reset();

    bool backward_done() const noexcept { return backward_done_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;

    /// Records an operation node. `parents` receive gradient through `fn`,
    /// which must call accumulate() for each differentiable parent.
    Var record(Matrix value, std::span<const Var> parents, BackwardFn fn);
    void accumulate(Var target, const Matrix& g);
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
    };

    Var push(Matrix value, bool requires_grad, BackwardFn fn);

    std::vector<Node> nodes_;
    std::unordered_map<const Matrix*, std::size_t> params_;
    bool backward_done_ = false;
};

// ---- elementwise and linear ops -------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var div(Var a, Var b);  // Hadamard quotient
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var relu(Var a);        // subgradient 0 at 0
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
/// min(0, a), elementwise.
Var min0(Var a);
Var smooth_l1(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);
/// a (m x n) + v (m x 1), broadcast across columns.
Var add_colvec(Var a, Var v);
/// a[i, j] * v[i] for v (m x 1).
Var mul_colvec(Var a, Var v);
/// a (1x1 scalar node) times every entry of b.
Var mul_scalar(Var s, Var b);

// ---- reductions -------------------------------------------------------------

Var sum(Var a);                  // -> 1x1
Var mean(Var a);                 // -> 1x1
Var sum_rows(Var a);             // column sums -> 1 x n
Var sum_cols(Var a);             // row sums -> m x 1
Var mean_cols(Var a);            // row means -> m x 1
Var logsumexp(Var a);            // over all entries -> 1x1
Var logsumexp_rows(Var a);       // per row -> m x 1
Var softmax_rows(Var a);
/// Cosine between matching columns of a and b -> 1 x n. ZeroNorm if any column
/// norm falls below 1e-12.
Var cosine_cols(Var a, Var b);

// ---- structure --------------------------------------------------------------

Var element(Var a, std::size_t r, std::size_t c);  // -> 1x1
Var col(Var a, std::size_t c);                      // -> m x 1
Var slice_rows(Var a, std::size_t first, std::size_t count);
Var gather_cols(Var a, std::span<const std::size_t> index);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// Bilinear x2 upsampling of a channel-major map stored as C x (H*W) with
/// half-pixel centers and edge clamping. Output is C x (2H*2W).
Var upsample2x(Var a, std::size_t height, std::size_t width);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace fgzsd::ad
