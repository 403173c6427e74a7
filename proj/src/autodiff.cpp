// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fgzsd/error.hpp"
#include "fgzsd/numerics.hpp"

namespace fgzsd::ad {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::push(Matrix value, bool requires_grad, BackwardFn fn) {
    if (backward_done_) fail(ErrorCode::TapeState, "recording after backward(); reset the tape first");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::input(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::param(const Matrix& storage) {
    auto it = params_.find(&storage);
    if (it != params_.end()) return Var{this, it->second};
    Var v = input(storage);
    params_.emplace(&storage, v.id);
    return v;
}

const Matrix& Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (!n.has_grad) {
        // Lazily materialise zeros so callers always see a value-shaped gradient.
        auto& mutable_node = const_cast<Node&>(n);
        mutable_node.grad = Matrix(n.value.rows(), n.value.cols());
        mutable_node.has_grad = true;
    }
    return n.grad;
}

const Matrix* Tape::grad_of(const Matrix& storage) const {
    auto it = params_.find(&storage);
    if (it == params_.end()) return nullptr;
    return &grad(Var{const_cast<Tape*>(this), it->second});
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
}

void Tape::accumulate(Var target, const Matrix& g) {
    Node& n = nodes_.at(target.id);
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::backward(Var loss) {
    if (backward_done_) fail(ErrorCode::TapeState, "backward() called twice without reset()");
    const Node& root = nodes_.at(loss.id);
    if (root.value.rows() != 1 || root.value.cols() != 1) fail(ErrorCode::DimMismatch, "backward() target must be 1x1");
    backward_done_ = true;
    if (!root.requires_grad) return;
    accumulate(loss, Matrix::scalar(1.0));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || !n.has_grad) continue;
        const Matrix upstream = n.grad;
        n.backward(*this, upstream);
    }
}

void Tape::reset() {
    nodes_.clear();
    params_.clear();
    backward_done_ = false;
}

namespace {

void same_shape(Var a, Var b, const char* op) {
    if (!a.value().same_shape(b.value())) {
        fail(ErrorCode::DimMismatch, std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                         " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
}

template <typename F>
Matrix map(const Matrix& m, F f) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = f(m[i]);
    return out;
}

Var unary(Var a, Matrix value, std::function<Matrix(const Matrix& up)> local) {
    Var parents[] = {a};
    return a.tape->record(std::move(value), parents,
                          [a, local = std::move(local)](Tape& t, const Matrix& up) { t.accumulate(a, local(up)); });
}

}  // namespace

Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Var parents[] = {a, b};
    return a.tape->record(a.value() + b.value(), parents, [a, b](Tape& t, const Matrix& up) {
        t.accumulate(a, up);
        t.accumulate(b, up);
    });
}

Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    Var parents[] = {a, b};
    return a.tape->record(a.value() - b.value(), parents, [a, b](Tape& t, const Matrix& up) {
        t.accumulate(a, up);
        t.accumulate(b, -1.0 * up);
    });
}

Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    Var parents[] = {a, b};
    return a.tape->record(hadamard(a.value(), b.value()), parents, [a, b](Tape& t, const Matrix& up) {
        t.accumulate(a, hadamard(up, b.value()));
        t.accumulate(b, hadamard(up, a.value()));
    });
}

Var div(Var a, Var b) {
    same_shape(a, b, "div");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
    Var parents[] = {a, b};
    return a.tape->record(std::move(out), parents, [a, b](Tape& t, const Matrix& up) {
        const Matrix& av = a.value();
        const Matrix& bv = b.value();
        Matrix ga(up.rows(), up.cols()), gb(up.rows(), up.cols());
        for (std::size_t i = 0; i < up.size(); ++i) {
            ga[i] = up[i] / bv[i];
            gb[i] = -up[i] * av[i] / (bv[i] * bv[i]);
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

Var scale(Var a, double s) {
    return unary(a, s * a.value(), [s](const Matrix& up) { return s * up; });
}

Var add_scalar(Var a, double s) {
    return unary(a, map(a.value(), [s](double x) { return x + s; }), [](const Matrix& up) { return up; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
    return unary(a, map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), [a](const Matrix& up) {
        Matrix g = up;
        const Matrix& x = a.value();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(x[i] > 0.0)) g[i] = 0.0;
        return g;
    });
}

Var exp(Var a) {
    Matrix out = map(a.value(), [](double x) { return std::exp(x); });
    Matrix local = out;
    return unary(a, std::move(out), [local = std::move(local)](const Matrix& up) { return hadamard(up, local); });
}

Var log(Var a) {
    return unary(a, map(a.value(), [](double x) { return std::log(x); }), [a](const Matrix& up) {
        Matrix g = up;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] /= a.value()[i];
        return g;
    });
}

Var sqrt(Var a) {
    Matrix out = map(a.value(), [](double x) { return std::sqrt(x); });
    Matrix local = out;
    return unary(a, std::move(out), [local = std::move(local)](const Matrix& up) {
        Matrix g = up;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 0.5 / local[i];
        return g;
    });
}

Var square(Var a) {
    return unary(a, map(a.value(), [](double x) { return x * x; }), [a](const Matrix& up) {
        Matrix g = up;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 2.0 * a.value()[i];
        return g;
    });
}

Var min0(Var a) {
    return unary(a, map(a.value(), [](double x) { return x < 0.0 ? x : 0.0; }), [a](const Matrix& up) {
        Matrix g = up;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(a.value()[i] < 0.0)) g[i] = 0.0;
        return g;
    });
}

Var smooth_l1(Var a) {
    auto f = [](double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; };
    return unary(a, map(a.value(), f), [a](const Matrix& up) {
        Matrix g = up;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = a.value()[i];
            g[i] *= std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
        }
        return g;
    });
}

Var matmul(Var a, Var b) {
    Var parents[] = {a, b};
    return a.tape->record(fgzsd::matmul(a.value(), b.value()), parents, [a, b](Tape& t, const Matrix& up) {
        if (t.requires_grad(a)) t.accumulate(a, fgzsd::matmul(up, fgzsd::transpose(b.value())));
        if (t.requires_grad(b)) t.accumulate(b, fgzsd::matmul(fgzsd::transpose(a.value()), up));
    });
}

Var transpose(Var a) {
    return unary(a, fgzsd::transpose(a.value()), [](const Matrix& up) { return fgzsd::transpose(up); });
}

Var add_colvec(Var a, Var v) {
    if (v.cols() != 1 || v.rows() != a.rows()) fail(ErrorCode::DimMismatch, "add_colvec");
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += v.value()[i];
    Var parents[] = {a, v};
    return a.tape->record(std::move(out), parents, [a, v](Tape& t, const Matrix& up) {
        t.accumulate(a, up);
        Matrix gv(up.rows(), 1);
        for (std::size_t i = 0; i < up.rows(); ++i)
            for (std::size_t j = 0; j < up.cols(); ++j) gv[i] += up(i, j);
        t.accumulate(v, gv);
    });
}

Var mul_colvec(Var a, Var v) {
    if (v.cols() != 1 || v.rows() != a.rows()) fail(ErrorCode::DimMismatch, "mul_colvec");
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= v.value()[i];
    Var parents[] = {a, v};
    return a.tape->record(std::move(out), parents, [a, v](Tape& t, const Matrix& up) {
        const Matrix& av = a.value();
        const Matrix& vv = v.value();
        Matrix ga(up.rows(), up.cols());
        Matrix gv(up.rows(), 1);
        for (std::size_t i = 0; i < up.rows(); ++i) {
            for (std::size_t j = 0; j < up.cols(); ++j) {
                ga(i, j) = up(i, j) * vv[i];
                gv[i] += up(i, j) * av(i, j);
            }
        }
        t.accumulate(a, ga);
        t.accumulate(v, gv);
    });
}

Var mul_scalar(Var s, Var b) {
    if (s.rows() != 1 || s.cols() != 1) fail(ErrorCode::DimMismatch, "mul_scalar expects a 1x1 factor");
    const double sv = s.value().item();
    Var parents[] = {s, b};
    return s.tape->record(sv * b.value(), parents, [s, b](Tape& t, const Matrix& up) {
        double gs = 0.0;
        for (std::size_t i = 0; i < up.size(); ++i) gs += up[i] * b.value()[i];
        t.accumulate(s, Matrix::scalar(gs));
        t.accumulate(b, s.value().item() * up);
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double x : a.value().data()) s += x;
    const std::size_t r = a.rows(), c = a.cols();
    return unary(a, Matrix::scalar(s), [r, c](const Matrix& up) { return Matrix::filled(r, c, up.item()); });
}

Var mean(Var a) {
    if (a.value().empty()) fail(ErrorCode::EmptyInput, "mean of empty matrix");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var sum_rows(Var a) {
    Matrix out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a.value()(i, j);
    const std::size_t r = a.rows();
    return unary(a, std::move(out), [r](const Matrix& up) {
        Matrix g(r, up.cols());
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < up.cols(); ++j) g(i, j) = up[j];
        return g;
    });
}

Var sum_cols(Var a) {
    Matrix out(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[i] += a.value()(i, j);
    const std::size_t c = a.cols();
    return unary(a, std::move(out), [c](const Matrix& up) {
        Matrix g(up.rows(), c);
        for (std::size_t i = 0; i < up.rows(); ++i)
            for (std::size_t j = 0; j < c; ++j) g(i, j) = up[i];
        return g;
    });
}

Var mean_cols(Var a) {
    if (a.cols() == 0) fail(ErrorCode::EmptyInput, "mean_cols of zero columns");
    return scale(sum_cols(a), 1.0 / static_cast<double>(a.cols()));
}

Var logsumexp(Var a) {
    if (a.value().empty()) fail(ErrorCode::EmptyInput, "logsumexp of empty matrix");
    const double lse = fgzsd::logsumexp(a.value().data());
    return unary(a, Matrix::scalar(lse), [a, lse](const Matrix& up) {
        Matrix g(a.rows(), a.cols());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = up.item() * std::exp(a.value()[i] - lse);
        return g;
    });
}

Var logsumexp_rows(Var a) {
    if (a.cols() == 0) fail(ErrorCode::EmptyInput, "logsumexp_rows of zero columns");
    Matrix out(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        out[i] = fgzsd::logsumexp(a.value().data().subspan(i * a.cols(), a.cols()));
    }
    Matrix lse = out;
    return unary(a, std::move(out), [a, lse = std::move(lse)](const Matrix& up) {
        Matrix g(a.rows(), a.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) = up[i] * std::exp(a.value()(i, j) - lse[i]);
        return g;
    });
}

Var softmax_rows(Var a) {
    Matrix p = fgzsd::softmax_rows(a.value());
    Matrix probs = p;
    return unary(a, std::move(p), [probs = std::move(probs)](const Matrix& up) {
        Matrix g(up.rows(), up.cols());
        for (std::size_t i = 0; i < up.rows(); ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < up.cols(); ++j) inner += up(i, j) * probs(i, j);
            for (std::size_t j = 0; j < up.cols(); ++j) g(i, j) = probs(i, j) * (up(i, j) - inner);
        }
        return g;
    });
}

Var cosine_cols(Var a, Var b) {
    same_shape(a, b, "cosine_cols");
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const std::size_t m = av.rows(), n = av.cols();
    Matrix out(1, n);
    Matrix na(1, n), nb(1, n);
    for (std::size_t j = 0; j < n; ++j) {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            ab += av(i, j) * bv(i, j);
            aa += av(i, j) * av(i, j);
            bb += bv(i, j) * bv(i, j);
        }
        na[j] = std::sqrt(aa);
        nb[j] = std::sqrt(bb);
        if (na[j] < kZeroNorm || nb[j] < kZeroNorm) fail(ErrorCode::ZeroNorm, "cosine of a near-zero vector");
        out[j] = ab / (na[j] * nb[j]);
    }
    Matrix cos = out;
    Var parents[] = {a, b};
    return a.tape->record(std::move(out), parents, [a, b, cos, na, nb](Tape& t, const Matrix& up) {
        const Matrix& av = a.value();
        const Matrix& bv = b.value();
        Matrix ga(av.rows(), av.cols()), gb(av.rows(), av.cols());
        for (std::size_t j = 0; j < av.cols(); ++j) {
            const double inv = 1.0 / (na[j] * nb[j]);
            for (std::size_t i = 0; i < av.rows(); ++i) {
                ga(i, j) = up[j] * (bv(i, j) * inv - cos[j] * av(i, j) / (na[j] * na[j]));
                gb(i, j) = up[j] * (av(i, j) * inv - cos[j] * bv(i, j) / (nb[j] * nb[j]));
            }
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

Var element(Var a, std::size_t r, std::size_t c) {
    if (r >= a.rows() || c >= a.cols()) fail(ErrorCode::DimMismatch, "element index out of range");
    const std::size_t rows = a.rows(), cols = a.cols();
    return unary(a, Matrix::scalar(a.value()(r, c)), [rows, cols, r, c](const Matrix& up) {
        Matrix g(rows, cols);
        g(r, c) = up.item();
        return g;
    });
}

Var col(Var a, std::size_t c) {
    if (c >= a.cols()) fail(ErrorCode::DimMismatch, "column index out of range");
    const std::size_t cols = a.cols();
    return unary(a, Matrix::column(a.value().col(c)), [cols, c](const Matrix& up) {
        Matrix g(up.rows(), cols);
        for (std::size_t i = 0; i < up.rows(); ++i) g(i, c) = up[i];
        return g;
    });
}

Var slice_rows(Var a, std::size_t first, std::size_t count) {
    if (first + count > a.rows()) fail(ErrorCode::DimMismatch, "slice_rows out of range");
    const std::size_t cols = a.cols(), rows = a.rows();
    Matrix out(count, cols);
    std::copy_n(a.value().data().begin() + static_cast<std::ptrdiff_t>(first * cols), count * cols, out.data().begin());
    return unary(a, std::move(out), [rows, cols, first](const Matrix& up) {
        Matrix g(rows, cols);
        std::copy(up.data().begin(), up.data().end(), g.data().begin() + static_cast<std::ptrdiff_t>(first * cols));
        return g;
    });
}

Var gather_cols(Var a, std::span<const std::size_t> index) {
    std::vector<std::size_t> idx(index.begin(), index.end());
    Matrix out(a.rows(), idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= a.cols()) fail(ErrorCode::DimMismatch, "gather_cols index out of range");
        for (std::size_t i = 0; i < a.rows(); ++i) out(i, k) = a.value()(i, idx[k]);
    }
    const std::size_t cols = a.cols();
    return unary(a, std::move(out), [cols, idx = std::move(idx)](const Matrix& up) {
        Matrix g(up.rows(), cols);
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t i = 0; i < up.rows(); ++i) g(i, idx[k]) += up(i, k);
        return g;
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) fail(ErrorCode::EmptyInput, "concat_cols of nothing");
    const std::size_t rows = parts[0].rows();
    std::size_t total = 0;
    for (Var p : parts) {
        if (p.rows() != rows) fail(ErrorCode::DimMismatch, "concat_cols row mismatch");
        total += p.cols();
    }
    Matrix out(rows, total);
    std::size_t off = 0;
    for (Var p : parts) {
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
        off += p.cols();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return parts[0].tape->record(std::move(out), parts, [ps](Tape& t, const Matrix& up) {
        std::size_t off = 0;
        for (Var p : ps) {
            if (t.requires_grad(p)) {
                Matrix g(p.rows(), p.cols());
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) = up(i, off + j);
                t.accumulate(p, g);
            }
            off += p.cols();
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) fail(ErrorCode::EmptyInput, "concat_rows of nothing");
    const std::size_t cols = parts[0].cols();
    std::size_t total = 0;
    for (Var p : parts) {
        if (p.cols() != cols) fail(ErrorCode::DimMismatch, "concat_rows column mismatch");
        total += p.rows();
    }
    std::vector<double> data;
    data.reserve(total * cols);
    for (Var p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    Matrix out(total, cols);
    std::copy(data.begin(), data.end(), out.data().begin());
    std::vector<Var> ps(parts.begin(), parts.end());
    return parts[0].tape->record(std::move(out), parts, [ps](Tape& t, const Matrix& up) {
        std::size_t off = 0;
        for (Var p : ps) {
            const std::size_t n = p.value().size();
            if (t.requires_grad(p)) {
                Matrix g(p.rows(), p.cols());
                std::copy_n(up.data().begin() + static_cast<std::ptrdiff_t>(off), n, g.data().begin());
                t.accumulate(p, g);
            }
            off += n;
        }
    });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a.value().size()) fail(ErrorCode::DimMismatch, "reshape size mismatch");
    Matrix out(rows, cols);
    std::copy(a.value().data().begin(), a.value().data().end(), out.data().begin());
    const std::size_t r0 = a.rows(), c0 = a.cols();
    return unary(a, std::move(out), [r0, c0](const Matrix& up) {
        Matrix g(r0, c0);
        std::copy(up.data().begin(), up.data().end(), g.data().begin());
        return g;
    });
}

Var upsample2x(Var a, std::size_t height, std::size_t width) {
    if (a.cols() != height * width) fail(ErrorCode::DimMismatch, "upsample2x spatial size");
    Matrix out = fgzsd::upsample2x(a.value(), height, width);
    return unary(a, std::move(out), [height, width](const Matrix& up) {
        const auto ty = upsample_taps(height);
        const auto tx = upsample_taps(width);
        const std::size_t ow = 2 * width;
        Matrix g(up.rows(), height * width);
        for (std::size_t c = 0; c < up.rows(); ++c) {
            for (std::size_t oy = 0; oy < ty.size(); ++oy) {
                for (std::size_t ox = 0; ox < tx.size(); ++ox) {
                    const double u = up(c, oy * ow + ox);
                    const auto& y = ty[oy];
                    const auto& x = tx[ox];
                    g(c, y.lo * width + x.lo) += u * y.w_lo * x.w_lo;
                    g(c, y.lo * width + x.hi) += u * y.w_lo * x.w_hi;
                    g(c, y.hi * width + x.lo) += u * y.w_hi * x.w_lo;
                    g(c, y.hi * width + x.hi) += u * y.w_hi * x.w_hi;
                }
            }
        }
        return g;
    });
}

}  // namespace fgzsd::ad
