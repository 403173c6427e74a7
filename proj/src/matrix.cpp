// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fgzsd/error.hpp"

namespace fgzsd {

namespace {
void check_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) fail(ErrorCode::NonFinite, "matrix entry is NaN or Inf");
    }
}
}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        fail(ErrorCode::DimMismatch, "data length " + std::to_string(data_.size()) + " != " +
                                         std::to_string(rows) + "x" + std::to_string(cols));
    }
    check_finite(data_);
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) fail(ErrorCode::DimMismatch, "ragged initializer rows");
        data_.insert(data_.end(), r.begin(), r.end());
    }
    check_finite(data_);
}

Matrix Matrix::column(std::span<const double> v) { return Matrix(v.size(), 1, {v.begin(), v.end()}); }

Matrix Matrix::row(std::span<const double> v) { return Matrix(1, v.size(), {v.begin(), v.end()}); }

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::filled(std::size_t rows, std::size_t cols, double value) {
    Matrix m(rows, cols);
    std::fill(m.data_.begin(), m.data_.end(), value);
    return m;
}

double Matrix::item() const {
    if (rows_ != 1 || cols_ != 1) fail(ErrorCode::DimMismatch, "item() on a non-1x1 matrix");
    return data_[0];
}

Vector Matrix::col(std::size_t c) const {
    Vector out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
}

void Matrix::set_col(std::size_t c, std::span<const double> v) {
    if (v.size() != rows_) fail(ErrorCode::DimMismatch, "set_col length");
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        fail(ErrorCode::DimMismatch, "matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                         " by " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) fail(ErrorCode::DimMismatch, "matrix add");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) fail(ErrorCode::DimMismatch, "matrix sub");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Matrix operator*(double s, const Matrix& a) {
    Matrix out = a;
    for (double& x : out.data()) x *= s;
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) fail(ErrorCode::DimMismatch, "hadamard");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail(ErrorCode::DimMismatch, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) fail(ErrorCode::DimMismatch, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace fgzsd
