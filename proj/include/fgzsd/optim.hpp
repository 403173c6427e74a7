// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "fgzsd/autodiff.hpp"
#include "fgzsd/matrix.hpp"

namespace fgzsd {

/// Adam over parameter matrices bound with Tape::param(). Matrices that were
/// never bound on the tape are left untouched.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const ad::Tape& tape, std::span<Matrix* const> params);
    double learning_rate() const noexcept { return lr_; }
    void set_learning_rate(double lr) noexcept { lr_ = lr; }

private:
    struct Moments {
        Matrix m;
        Matrix v;
        std::size_t t = 0;
    };
    double lr_, beta1_, beta2_, eps_;
    std::map<const Matrix*, Moments> state_;
};

}  // namespace fgzsd
