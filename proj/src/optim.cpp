// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/optim.hpp"

#include <cmath>

#include "fgzsd/error.hpp"

namespace fgzsd {

void Adam::step(const ad::Tape& tape, std::span<Matrix* const> params) {
    for (Matrix* p : params) {
        const Matrix* g = tape.grad_of(*p);
        if (g == nullptr) continue;
        if (!g->all_finite()) fail(ErrorCode::NonFiniteGradient, "Adam received a non-finite gradient");
        auto& s = state_[p];
        if (s.t == 0) {
            s.m = Matrix(p->rows(), p->cols());
            s.v = Matrix(p->rows(), p->cols());
        }
        ++s.t;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double gi = (*g)[i];
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
            (*p)[i] -= lr_ * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
        }
    }
}

}  // namespace fgzsd
