// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference audit of every differentiable training loss on small
// randomized instances (all dims <= 8).

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace fgzsd {

struct GradSuiteRow {
    std::string loss;
    std::size_t instances = 0;
    /// Instances drawn too close to a ReLU or hinge kink and replaced.
    std::size_t redraws = 0;
    double max_rel_error = 0;  // worst over instances and coordinates
    bool pass = false;
};

/// One row per loss: avss_loss, gan_losses (D), gan_losses (G), hicl_loss,
/// hier_ce_loss, total_loss. Instance i of every loss is drawn from seed i.
std::vector<GradSuiteRow> gradient_suite(std::size_t seeds = 20, double tolerance = 1e-4, double eps = 1e-5);

/// Fixed-width table with a PASS/FAIL column.
std::string format_gradient_suite(const std::vector<GradSuiteRow>& rows);

}  // namespace fgzsd
