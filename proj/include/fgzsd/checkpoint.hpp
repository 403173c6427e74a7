// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints are a flat little-endian float64 blob (<base>.bin) plus a JSON
// sidecar (<base>.json) holding {"tensors": [{name, rows, cols, offset}], ...}
// where offset counts doubles, followed by caller-supplied metadata keys.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgzsd/matrix.hpp"

namespace fgzsd {

struct NamedTensor {
    std::string name;
    Matrix value;
};

struct Checkpoint {
    std::vector<NamedTensor> tensors;
    nlohmann::json meta = nlohmann::json::object();

    const Matrix& at(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& base, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& base);

}  // namespace fgzsd
