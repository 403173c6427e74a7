// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fgzsd {

enum class ErrorCode {
    DimMismatch,
    ZeroNorm,
    EmptyInput,
    NonFinite,
    NonFiniteGradient,
    InvalidArgument,
    TapeState,
    RaggedDepth,
    DuplicateLeaf,
    UnknownLeaf,
    UnknownClass,
    MissingLeafVector,
    ParseError,
    ValidationError,
    InfeasibleFraction,
    BatchTooSmall,
    BothZero,
    SettingMismatch,
    ConfigError,
    IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised by manifest validation; carries every violation found, not just the first.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> violations);

    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    std::vector<std::string> violations_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool ok, ErrorCode code, const char* what) {
    if (!ok) fail(code, what);
}

}  // namespace fgzsd
