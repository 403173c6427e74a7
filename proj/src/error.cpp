// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/error.hpp"

namespace fgzsd {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::ZeroNorm: return "ZeroNorm";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::TapeState: return "TapeState";
        case ErrorCode::RaggedDepth: return "RaggedDepth";
        case ErrorCode::DuplicateLeaf: return "DuplicateLeaf";
        case ErrorCode::UnknownLeaf: return "UnknownLeaf";
        case ErrorCode::UnknownClass: return "UnknownClass";
        case ErrorCode::MissingLeafVector: return "MissingLeafVector";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::ValidationError: return "ValidationError";
        case ErrorCode::InfeasibleFraction: return "InfeasibleFraction";
        case ErrorCode::BatchTooSmall: return "BatchTooSmall";
        case ErrorCode::BothZero: return "BothZero";
        case ErrorCode::SettingMismatch: return "SettingMismatch";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

namespace {
std::string join_violations(const std::vector<std::string>& v) {
    std::string out = std::to_string(v.size()) + " violation(s)";
    for (const auto& s : v) out += "\n  " + s;
    return out;
}
}  // namespace

ValidationError::ValidationError(std::vector<std::string> violations)
    : Error(ErrorCode::ValidationError, join_violations(violations)),
      violations_(std::move(violations)) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace fgzsd
