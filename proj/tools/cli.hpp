// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0
//
// The fgzsd command line as a library, so tests can drive it in-process.
// Exit codes: 0 success, 1 invalid input, 2 bad configuration or usage,
// 3 numeric failure.

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "fgzsd/error.hpp"

namespace fgzsd::cli {

enum Exit : int { kOk = 0, kValidation = 1, kConfig = 2, kNumeric = 3 };

/// Exit code for a library error.
int exit_code_for(ErrorCode code);
/// Module that owns an error code, used as the message prefix.
const char* module_of(ErrorCode code);

/// Runs one invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fgzsd::cli
