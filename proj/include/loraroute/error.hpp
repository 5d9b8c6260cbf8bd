// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace loraroute {

enum class ErrorCode {
  kDimensionMismatch,
  kInvalidConfig,
  kInvalidArgument,
  kNotProbability,
  kTokenOutOfRange,
  kSequenceTooLong,
  kContextOverflow,
  kDuplicateId,
  kUnknownId,
  kShapeMismatch,
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kMalformed,
  kEmptyPool,
  kEmptyInput,
  kStaleDecision,
  kDivergence,
  kIo,
};

// Stable snake_case name used in CLI diagnostics.
std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace loraroute
