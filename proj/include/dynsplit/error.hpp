// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dynsplit {

enum class ErrorCode {
    InvalidArgument,
    RowNotNormalized,
    NonCausalEntry,
    NegativeEntry,
    CandidateOutOfRange,
    EmptyInput,
    EmptySequence,
    PlanMismatch,
    PlanCoverageMismatch,
    DimensionMismatch,
    EmptySelection,
    ShapeMismatch,
    Format,
    Io,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable error code next to the message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), m_code(code) {}

    ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

}  // namespace dynsplit
