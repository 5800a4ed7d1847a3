#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dlm {

enum class ErrorCode {
    InvalidArgument,
    InvalidLogits,
    VocabTooSmall,
    SpecIncomplete,
    DenoiserFailure,
    ScheduleExhausted,
    TraceBuildError,
    TraceMismatch,
    TraceCorrupt,
    UnsupportedVersion,
    ConfigError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidLogits: return "InvalidLogits";
    case ErrorCode::VocabTooSmall: return "VocabTooSmall";
    case ErrorCode::SpecIncomplete: return "SpecIncomplete";
    case ErrorCode::DenoiserFailure: return "DenoiserFailure";
    case ErrorCode::ScheduleExhausted: return "ScheduleExhausted";
    case ErrorCode::TraceBuildError: return "TraceBuildError";
    case ErrorCode::TraceMismatch: return "TraceMismatch";
    case ErrorCode::TraceCorrupt: return "TraceCorrupt";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace dlm
