#include "warmstart/error.hpp"

namespace warmstart {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::dimension: return "dimension error";
    case ErrorCode::non_finite: return "non-finite value";
    case ErrorCode::degenerate: return "degenerate input";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::format: return "format error";
    case ErrorCode::id: return "id error";
    case ErrorCode::length: return "length error";
    case ErrorCode::shape: return "shape error";
    case ErrorCode::incompatible: return "incompatible checkpoint";
    case ErrorCode::selection: return "selection error";
    case ErrorCode::rule: return "rule error";
    case ErrorCode::scheme: return "scheme error";
    case ErrorCode::config: return "config error";
    case ErrorCode::io: return "io error";
  }
  return "error";
}

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::config: return 2;
    case ErrorCode::io: return 3;
    case ErrorCode::format: return 4;
    case ErrorCode::id:
    case ErrorCode::length:
    case ErrorCode::shape:
    case ErrorCode::dimension: return 5;
    case ErrorCode::incompatible:
    case ErrorCode::scheme: return 6;
    case ErrorCode::selection:
    case ErrorCode::rule: return 7;
    case ErrorCode::non_finite:
    case ErrorCode::divergence: return 8;
    case ErrorCode::degenerate: return 9;
  }
  return 1;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace warmstart
