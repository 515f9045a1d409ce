#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace syndesi {

enum class ErrorCode {
  parse,
  validation,
  contract,
  underdetermined,
  not_found,
  conflict,
  invalid_target,
  invalid_status,
  degenerate_heading,
  collapse,
  init_failed,
  training,
  io,
  unavailable,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::parse: return "parse";
    case ErrorCode::validation: return "validation";
    case ErrorCode::contract: return "contract";
    case ErrorCode::underdetermined: return "underdetermined";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::invalid_target: return "invalid_target";
    case ErrorCode::invalid_status: return "invalid_status";
    case ErrorCode::degenerate_heading: return "degenerate_heading";
    case ErrorCode::collapse: return "collapse";
    case ErrorCode::init_failed: return "init_failed";
    case ErrorCode::training: return "training";
    case ErrorCode::io: return "io";
    case ErrorCode::unavailable: return "unavailable";
  }
  return "unknown";
}

// Every failure surfaced by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace syndesi
