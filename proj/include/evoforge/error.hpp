#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace evoforge {

enum class ErrorCode {
  validation,    // malformed input, precondition violation
  stage_order,   // stage command issued out of sequence
  config_drift,  // live config does not match the run directory
  io,
  corruption,    // digest or log-chain mismatch
  transport,     // backend retries exhausted
  judge_failure, // verdict unparseable after retries
  locked,        // run directory owned by another process
  hook_failure,  // trainer hook exited nonzero
};

std::string_view to_string(ErrorCode code);

/// Process exit code for a failure category: 1 for validation-type
/// failures, 2 for corruption and transport exhaustion.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const nlohmann::json& detail() const noexcept { return detail_; }
  int exit_code() const noexcept { return exit_code_for(code_); }

  /// Single-line {code, message, detail} object.
  nlohmann::json to_json() const;

 private:
  ErrorCode code_;
  nlohmann::json detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message,
                              nlohmann::json detail = nlohmann::json::object()) {
  throw Error(code, message, std::move(detail));
}

}  // namespace evoforge
