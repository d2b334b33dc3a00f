#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace harness {

// Error conditions named by the operation contracts. Violations that are
// data (validation reports, lint findings) are never raised as errors.
enum class ErrorCode {
  parse_error,
  io_error,
  invalid_argument,
  empty_issue,
  invalid_issue,
  agent_response_invalid,
  monotonicity_violation,
  duplicate_id,
  not_approved,
  entry_missing,
  state_mismatch,
  scenario_incomplete,
  backend_unreachable,
  malformed_output,
  malformed_after_retries,
  role_violation,
  illegal_transition,
  timeout,
  sandbox_violation,
  unknown_test,
  already_resolved,
  shape_mismatch,
  not_found,
  unauthorized,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace harness
