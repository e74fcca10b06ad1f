#pragma once

#include <stdexcept>
#include <string>

namespace qtrace {

/// Failure categories shared by every module. The CLI maps them onto exit codes.
enum class ErrorCode {
  dimension_mismatch,
  window_too_small,
  unbounded_support,
  validation_failed,
  formula_mismatch,
  n_guard_exceeded,
  certificate_missing,
  invalid_argument,
  gap_closed,
  tail_fit_failed,
  schema,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace qtrace
