#pragma once

#include <stdexcept>
#include <string>

namespace mflow {

enum class ErrorCode {
  invalid_argument,
  numeric,
  pole_at_data,
  insufficient_overlap,
  invalid_state,
  training_diverged,
  unsupported_dimension,
  empty_set,
  config,
  io,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above; the C
// API maps them onto mflow_status values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised when a trajectory produces a non-finite value; step is the grid index.
class StepError : public Error {
 public:
  StepError(const std::string& what, long step)
      : Error(ErrorCode::numeric, what + " at step " + std::to_string(step)),
        step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace mflow
