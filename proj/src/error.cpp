#include "mflow/error.hpp"

namespace mflow {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::numeric: return "numeric-error";
    case ErrorCode::pole_at_data: return "pole-at-data";
    case ErrorCode::insufficient_overlap: return "insufficient-overlap";
    case ErrorCode::invalid_state: return "invalid-state";
    case ErrorCode::training_diverged: return "training-diverged";
    case ErrorCode::unsupported_dimension: return "unsupported-dimension";
    case ErrorCode::empty_set: return "empty-set";
    case ErrorCode::config: return "config-error";
    case ErrorCode::io: return "io-error";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace mflow
