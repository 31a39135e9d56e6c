#include "neuresonance/error.hpp"

namespace nr {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "config";
    case ErrorCode::input: return "input";
    case ErrorCode::framing: return "framing";
    case ErrorCode::gap: return "gap";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::io: return "io";
    case ErrorCode::state: return "state";
    case ErrorCode::insufficient_channels: return "insufficient_channels";
  }
  return "unknown";
}

} // namespace nr
