#pragma once

#include "neuresonance/engine.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace nr {

struct BenchResult {
  std::size_t updates{0};
  std::map<std::string, LatencySummary> stages;
};

// Drives the engine over a synthetic session long enough for `updates`
// windows and reports per-stage latency.
BenchResult run_bench(std::size_t updates = 200, std::uint64_t seed = 1, EngineConfig config = {});

} // namespace nr
