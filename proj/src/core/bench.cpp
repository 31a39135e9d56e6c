#include "neuresonance/bench.hpp"

#include "neuresonance/error.hpp"
#include "neuresonance/synth.hpp"

#include <limits>

namespace nr {

BenchResult run_bench(std::size_t updates, std::uint64_t seed, EngineConfig config) {
  if (updates == 0) throw ConfigError("bench needs at least one update");
  config.osc_port = 0;
  config.haptic_url.clear();
  config.control_port = -1;
  config.record_dir.clear();

  SynthConfig synth;
  synth.seed = seed;
  synth.sample_rate = config.sample_rate;
  synth.motion_rate = config.motion_rate;
  synth.duration_s = config.window_s + config.hop_s * static_cast<double>(updates - 1);
  synth.set_coupling(0.5);

  Engine engine(config);
  engine.run_synth(synth, std::numeric_limits<double>::infinity());
  const auto stats = engine.latency_stats();
  if (!stats) throw StateError("bench produced no updates");

  BenchResult out;
  out.updates = engine.updates().size();
  out.stages = *stats;
  return out;
}

} // namespace nr
