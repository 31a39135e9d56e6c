#pragma once

#include "neuresonance/recording.hpp"
#include "neuresonance/signal.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <utility>
#include <vector>

namespace nr {

struct ArtifactBurst {
  double start_s{0.0};
  double duration_s{0.0};
  Participant participant{Participant::A};
};

struct SynthConfig {
  double duration_s{60.0};
  double sample_rate{kDefaultSampleRate};
  double motion_rate{100.0};
  std::size_t channels{kEegChannels};

  // Coupling per band {theta, alpha, beta}; only carrier_band is generated.
  std::array<double, 3> coupling{0.0, 0.0, 0.0};
  Band carrier_band{Band::alpha};

  double carrier_uv{10.0};     // oscillator amplitude
  double noise_sigma{5.0};     // 1/f background, microvolts RMS
  double phase_noise_rad{0.1}; // slow jitter added to participant B's phase
  double freq_jitter_hz{0.5};  // spread of the carrier's random-walk frequency

  double burst_speed_mm_s{250.0};
  double burst_deflection_uv{150.0};
  std::vector<ArtifactBurst> artifact_schedule;

  std::uint64_t seed{1};

  double effective_coupling() const { return coupling[static_cast<std::size_t>(carrier_band)]; }
  void set_coupling(double kappa) { coupling = {kappa, kappa, kappa}; }

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

nlohmann::json synth_config_to_json(const SynthConfig& config);
// Missing keys keep their defaults.
SynthConfig synth_config_from_json(const nlohmann::json& doc);

struct CouplingPoint {
  std::uint64_t timestamp_us{0};
  double kappa{0.0};
};

struct SynthOutput {
  std::vector<SampleFrame> eeg_a, eeg_b, motion_a, motion_b;
  std::vector<CouplingPoint> coupling_trace;

  // All four streams interleaved by (timestamp, stream id).
  std::vector<SampleFrame> merged() const;
};

// Incremental dual-EEG + motion generator. Deterministic for a given config;
// coupling may be changed between calls.
class SynthSource {
public:
  explicit SynthSource(SynthConfig config);
  ~SynthSource();
  SynthSource(SynthSource&&) noexcept;
  SynthSource& operator=(SynthSource&&) noexcept;

  // Frames with timestamp < t_us, merged in (timestamp, stream id) order.
  std::vector<SampleFrame> advance_to(std::uint64_t t_us);
  std::vector<SampleFrame> advance_all();

  void set_coupling(double kappa);
  bool finished() const;
  std::uint64_t end_us() const;

  const SynthConfig& config() const noexcept { return config_; }
  const std::vector<CouplingPoint>& coupling_trace() const noexcept { return trace_; }

private:
  struct State;

  SynthConfig config_;
  std::unique_ptr<State> state_;
  std::vector<CouplingPoint> trace_;
};

SynthOutput synth_dual_eeg(const SynthConfig& config);

struct SynthSegment {
  Condition condition{Condition::no_feedback};
  double coupling{0.0};
  double duration_s{30.0};
};

// Writes one recording holding a trial per segment, back to back, with the
// coupling switched at each boundary. An empty list means one trial spanning
// the whole configured duration.
Manifest write_synth_session(const std::filesystem::path& dir, SynthConfig config,
                             const std::vector<SynthSegment>& segments);

} // namespace nr
