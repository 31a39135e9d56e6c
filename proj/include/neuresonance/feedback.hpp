#pragma once

#include "neuresonance/ibs.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nr {

// Quantized synchrony, 1 (lowest) .. 5 (highest).
class FeedbackLevel {
public:
  static constexpr int kMin = 1;
  static constexpr int kMax = 5;
  static constexpr int kNeutral = 3;

  explicit FeedbackLevel(int level);

  int value() const noexcept { return level_; }
  auto operator<=>(const FeedbackLevel&) const = default;

private:
  int level_;
};

using BinEdges = std::array<double, 4>;
inline constexpr BinEdges kDefaultBinEdges{0.2, 0.4, 0.6, 0.8};

// Throws ConfigError unless strictly ascending inside (0, 1).
void validate_bin_edges(const BinEdges& edges);

// Metric clamped to [0, 1], left-closed bins. Invalid metrics map to the
// neutral level; held metrics quantize normally.
FeedbackLevel quantize_level(const IbsMetric& metric, const BinEdges& edges = kDefaultBinEdges);

struct RingSpec {
  double base_radius{1.0};
  double wave_amplitude{0.0};
  int spike_count{24};
  std::string color{"#FFA500"};

  bool operator==(const RingSpec&) const = default;
};

struct VisualOptions {
  double base_radius{1.0};
  double max_amplitude{0.25};
  int spike_count{24};
};

// Amplitude falls linearly from max at level 1 to a still circle at level 5.
RingSpec map_visual(FeedbackLevel level, const VisualOptions& options = {});

enum class AudioPreset { linear, geometric };

struct ChordSpec {
  double root_hz{0.0};
  double middle_hz{0.0};
  double fifth_hz{0.0};

  bool operator==(const ChordSpec&) const = default;
};

inline constexpr double kMajorThirdHz = 659.0;
inline constexpr double kLowestMiddleHz = 547.0;

// Root and fifth stay fixed (4:6 of the major third); the middle note drops
// as the level falls. Linear preset spans 547..659 Hz, geometric preset
// steps down 5 % per level.
ChordSpec map_audio(FeedbackLevel level, AudioPreset preset = AudioPreset::linear);

struct HapticPattern {
  int bpm{0};
  int intensity{0}; // percent of max drive
  int pulse_ms{150};

  bool operator==(const HapticPattern&) const = default;
};

struct HapticTable {
  // Indexed by level - 1: {bpm, intensity}.
  std::array<std::array<int, 2>, 5> rows{{{180, 100}, {150, 80}, {120, 60}, {80, 40}, {50, 20}}};
  int pulse_ms{150};

  // bpm and intensity must strictly decrease with level; intensity in [0, 100].
  void validate() const;
};

HapticPattern map_haptic(FeedbackLevel level, const HapticTable& table = {});

inline constexpr std::string_view kOscAddress = "/neuresonance/ibs";

struct OscMessage {
  std::string address;
  float metric{0.0f};
  std::int32_t level{0};
};

// OSC 1.0 message: padded address, ",fi" type tags, big-endian arguments.
std::vector<std::uint8_t> encode_osc(float metric_value, std::int32_t level);

// Accepts exactly the ",fi" message shape produced by encode_osc. Throws
// FramingError on anything else.
OscMessage decode_osc(std::span<const std::uint8_t> packet);

} // namespace nr
