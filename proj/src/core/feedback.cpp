#include "neuresonance/feedback.hpp"

#include "neuresonance/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace nr {

FeedbackLevel::FeedbackLevel(int level) : level_(level) {
  if (level < kMin || level > kMax) {
    throw InputError("feedback level out of range: " + std::to_string(level));
  }
}

void validate_bin_edges(const BinEdges& edges) {
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!(edges[i] > 0.0 && edges[i] < 1.0)) throw ConfigError("bin edges must lie in (0, 1)");
    if (i > 0 && !(edges[i] > edges[i - 1])) throw ConfigError("bin edges must be strictly ascending");
  }
}

FeedbackLevel quantize_level(const IbsMetric& metric, const BinEdges& edges) {
  validate_bin_edges(edges);
  if (!metric.valid || !std::isfinite(metric.value)) return FeedbackLevel(FeedbackLevel::kNeutral);
  const double v = std::clamp(metric.value, 0.0, 1.0);
  int level = 1;
  for (double edge : edges) {
    if (v >= edge) ++level;
  }
  return FeedbackLevel(level);
}

RingSpec map_visual(FeedbackLevel level, const VisualOptions& options) {
  RingSpec spec;
  spec.base_radius = options.base_radius;
  spec.spike_count = options.spike_count;
  spec.wave_amplitude = options.max_amplitude * (FeedbackLevel::kMax - level.value()) / 4.0;
  return spec;
}

ChordSpec map_audio(FeedbackLevel level, AudioPreset preset) {
  ChordSpec chord;
  chord.root_hz = kMajorThirdHz * 4.0 / 5.0;
  chord.fifth_hz = chord.root_hz * 1.5;
  const int steps_down = FeedbackLevel::kMax - level.value();
  if (preset == AudioPreset::linear) {
    const double step = (kMajorThirdHz - kLowestMiddleHz) / 4.0;
    chord.middle_hz = kMajorThirdHz - step * steps_down;
  } else {
    chord.middle_hz = kMajorThirdHz * std::pow(0.95, steps_down);
  }
  return chord;
}

void HapticTable::validate() const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto [bpm, intensity] = rows[i];
    if (bpm <= 0) throw ConfigError("haptic bpm must be positive");
    if (intensity < 0 || intensity > 100) throw ConfigError("haptic intensity must be in [0, 100]");
    if (i > 0 && !(bpm < rows[i - 1][0] && intensity < rows[i - 1][1])) {
      throw ConfigError("haptic bpm and intensity must strictly decrease with level");
    }
  }
  if (pulse_ms <= 0) throw ConfigError("haptic pulse_ms must be positive");
}

HapticPattern map_haptic(FeedbackLevel level, const HapticTable& table) {
  const auto& row = table.rows[static_cast<std::size_t>(level.value() - 1)];
  return {row[0], row[1], table.pulse_ms};
}

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_padded_string(std::vector<std::uint8_t>& out, std::string_view s) {
  out.insert(out.end(), s.begin(), s.end());
  // At least one NUL, then up to the next 4-byte boundary.
  do {
    out.push_back(0);
  } while (out.size() % 4 != 0);
}

std::uint32_t get_be32(std::span<const std::uint8_t> p, std::size_t at) {
  return (std::uint32_t{p[at]} << 24) | (std::uint32_t{p[at + 1]} << 16) |
         (std::uint32_t{p[at + 2]} << 8) | std::uint32_t{p[at + 3]};
}

// Reads a NUL-terminated, 4-byte padded string starting at `at`; returns the
// offset just past the padding.
std::size_t read_padded_string(std::span<const std::uint8_t> p, std::size_t at, std::string& out) {
  std::size_t end = at;
  while (end < p.size() && p[end] != 0) ++end;
  if (end >= p.size()) throw FramingError("unterminated OSC string", at);
  out.assign(reinterpret_cast<const char*>(p.data() + at), end - at);
  std::size_t next = (end + 4) & ~std::size_t{3};
  if (next > p.size()) throw FramingError("OSC string padding runs past packet", end);
  for (std::size_t i = end; i < next; ++i) {
    if (p[i] != 0) throw FramingError("non-zero OSC padding byte", i);
  }
  return next;
}

} // namespace

std::vector<std::uint8_t> encode_osc(float metric_value, std::int32_t level) {
  std::vector<std::uint8_t> out;
  out.reserve(32);
  put_padded_string(out, kOscAddress);
  put_padded_string(out, ",fi");
  put_be32(out, std::bit_cast<std::uint32_t>(metric_value));
  put_be32(out, static_cast<std::uint32_t>(level));
  return out;
}

OscMessage decode_osc(std::span<const std::uint8_t> packet) {
  if (packet.size() % 4 != 0) throw FramingError("OSC packet length not a multiple of 4", packet.size());
  if (packet.empty() || packet[0] != '/') throw FramingError("OSC address must start with '/'", 0);
  OscMessage msg;
  std::size_t at = read_padded_string(packet, 0, msg.address);
  std::string tags;
  const std::size_t tag_at = at;
  at = read_padded_string(packet, at, tags);
  if (tags != ",fi") throw FramingError("unsupported OSC type tags '" + tags + "'", tag_at);
  if (packet.size() != at + 8) throw FramingError("OSC argument block has wrong size", at);
  msg.metric = std::bit_cast<float>(get_be32(packet, at));
  msg.level = static_cast<std::int32_t>(get_be32(packet, at + 4));
  return msg;
}

} // namespace nr
