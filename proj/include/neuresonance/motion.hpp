#pragma once

#include "neuresonance/ibs.hpp"
#include "neuresonance/signal.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace nr {

struct MotionSample {
  Participant participant{Participant::A};
  std::uint64_t timestamp_us{0};
  std::array<double, 3> position_mm{0.0, 0.0, 0.0};
  std::array<double, 4> orientation{1.0, 0.0, 0.0, 0.0}; // w, x, y, z
};

// Motion frames carry x, y, z (mm) then qw, qx, qy, qz.
MotionSample motion_from_frame(const SampleFrame& frame, Participant participant);
SampleFrame motion_to_frame(const MotionSample& sample, std::uint8_t stream_id);

// Rotation angle between two unit quaternions, radians in [0, pi].
double geodesic_angle(const std::array<double, 4>& q1, const std::array<double, 4>& q2);

struct VelocitySample {
  std::uint64_t timestamp_us{0};
  double linear_mm_s{0.0};
  double angular_rad_s{0.0};
};

// Central differences at every interior sample. Throws InputError for fewer
// than 3 samples or non-increasing timestamps.
std::vector<VelocitySample> estimate_velocities(std::span<const MotionSample> samples);

struct MotionThresholds {
  double linear_mm_s{200.0};
  double angular_rad_s{1.0};
};

struct MotionVerdict {
  std::uint64_t segment_start_us{0};
  std::uint64_t segment_end_us{0};
  double linear_peak_mm_s{0.0};
  double angular_peak_rad_s{0.0};
  bool rejected{false};
  bool empty{false}; // no velocities covered the segment; accepted by default
};

// Rejected iff some velocity strictly exceeds either threshold.
MotionVerdict classify_segment(std::span<const VelocitySample> velocities,
                               const MotionThresholds& thresholds = {});

// Verdict for the span [start_us, end_us) of a motion stream. Velocities are
// estimated over the samples around the span and classified inside it.
MotionVerdict classify_span(std::span<const MotionSample> samples, std::uint64_t start_us,
                            std::uint64_t end_us, const MotionThresholds& thresholds = {});

// Holds the previous valid value when either participant moved too fast.
// Without history the result is invalid.
IbsMetric gate(const IbsMetric& metric, const std::optional<MotionVerdict>& verdict_a,
               const std::optional<MotionVerdict>& verdict_b,
               const std::optional<IbsMetric>& last_valid);

inline constexpr std::size_t kMaxHold = 5;

// Stateful wrapper around gate(): tracks the last valid output and caps
// consecutive holds at max_hold, after which output turns invalid.
class MotionGate {
public:
  explicit MotionGate(std::size_t max_hold = kMaxHold) : max_hold_(max_hold) {}

  IbsMetric apply(const IbsMetric& metric, const std::optional<MotionVerdict>& verdict_a,
                  const std::optional<MotionVerdict>& verdict_b);

  const std::optional<IbsMetric>& last_valid() const noexcept { return last_valid_; }
  std::size_t consecutive_holds() const noexcept { return holds_; }
  void reset();

private:
  std::size_t max_hold_;
  std::size_t holds_{0};
  std::optional<IbsMetric> last_valid_;
};

} // namespace nr
