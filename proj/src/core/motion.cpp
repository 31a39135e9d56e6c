#include "neuresonance/motion.hpp"

#include "neuresonance/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nr {

MotionSample motion_from_frame(const SampleFrame& frame, Participant participant) {
  if (frame.channels.size() != kMotionChannels) {
    throw InputError("motion frame needs 7 channels, got " + std::to_string(frame.channels.size()));
  }
  MotionSample s;
  s.participant = participant;
  s.timestamp_us = frame.timestamp_us;
  for (std::size_t i = 0; i < 3; ++i) s.position_mm[i] = frame.channels[i];
  for (std::size_t i = 0; i < 4; ++i) s.orientation[i] = frame.channels[3 + i];
  return s;
}

SampleFrame motion_to_frame(const MotionSample& sample, std::uint8_t stream_id) {
  SampleFrame f;
  f.stream_id = stream_id;
  f.timestamp_us = sample.timestamp_us;
  f.channels.reserve(kMotionChannels);
  for (double v : sample.position_mm) f.channels.push_back(static_cast<float>(v));
  for (double v : sample.orientation) f.channels.push_back(static_cast<float>(v));
  return f;
}

double geodesic_angle(const std::array<double, 4>& q1, const std::array<double, 4>& q2) {
  // Relative rotation q1^-1 * q2; atan2 form stays accurate for tiny angles.
  const double w = q1[0] * q2[0] + q1[1] * q2[1] + q1[2] * q2[2] + q1[3] * q2[3];
  const double x = q1[0] * q2[1] - q1[1] * q2[0] - q1[2] * q2[3] + q1[3] * q2[2];
  const double y = q1[0] * q2[2] + q1[1] * q2[3] - q1[2] * q2[0] - q1[3] * q2[1];
  const double z = q1[0] * q2[3] - q1[1] * q2[2] + q1[2] * q2[1] - q1[3] * q2[0];
  const double v = std::sqrt(x * x + y * y + z * z);
  return 2.0 * std::atan2(v, std::abs(w));
}

std::vector<VelocitySample> estimate_velocities(std::span<const MotionSample> samples) {
  if (samples.size() < 3) throw InputError("velocity estimation needs at least 3 samples");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].timestamp_us <= samples[i - 1].timestamp_us) {
      throw InputError("motion timestamps not increasing at sample " + std::to_string(i));
    }
  }
  std::vector<VelocitySample> out;
  out.reserve(samples.size() - 2);
  for (std::size_t i = 1; i + 1 < samples.size(); ++i) {
    const auto& prev = samples[i - 1];
    const auto& next = samples[i + 1];
    const double dt = static_cast<double>(next.timestamp_us - prev.timestamp_us) * 1e-6;
    const double dx = next.position_mm[0] - prev.position_mm[0];
    const double dy = next.position_mm[1] - prev.position_mm[1];
    const double dz = next.position_mm[2] - prev.position_mm[2];
    out.push_back({samples[i].timestamp_us, std::sqrt(dx * dx + dy * dy + dz * dz) / dt,
                   geodesic_angle(prev.orientation, next.orientation) / dt});
  }
  return out;
}

MotionVerdict classify_segment(std::span<const VelocitySample> velocities,
                               const MotionThresholds& thresholds) {
  MotionVerdict v;
  if (velocities.empty()) {
    v.empty = true;
    return v;
  }
  v.segment_start_us = velocities.front().timestamp_us;
  v.segment_end_us = velocities.back().timestamp_us;
  for (const auto& s : velocities) {
    v.linear_peak_mm_s = std::max(v.linear_peak_mm_s, s.linear_mm_s);
    v.angular_peak_rad_s = std::max(v.angular_peak_rad_s, s.angular_rad_s);
  }
  v.rejected = v.linear_peak_mm_s > thresholds.linear_mm_s ||
               v.angular_peak_rad_s > thresholds.angular_rad_s;
  return v;
}

MotionVerdict classify_span(std::span<const MotionSample> samples, std::uint64_t start_us,
                            std::uint64_t end_us, const MotionThresholds& thresholds) {
  // One sample either side so the central difference reaches the span edges.
  auto first = std::lower_bound(samples.begin(), samples.end(), start_us,
                                [](const MotionSample& s, std::uint64_t t) { return s.timestamp_us < t; });
  auto last = std::lower_bound(first, samples.end(), end_us,
                               [](const MotionSample& s, std::uint64_t t) { return s.timestamp_us < t; });
  if (first != samples.begin()) --first;
  if (last != samples.end()) ++last;

  const std::span<const MotionSample> around(first, last);
  MotionVerdict verdict;
  if (around.size() < 3) {
    verdict = classify_segment({}, thresholds);
  } else {
    std::vector<VelocitySample> inside;
    for (const auto& v : estimate_velocities(around)) {
      if (v.timestamp_us >= start_us && v.timestamp_us < end_us) inside.push_back(v);
    }
    verdict = classify_segment(inside, thresholds);
  }
  verdict.segment_start_us = start_us;
  verdict.segment_end_us = end_us;
  return verdict;
}

IbsMetric gate(const IbsMetric& metric, const std::optional<MotionVerdict>& verdict_a,
               const std::optional<MotionVerdict>& verdict_b,
               const std::optional<IbsMetric>& last_valid) {
  const bool rejected = (verdict_a && verdict_a->rejected) || (verdict_b && verdict_b->rejected);
  if (!rejected) return metric;
  IbsMetric out;
  out.epoch_start_us = metric.epoch_start_us;
  if (last_valid && last_valid->valid && std::isfinite(last_valid->value)) {
    out.value = last_valid->value;
    out.valid = true;
    out.held = true;
  }
  return out;
}

IbsMetric MotionGate::apply(const IbsMetric& metric, const std::optional<MotionVerdict>& verdict_a,
                            const std::optional<MotionVerdict>& verdict_b) {
  IbsMetric out = gate(metric, verdict_a, verdict_b, last_valid_);
  if (!std::isfinite(out.value)) {
    out.value = 0.0;
    out.valid = false;
  }
  if (out.held) {
    if (++holds_ > max_hold_) {
      out.value = 0.0;
      out.valid = false;
      out.held = false;
    }
    return out;
  }
  const bool rejected = (verdict_a && verdict_a->rejected) || (verdict_b && verdict_b->rejected);
  if (rejected) {
    ++holds_;
    return out;
  }
  holds_ = 0;
  if (out.valid) last_valid_ = out;
  return out;
}

void MotionGate::reset() {
  holds_ = 0;
  last_valid_.reset();
}

} // namespace nr
