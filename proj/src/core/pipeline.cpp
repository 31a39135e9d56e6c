#include "neuresonance/engine.hpp"
#include "neuresonance/error.hpp"
#include "neuresonance/log.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace nr {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

} // namespace

bool IbsUpdate::same_content(const IbsUpdate& o) const {
  return sequence == o.sequence && metric == o.metric && level == o.level && modality == o.modality &&
         ring == o.ring && chord == o.chord && haptic == o.haptic && condition == o.condition &&
         trial_id == o.trial_id;
}

json update_to_json(const IbsUpdate& u) {
  json doc;
  doc["type"] = "update";
  doc["sequence"] = u.sequence;
  doc["metric"] = {{"value", u.metric.value},
                   {"epoch_start_us", u.metric.epoch_start_us},
                   {"valid", u.metric.valid},
                   {"held", u.metric.held}};
  doc["level"] = u.level.value();
  doc["modality"] = std::string(modality_name(u.modality));
  doc["ring"] = u.ring ? json{{"base_radius", u.ring->base_radius},
                              {"wave_amplitude", u.ring->wave_amplitude},
                              {"spike_count", u.ring->spike_count},
                              {"color", u.ring->color}}
                       : json(nullptr);
  doc["chord"] = u.chord ? json{{"root_hz", u.chord->root_hz},
                                {"middle_hz", u.chord->middle_hz},
                                {"fifth_hz", u.chord->fifth_hz}}
                         : json(nullptr);
  doc["haptic"] = u.haptic ? json{{"bpm", u.haptic->bpm},
                                  {"intensity", u.haptic->intensity},
                                  {"pulse_ms", u.haptic->pulse_ms}}
                           : json(nullptr);
  doc["condition"] = u.condition;
  doc["trial_id"] = u.trial_id ? json(*u.trial_id) : json(nullptr);
  doc["compute_latency_ms"] = u.compute_latency_ms;
  return doc;
}

void LatencyTracker::record(const std::string& stage, double ms) {
  std::lock_guard lock(mutex_);
  samples_[stage].push_back(ms);
}

std::optional<std::map<std::string, LatencySummary>> LatencyTracker::summary() const {
  std::lock_guard lock(mutex_);
  if (samples_.empty()) return std::nullopt;
  std::map<std::string, LatencySummary> out;
  for (const auto& [stage, values] : samples_) {
    if (values.empty()) continue;
    auto sorted = values;
    std::sort(sorted.begin(), sorted.end());
    auto rank = [&](double p) {
      const auto idx = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
      return sorted[std::clamp<std::size_t>(idx, 1, sorted.size()) - 1];
    };
    out[stage] = {rank(0.50), rank(0.95), sorted.back(), sorted.size()};
  }
  return out;
}

void LatencyTracker::reset() {
  std::lock_guard lock(mutex_);
  samples_.clear();
}

json latency_to_json(const std::optional<std::map<std::string, LatencySummary>>& stats) {
  if (!stats) return json{{"empty", true}, {"stages", json::object()}};
  json stages = json::object();
  for (const auto& [name, s] : *stats) {
    stages[name] = {{"p50_ms", s.p50}, {"p95_ms", s.p95}, {"max_ms", s.max}, {"count", s.count}};
  }
  return json{{"empty", false}, {"stages", stages}};
}

Pipeline::Pipeline(EngineConfig config)
    : config_(std::move(config)), gate_(config_.max_hold), latency_(std::make_unique<LatencyTracker>()) {
  config_.validate();
  ibs_options_ = config_.ibs_options();
  window_samples_ = seconds_to_samples(config_.window_s, config_.sample_rate);
  period_us_ = 1e6 / config_.sample_rate;
  motion_period_us_ = 1e6 / config_.motion_rate;
  window_us_ = static_cast<std::uint64_t>(std::llround(static_cast<double>(window_samples_) * period_us_));
  state_.modality_override = config_.modality;
  if (config_.start_condition) {
    state_.condition = *config_.start_condition;
    trials_.push_back({1, state_.condition, 0, std::nullopt});
    state_.trial_id = 1;
  }
}

void Pipeline::ingest(const SampleFrame& frame) {
  // Timestamps past 2^53 us (about 285 years) are corrupt; they would also
  // stop round-tripping through the double-valued grid arithmetic.
  constexpr std::uint64_t max_timestamp_us = std::uint64_t{1} << 53;
  if (frame.timestamp_us > max_timestamp_us ||
      !std::all_of(frame.channels.begin(), frame.channels.end(), [](float v) { return std::isfinite(v); })) {
    ++rejected_frames_;
    return;
  }
  const auto id = static_cast<StreamId>(frame.stream_id);
  switch (id) {
    case StreamId::eeg_a:
    case StreamId::eeg_b: {
      auto& buf = eeg_[frame.stream_id];
      if (frame.channels.size() != kEegChannels ||
          (!buf.frames.empty() && frame.timestamp_us <= buf.frames.back().timestamp_us)) {
        ++rejected_frames_;
        return;
      }
      buf.frames.push_back(frame);
      stream_time_us_ = std::max(stream_time_us_, frame.timestamp_us);
      return;
    }
    case StreamId::motion_a:
    case StreamId::motion_b: {
      const std::size_t who = frame.stream_id - to_u8(StreamId::motion_a);
      auto& buf = motion_[who];
      if (frame.channels.size() != kMotionChannels ||
          (!buf.samples.empty() && frame.timestamp_us <= buf.samples.back().timestamp_us)) {
        ++rejected_frames_;
        return;
      }
      buf.samples.push_back(motion_from_frame(frame, who == 0 ? Participant::A : Participant::B));
      buf.active = true;
      return;
    }
  }
  ++rejected_frames_;
}

bool Pipeline::window_ready(std::uint64_t start) const {
  // Reached once the window's last sample is buffered.
  const double hi = static_cast<double>(start) + (static_cast<double>(window_samples_) - 1.5) * period_us_;
  const double end = static_cast<double>(start + window_us_);
  auto reached = [](const EegBuffer& b, double t) {
    return !b.frames.empty() && static_cast<double>(b.frames.back().timestamp_us) >= t;
  };
  const bool a_done = reached(eeg_[0], hi);
  const bool b_done = reached(eeg_[1], hi);
  if (!(a_done && b_done)) {
    if (input_closed_) return false;
    // A stream that lags the other by more than the queue horizon is stalled;
    // give up on this window instead of buffering without bound.
    const double stall = hi + config_.queue_seconds * 1e6;
    return reached(eeg_[0], stall) || reached(eeg_[1], stall);
  }
  const double eeg_front = std::min(eeg_[0].frames.back().timestamp_us, eeg_[1].frames.back().timestamp_us);
  for (const auto& m : motion_) {
    if (!m.active) continue;
    const bool covered = !m.samples.empty() &&
                         static_cast<double>(m.samples.back().timestamp_us) >= end + motion_period_us_;
    if (!covered && !input_closed_ && eeg_front < end + 1e6) return false;
  }
  return true;
}

std::optional<EpochWindow> Pipeline::extract(const EegBuffer& buffer, Participant who,
                                             std::uint64_t start) const {
  const double lo = static_cast<double>(start) - 0.5 * period_us_;
  const double hi = static_cast<double>(start) + (static_cast<double>(window_samples_) - 0.5) * period_us_;
  auto first = std::find_if(buffer.frames.begin(), buffer.frames.end(),
                            [&](const SampleFrame& f) { return static_cast<double>(f.timestamp_us) >= lo; });
  std::size_t count = 0;
  for (auto it = first; it != buffer.frames.end() && static_cast<double>(it->timestamp_us) < hi; ++it) {
    if (it != first && is_gap(std::prev(it)->timestamp_us, it->timestamp_us, config_.sample_rate)) {
      return std::nullopt;
    }
    ++count;
  }
  if (count != window_samples_) return std::nullopt;

  EpochWindow w;
  w.participant = who;
  w.start_timestamp_us = first->timestamp_us;
  w.sample_rate = config_.sample_rate;
  w.data = ChannelMatrix(kEegChannels, window_samples_);
  auto it = first;
  for (std::size_t s = 0; s < window_samples_; ++s, ++it) {
    for (std::size_t c = 0; c < kEegChannels; ++c) w.data.at(c, s) = it->channels[c];
  }
  return w;
}

std::optional<MotionVerdict> Pipeline::verdict(const MotionBuffer& buffer, std::uint64_t start,
                                               std::uint64_t end) const {
  if (!buffer.active) return std::nullopt;
  const std::vector<MotionSample> samples(buffer.samples.begin(), buffer.samples.end());
  return classify_span(samples, start, end, config_.motion_thresholds);
}

IbsUpdate Pipeline::evaluate_window(std::uint64_t start) {
  const auto t_total = Clock::now();
  auto t0 = Clock::now();
  const auto wa = extract(eeg_[0], Participant::A, start);
  const auto wb = extract(eeg_[1], Participant::B, start);

  IbsMetric metric;
  IbsStageTimes times;
  if (wa && wb) {
    try {
      metric = compute_ibs(*wa, *wb, ibs_options_, &times);
    } catch (const Error& e) {
      log_warn(std::string("window skipped: ") + e.what());
      metric = IbsMetric{};
    }
  }
  metric.epoch_start_us = start;
  const double ibs_ms = ms_since(t0);

  t0 = Clock::now();
  const auto va = verdict(motion_[0], start, start + window_us_);
  const auto vb = verdict(motion_[1], start, start + window_us_);
  const double motion_ms = ms_since(t0);

  t0 = Clock::now();
  const IbsMetric gated = (wa && wb) ? gate_.apply(metric, va, vb) : metric;
  const double gate_ms = ms_since(t0);
  const double total_ms = ms_since(t_total);

  auto& lt = *latency_;
  lt.record("filter", times.filter_ms);
  lt.record("phase", times.phase_ms);
  lt.record("ccorr", times.ccorr_ms);
  lt.record("pool", times.pool_ms);
  lt.record("ibs", ibs_ms);
  lt.record("motion", motion_ms);
  lt.record("gate", gate_ms);
  lt.record("total", total_ms);
  return finish(gated, total_ms);
}

Modality Pipeline::active_modality() const {
  if (!state_.trial_id) return Modality::none;
  return state_.modality_override ? *state_.modality_override : modality_for(state_.condition);
}

IbsUpdate Pipeline::finish(const IbsMetric& gated, double compute_ms) {
  IbsUpdate u;
  u.sequence = sequence_++;
  u.metric = gated;
  u.modality = active_modality();
  u.level = state_.trial_id ? quantize_level(gated, config_.bin_edges) : FeedbackLevel(FeedbackLevel::kNeutral);
  switch (u.modality) {
    case Modality::visual: u.ring = map_visual(u.level, config_.visual); break;
    case Modality::auditory: u.chord = map_audio(u.level, config_.audio_preset); break;
    case Modality::haptic: u.haptic = map_haptic(u.level, config_.haptic_table); break;
    case Modality::none: break;
  }
  u.condition = std::string(condition_label(state_.condition));
  u.trial_id = state_.trial_id;
  u.compute_latency_ms = compute_ms;
  state_.last_update = u;
  state_.consecutive_holds = gate_.consecutive_holds();
  return u;
}

void Pipeline::prune(std::uint64_t next_start) {
  const double keep_eeg = static_cast<double>(next_start) - period_us_;
  for (auto& b : eeg_) {
    while (!b.frames.empty() && static_cast<double>(b.frames.front().timestamp_us) < keep_eeg) {
      b.frames.pop_front();
    }
  }
  const double keep_motion = static_cast<double>(next_start) - 2.0 * motion_period_us_;
  for (auto& m : motion_) {
    while (!m.samples.empty() && static_cast<double>(m.samples.front().timestamp_us) < keep_motion) {
      m.samples.pop_front();
    }
  }
}

void Pipeline::close_input() { input_closed_ = true; }

std::vector<IbsUpdate> Pipeline::process() {
  std::vector<IbsUpdate> out;
  for (;;) {
    if (!grid_origin_) {
      if (eeg_[0].frames.empty() || eeg_[1].frames.empty()) break;
      grid_origin_ = std::max(eeg_[0].frames.front().timestamp_us, eeg_[1].frames.front().timestamp_us);
    }
    const auto start = *grid_origin_ + static_cast<std::uint64_t>(std::llround(
                                           static_cast<double>(grid_index_) * config_.hop_s * 1e6));
    prune(start);
    // Neither stream has anything inside this window: jump the grid to the
    // first window that can hold data instead of emitting empty windows one
    // by one (a far-future timestamp would otherwise spin here).
    std::optional<std::uint64_t> earliest;
    for (const auto& b : eeg_) {
      if (!b.frames.empty()) earliest = std::min(earliest.value_or(UINT64_MAX), b.frames.front().timestamp_us);
    }
    if (earliest && *earliest >= start + window_us_) {
      const double hop_us = config_.hop_s * 1e6;
      const double behind = static_cast<double>(*earliest - *grid_origin_) - static_cast<double>(window_us_);
      grid_index_ = std::max(grid_index_ + 1, static_cast<std::uint64_t>(std::floor(behind / hop_us)) + 1);
      continue;
    }
    if (!window_ready(start)) break;
    out.push_back(evaluate_window(start));
    ++grid_index_;
    prune(*grid_origin_ + static_cast<std::uint64_t>(
                              std::llround(static_cast<double>(grid_index_) * config_.hop_s * 1e6)));
  }
  return out;
}

CommandResult Pipeline::set_condition(std::string_view label) {
  const auto cond = parse_condition(label);
  if (!cond) return {false, "unknown condition label '" + std::string(label) + "'", ""};
  if (state_.trial_id) return {false, "conditions change only between trials", ""};
  state_.condition = *cond;
  state_.modality_override.reset();
  return {};
}

CommandResult Pipeline::set_modality(std::string_view name) {
  const auto m = parse_modality(name);
  if (!m) return {false, "unknown modality '" + std::string(name) + "'", ""};
  state_.modality_override = *m;
  return {};
}

CommandResult Pipeline::mark_trial(std::string_view action) {
  if (action == "start") {
    if (state_.trial_id) return {true, "", "trial already open; start ignored"};
    const int id = static_cast<int>(trials_.size()) + 1;
    trials_.push_back({id, state_.condition, stream_time_us_, std::nullopt});
    state_.trial_id = id;
    return {};
  }
  if (action == "stop") {
    if (!state_.trial_id) return {true, "", "no open trial; stop ignored"};
    trials_.back().stop_us = stream_time_us_;
    state_.trial_id.reset();
    return {};
  }
  return {false, "mark_trial action must be start or stop", ""};
}

} // namespace nr
