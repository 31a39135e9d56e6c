#pragma once

#include "neuresonance/feedback.hpp"
#include "neuresonance/ibs.hpp"
#include "neuresonance/motion.hpp"
#include "neuresonance/recording.hpp"
#include "neuresonance/signal.hpp"
#include "neuresonance/synth.hpp"

#include <json.hpp>

#include <array>
#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace nr {

enum class Modality { none, visual, auditory, haptic };

std::string_view modality_name(Modality m);
std::optional<Modality> parse_modality(std::string_view name);
Modality modality_for(Condition condition);

struct EngineConfig {
  double window_s{3.0};
  double hop_s{1.5};
  int tick_ms{100};
  double sample_rate{kDefaultSampleRate};
  double motion_rate{100.0};

  FilterSpec filter{};
  std::optional<Band> band{};
  std::size_t top_k{kDefaultTopK};

  BinEdges bin_edges{kDefaultBinEdges};
  std::optional<Modality> modality{}; // overrides the condition's modality
  std::optional<Condition> start_condition{}; // opens a trial at startup
  AudioPreset audio_preset{AudioPreset::linear};
  HapticTable haptic_table{};
  VisualOptions visual{};

  MotionThresholds motion_thresholds{};
  std::size_t max_hold{kMaxHold};

  std::string osc_host{"127.0.0.1"};
  int osc_port{0}; // 0 disables OSC output
  std::string haptic_url{};
  int haptic_timeout_ms{250};
  int control_port{-1}; // -1 disables, 0 picks a free port

  double budget_ms{60.0};
  double queue_seconds{5.0};
  std::string record_dir{};

  // Throws ConfigError.
  void validate() const;

  IbsOptions ibs_options() const;
};

nlohmann::json engine_config_to_json(const EngineConfig& config);
// Unknown keys are rejected; missing keys keep defaults.
EngineConfig engine_config_from_json(const nlohmann::json& doc);
EngineConfig load_engine_config(const std::filesystem::path& path);

struct IbsUpdate {
  std::uint64_t sequence{0};
  IbsMetric metric{};
  FeedbackLevel level{FeedbackLevel::kNeutral};
  Modality modality{Modality::none};
  std::optional<RingSpec> ring;
  std::optional<ChordSpec> chord;
  std::optional<HapticPattern> haptic;
  std::string condition;
  std::optional<int> trial_id;
  double compute_latency_ms{0.0};

  // Equal in everything except measured latency.
  bool same_content(const IbsUpdate& other) const;
};

nlohmann::json update_to_json(const IbsUpdate& update);

struct LatencySummary {
  double p50{0.0};
  double p95{0.0};
  double max{0.0};
  std::size_t count{0};
};

inline constexpr std::array<const char*, 9> kLatencyStages{
    "filter", "phase", "ccorr", "pool", "ibs", "motion", "gate", "dispatch", "total"};

// Per-stage latency samples. Thread-safe.
class LatencyTracker {
public:
  void record(const std::string& stage, double ms);
  // Empty when no update has been recorded yet.
  std::optional<std::map<std::string, LatencySummary>> summary() const;
  void reset();

private:
  mutable std::mutex mutex_;
  std::map<std::string, std::vector<double>> samples_;
};

nlohmann::json latency_to_json(const std::optional<std::map<std::string, LatencySummary>>& stats);

struct SessionState {
  Condition condition{Condition::no_feedback};
  std::optional<int> trial_id; // set while a trial is open
  bool running{false};
  std::optional<IbsUpdate> last_update;
  std::size_t consecutive_holds{0};
  std::optional<Modality> modality_override;
};

struct CommandResult {
  bool ok{true};
  std::string error;
  std::string warning;
};

// Single-threaded core: buffers the four streams, cuts aligned windows on
// the hop grid, computes, gates and quantizes. No I/O, fully deterministic.
class Pipeline {
public:
  explicit Pipeline(EngineConfig config);

  // Frames with a wrong channel count are counted and dropped.
  void ingest(const SampleFrame& frame);

  // Every update whose window is complete.
  std::vector<IbsUpdate> process();
  // End of input: windows still waiting on motion coverage are evaluated
  // with what arrived, and windows past the last EEG sample are never cut.
  void close_input();

  CommandResult set_condition(std::string_view label);
  CommandResult set_modality(std::string_view name);
  CommandResult mark_trial(std::string_view action); // "start" | "stop"

  const SessionState& state() const noexcept { return state_; }
  const std::vector<TrialMarker>& trials() const noexcept { return trials_; }
  std::uint64_t stream_time_us() const noexcept { return stream_time_us_; }
  std::uint64_t rejected_frames() const noexcept { return rejected_frames_; }
  Modality active_modality() const;

  LatencyTracker& latency() noexcept { return *latency_; }
  const EngineConfig& config() const noexcept { return config_; }

private:
  struct EegBuffer {
    std::deque<SampleFrame> frames;
  };
  struct MotionBuffer {
    std::deque<MotionSample> samples;
    bool active{false};
  };

  bool window_ready(std::uint64_t start) const;
  IbsUpdate evaluate_window(std::uint64_t start);
  std::optional<EpochWindow> extract(const EegBuffer& buffer, Participant who, std::uint64_t start) const;
  std::optional<MotionVerdict> verdict(const MotionBuffer& buffer, std::uint64_t start,
                                       std::uint64_t end) const;
  IbsUpdate finish(const IbsMetric& gated, double compute_ms);
  void prune(std::uint64_t next_start);

  EngineConfig config_;
  IbsOptions ibs_options_;
  std::size_t window_samples_;
  double period_us_;
  double motion_period_us_;
  std::uint64_t window_us_;

  std::array<EegBuffer, 2> eeg_;
  std::array<MotionBuffer, 2> motion_;
  std::optional<std::uint64_t> grid_origin_;
  std::uint64_t grid_index_{0};

  MotionGate gate_;
  SessionState state_;
  std::vector<TrialMarker> trials_;
  std::uint64_t stream_time_us_{0};
  std::uint64_t sequence_{0};
  std::uint64_t rejected_frames_{0};
  bool input_closed_{false};
  std::unique_ptr<LatencyTracker> latency_;
};

struct RunSummary {
  std::uint64_t frames{0};
  std::uint64_t updates{0};
  std::uint64_t dropped_frames{0};
  bool stopped{false}; // ended by stop() rather than end of input
};

class ControlServer;

// Threaded runner around Pipeline: ingestion, tick loop, OSC/haptic
// dispatch, recording and the control channel.
class Engine {
public:
  explicit Engine(EngineConfig config);
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // Blocking runs. A finite speed paces frames by timestamp (real-time
  // multiplier); infinity processes as fast as possible on stream time.
  RunSummary run_replay(const std::filesystem::path& recording, double speed);
  RunSummary run_synth(const SynthConfig& synth, double speed);
  // Accepts wire frames over TCP on `port` until stop().
  RunSummary run_live(int port);

  // Port the live listener bound to (after run_live started), else 0.
  int live_port() const noexcept { return live_port_.load(); }

  void stop();
  bool running() const noexcept { return running_.load(); }

  // JSON command: {"type": "set_condition"|"mark_trial"|"set_modality"|
  // "set_synth_coupling", ...}. Applied at the next tick while running.
  nlohmann::json command(const nlohmann::json& message);

  std::vector<IbsUpdate> updates() const;
  std::optional<std::map<std::string, LatencySummary>> latency_stats() const;
  void reset_latency();
  nlohmann::json state_json() const;

  // Called on the processing thread for every published update.
  void on_update(std::function<void(const IbsUpdate&)> callback);

  int control_port() const;
  std::uint64_t haptic_failures() const;
  std::uint64_t osc_sent() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::atomic<bool> running_{false};
  std::atomic<int> live_port_{0};
};

} // namespace nr
