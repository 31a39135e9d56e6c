#pragma once

#include "neuresonance/signal.hpp"

#include <json.hpp>

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nr {

enum class Condition { non_sync, no_feedback, visual, auditory, haptic };

std::string_view condition_label(Condition condition);
std::optional<Condition> parse_condition(std::string_view label);

struct TrialMarker {
  int trial_id{0};
  Condition condition{Condition::no_feedback};
  std::uint64_t start_us{0};
  std::optional<std::uint64_t> stop_us;
};

struct StreamInfo {
  std::uint8_t id{0};
  std::string name;
  std::size_t channels{0};
  double sample_rate{0.0};
};

struct Manifest {
  std::string session_id;
  std::vector<StreamInfo> streams;
  nlohmann::json config = nlohmann::json::object(); // snapshot of the producing config
  std::vector<TrialMarker> trials;
};

nlohmann::json manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const nlohmann::json& doc);

// Default four-stream layout: EEG A/B at `eeg_rate`, motion A/B at `motion_rate`.
std::vector<StreamInfo> default_streams(double eeg_rate = kDefaultSampleRate, double motion_rate = 100.0);

inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kFrameLogFile = "frames.nrlog";
inline constexpr std::size_t kLogHeaderBytes = 16;
inline constexpr std::uint16_t kLogVersion = 1;

// Appends length-prefixed wire frames to `<dir>/frames.nrlog` and writes the
// manifest on close().
class RecordingWriter {
public:
  RecordingWriter(std::filesystem::path dir, Manifest manifest);
  ~RecordingWriter();

  RecordingWriter(const RecordingWriter&) = delete;
  RecordingWriter& operator=(const RecordingWriter&) = delete;

  void append(const SampleFrame& frame);
  Manifest& manifest() noexcept { return manifest_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }
  std::uint64_t frames_written() const noexcept { return frames_; }

  // Flushes the log and rewrites the manifest. Safe to call repeatedly.
  void write_manifest();
  void close();

private:
  std::filesystem::path dir_;
  Manifest manifest_;
  std::ofstream log_;
  std::uint64_t frames_{0};
  bool closed_{false};
};

// Sequential reader over a frame log. Corruption throws FramingError whose
// offset is the byte position in the file.
class FrameLogReader {
public:
  explicit FrameLogReader(const std::filesystem::path& log_path);

  std::optional<SampleFrame> next();
  std::uint16_t stream_count() const noexcept { return stream_count_; }
  std::uint64_t position() const noexcept { return position_; }

private:
  std::ifstream in_;
  std::uint16_t stream_count_{0};
  std::uint64_t position_{0};
};

Manifest read_manifest(const std::filesystem::path& dir);
std::vector<SampleFrame> read_frames(const std::filesystem::path& dir);

// Writes a complete recording in one go.
void write_recording(const std::filesystem::path& dir, const Manifest& manifest,
                     const std::vector<SampleFrame>& frames);

struct ReplayOptions {
  // Real-time multiplier; infinity (the default) delivers as fast as possible.
  double speed{std::numeric_limits<double>::infinity()};
  const std::atomic<bool>* stop{nullptr};
};

struct ReplayResult {
  std::uint64_t frames{0};
  bool stopped{false};
};

// Delivers frames in log order, paced by timestamp when speed is finite.
// The sink returns false to end the replay early.
ReplayResult replay(const std::filesystem::path& dir, const ReplayOptions& options,
                    const std::function<bool(const SampleFrame&)>& sink);

} // namespace nr
