#pragma once

#include "neuresonance/ibs.hpp"
#include "neuresonance/motion.hpp"
#include "neuresonance/recording.hpp"
#include "neuresonance/signal.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nr {

struct AnalysisOptions {
  double window_s{3.0};
  double hop_s{0.5};
  std::size_t trim{3};
  double threshold_k{3.0};
  FilterSpec filter{1.0, 48.0, 4, FilterMode::zero_phase};
  std::size_t top_k{kDefaultTopK};
  bool per_band{false};
  MotionThresholds motion{};
  std::size_t stft_window{256};
  std::size_t stft_hop{128};
  // Below this many scored epochs the spectral rule is not applied.
  std::size_t min_scored{5};

  void validate() const;
};

// Start offsets (microseconds) of the epochs that fit inside [start, stop).
std::vector<std::uint64_t> epoch_starts(std::uint64_t start_us, std::uint64_t stop_us, double window_s,
                                        double hop_s, double sample_rate);

template <class T>
struct Trimmed {
  std::vector<T> kept;
  std::size_t removed{0};
  bool too_short{false};
};

// Drops the first and last n entries. Too short when 2n or fewer were given.
template <class T>
Trimmed<T> trim_edges(const std::vector<T>& epochs, std::size_t n = 3) {
  Trimmed<T> out;
  out.too_short = epochs.size() <= 2 * n;
  if (out.too_short) {
    out.removed = epochs.size();
    return out;
  }
  out.kept.assign(epochs.begin() + static_cast<std::ptrdiff_t>(n), epochs.end() - static_cast<std::ptrdiff_t>(n));
  out.removed = 2 * n;
  return out;
}

struct StftFrame {
  double centroid_hz{0.0};
  double energy{0.0};
};

// Hann-windowed STFT of one channel; frames that do not fit are dropped.
std::vector<StftFrame> stft_frames(std::span<const double> x, double sample_rate, std::size_t window = 256,
                                   std::size_t hop = 128);

// Mean over frames of centroid * energy, summed over every channel given.
double spectral_energy_score(std::span<const ChannelMatrix* const> channels, double sample_rate,
                             std::size_t window = 256, std::size_t hop = 128);
double spectral_energy_score(const ChannelMatrix& data, double sample_rate, std::size_t window = 256,
                             std::size_t hop = 128);

struct EpochValidity {
  std::size_t index{0};
  double score{0.0};
  bool valid{true};
};

struct RejectionResult {
  std::vector<EpochValidity> epochs;
  double median{0.0};
  double mad{0.0};
  double threshold{0.0};
  bool low_confidence{false};
};

// Invalid iff score > median + k * MAD. MAD == 0 keeps everything.
RejectionResult reject_noisy_epochs(std::span<const double> scores, double k = 3.0, std::size_t min_epochs = 5);

// Valid when at least half of the analyzable epochs survived.
bool trial_is_valid(std::size_t valid, std::size_t analyzable);

struct EpochRecord {
  std::size_t index{0};
  std::uint64_t start_us{0};
  double score{0.0};
  bool complete{true};
  bool spectral_valid{true};
  bool motion_valid{true};
  bool metric_valid{true};
  bool valid{true};
  std::optional<double> value;
  std::map<std::string, double> band_values;
};

struct TrialReport {
  int trial_id{0};
  Condition condition{Condition::no_feedback};
  std::uint64_t start_us{0};
  std::optional<std::uint64_t> stop_us;
  bool skipped{false};
  std::size_t total{0};
  std::size_t trimmed{0};
  std::size_t valid{0};
  std::size_t invalid{0};
  bool too_short{false};
  bool trial_valid{false};
  std::optional<double> pooled;
  std::map<std::string, double> pooled_per_band;
  double median{0.0};
  double mad{0.0};
  double threshold{0.0};
  std::vector<std::string> notes;
  std::vector<EpochRecord> epochs; // analyzable (post-trim) epochs
};

struct ConditionSummary {
  Condition condition{Condition::no_feedback};
  std::size_t valid_trials{0};
  double mean_pooled{0.0};
  std::map<std::string, double> mean_per_band;
};

struct AnalysisReport {
  std::string session_id;
  AnalysisOptions options;
  std::vector<TrialReport> trials;
  std::vector<ConditionSummary> conditions;
  std::vector<std::string> notes;
  bool all_rejected{false};
};

AnalysisReport analyze(const std::filesystem::path& recording, const AnalysisOptions& options = {});
AnalysisReport analyze_frames(const Manifest& manifest, const std::vector<SampleFrame>& frames,
                              const AnalysisOptions& options = {});

nlohmann::json report_to_json(const AnalysisReport& report);
std::string report_to_csv(const AnalysisReport& report);
// Writes report.json and report.csv into dir.
void write_report(const std::filesystem::path& dir, const AnalysisReport& report);

} // namespace nr
