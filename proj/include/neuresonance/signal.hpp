#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace nr {

inline constexpr std::size_t kEegChannels = 14;
inline constexpr std::size_t kMotionChannels = 7;
inline constexpr double kDefaultSampleRate = 256.0;

// Samples excluded at each end of a window before any phase statistic.
inline constexpr std::size_t kPhaseEdgeSamples = 32;

enum class Participant : std::uint8_t { A = 0, B = 1 };

// Stream ids used on the wire and in recordings.
enum class StreamId : std::uint8_t { eeg_a = 0, eeg_b = 1, motion_a = 2, motion_b = 3 };

inline constexpr std::uint8_t to_u8(StreamId id) { return static_cast<std::uint8_t>(id); }

// One timestamped sample across all channels of one stream. Also the payload
// of a wire frame.
struct SampleFrame {
  std::uint8_t stream_id{0};
  std::uint64_t timestamp_us{0};
  std::vector<float> channels;

  bool operator==(const SampleFrame&) const = default;
};

// Channel-major matrix: channel(c) is a contiguous run of `samples` values.
class ChannelMatrix {
public:
  ChannelMatrix() = default;
  ChannelMatrix(std::size_t channels, std::size_t samples)
      : channels_(channels), samples_(samples), data_(channels * samples, 0.0) {}

  std::size_t channels() const noexcept { return channels_; }
  std::size_t samples() const noexcept { return samples_; }

  std::span<double> channel(std::size_t c) { return {data_.data() + c * samples_, samples_}; }
  std::span<const double> channel(std::size_t c) const {
    return {data_.data() + c * samples_, samples_};
  }

  double& at(std::size_t c, std::size_t s) { return data_[c * samples_ + s]; }
  double at(std::size_t c, std::size_t s) const { return data_[c * samples_ + s]; }

  bool operator==(const ChannelMatrix&) const = default;

private:
  std::size_t channels_{0};
  std::size_t samples_{0};
  std::vector<double> data_;
};

// Fixed-length per-participant slice of an EEG stream.
struct EpochWindow {
  Participant participant{Participant::A};
  std::uint64_t start_timestamp_us{0};
  double sample_rate{kDefaultSampleRate};
  ChannelMatrix data;
};

enum class FilterMode { causal, zero_phase };

enum class Band { theta, alpha, beta };

// Lower and upper edge of a named EEG band in Hz.
std::pair<double, double> band_edges(Band band);

struct FilterSpec {
  double low_cut_hz{1.0};
  double high_cut_hz{48.0};
  int order{4};
  FilterMode mode{FilterMode::causal};

  // Throws ConfigError unless 0 < low < high < fs/2 and order >= 1.
  void validate(double fs) const;

  // Same spec narrowed to one EEG band.
  FilterSpec for_band(Band band) const;
};

// Transposed direct form II second-order section, a0 normalized to 1.
struct Biquad {
  double b0{1.0}, b1{0.0}, b2{0.0};
  double a1{0.0}, a2{0.0};
};

// Butterworth band-pass as a cascade of `order` biquads (2 * order poles),
// unity gain at the geometric band center.
std::vector<Biquad> design_butterworth_bandpass(const FilterSpec& spec, double fs);

// Frequency response magnitude of a cascade at `freq_hz`.
double cascade_magnitude(std::span<const Biquad> sections, double freq_hz, double fs);

// Filters a whole series. Causal mode starts every section at its
// steady state for x[0]; zero-phase mode runs forward then backward.
std::vector<double> apply_bandpass(const FilterSpec& spec, std::span<const double> signal, double fs);

// Streaming causal filter (state carried across calls).
class StreamingBandpass {
public:
  StreamingBandpass(const FilterSpec& spec, double fs);

  double process(double x);
  void reset();

private:
  std::vector<Biquad> sections_;
  std::vector<std::pair<double, double>> state_;
  bool primed_{false};
};

// Analytic signal x + i*H{x} built in the frequency domain.
std::vector<std::complex<double>> analytic_signal(std::span<const double> signal);

// Instantaneous phase in (-pi, pi] per sample. Throws InputError for fewer
// than 64 samples and DegenerateError for an all-zero signal.
std::vector<double> instantaneous_phase(std::span<const double> signal);

// Maps any angle into (-pi, pi].
double wrap_phase(double radians);

struct StreamGap {
  std::uint64_t last_timestamp_us{0};   // last sample before the gap
  std::uint64_t resume_timestamp_us{0}; // first sample after it
};

struct WindowingResult {
  std::vector<EpochWindow> windows;
  std::vector<StreamGap> gaps;
};

struct WindowingOptions {
  double window_s{3.0};
  double hop_s{1.5};
  double sample_rate{kDefaultSampleRate};
  std::size_t channel_count{kEegChannels};
};

// True when the step between two timestamps skips at least one sample.
bool is_gap(std::uint64_t previous_us, std::uint64_t next_us, double sample_rate);

// Cuts windows out of one stream's frames. Windows restart at the first
// sample after every gap; no window ever spans a gap.
WindowingResult slide_windows(std::span<const SampleFrame> frames, Participant participant,
                              const WindowingOptions& options);

// floor((D - W) / H) + 1 for D >= W, else 0; all in samples.
std::size_t expected_window_count(std::size_t available, std::size_t window, std::size_t hop);

std::size_t seconds_to_samples(double seconds, double fs);

} // namespace nr
