#include "neuresonance/signal.hpp"

#include "fft.hpp"
#include "neuresonance/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace nr {

using std::numbers::pi;

std::pair<double, double> band_edges(Band band) {
  switch (band) {
    case Band::theta: return {4.0, 8.0};
    case Band::alpha: return {8.0, 13.0};
    case Band::beta: return {13.0, 30.0};
  }
  return {8.0, 13.0};
}

void FilterSpec::validate(double fs) const {
  if (!(fs > 0.0)) throw ConfigError("sample rate must be positive");
  if (order < 1) throw ConfigError("filter order must be >= 1");
  if (!(low_cut_hz > 0.0 && low_cut_hz < high_cut_hz && high_cut_hz < fs / 2.0)) {
    throw ConfigError("band edges must satisfy 0 < low_cut < high_cut < fs/2 (got " +
                      std::to_string(low_cut_hz) + ", " + std::to_string(high_cut_hz) + " at fs " +
                      std::to_string(fs) + ")");
  }
}

FilterSpec FilterSpec::for_band(Band band) const {
  FilterSpec out = *this;
  std::tie(out.low_cut_hz, out.high_cut_hz) = band_edges(band);
  return out;
}

std::vector<Biquad> design_butterworth_bandpass(const FilterSpec& spec, double fs) {
  spec.validate(fs);
  const int n = spec.order;

  // Prewarped analog edges, then the low-pass -> band-pass substitution.
  const double w_lo = 2.0 * fs * std::tan(pi * spec.low_cut_hz / fs);
  const double w_hi = 2.0 * fs * std::tan(pi * spec.high_cut_hz / fs);
  const double w0 = std::sqrt(w_lo * w_hi);
  const double bw = w_hi - w_lo;

  std::vector<std::complex<double>> upper;
  std::vector<double> real_poles;
  for (int k = 0; k < n; ++k) {
    const double theta = pi * (2.0 * k + n + 1) / (2.0 * n);
    const std::complex<double> proto = std::polar(1.0, theta);
    const std::complex<double> half = proto * (bw / 2.0);
    const std::complex<double> disc = std::sqrt(half * half - w0 * w0);
    for (const auto s : {half + disc, half - disc}) {
      const std::complex<double> z = (2.0 * fs + s) / (2.0 * fs - s);
      if (std::abs(z.imag()) > 1e-12) {
        if (z.imag() > 0.0) upper.push_back(z);
      } else {
        real_poles.push_back(z.real());
      }
    }
  }
  std::sort(real_poles.begin(), real_poles.end());

  std::vector<Biquad> sections;
  for (const auto& z : upper) {
    sections.push_back({1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)});
  }
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    const double r1 = real_poles[i];
    const double r2 = real_poles[i + 1];
    sections.push_back({1.0, 0.0, -1.0, -(r1 + r2), r1 * r2});
  }

  // Normalize to unity at the analog center frequency mapped back to digital.
  const double center_hz = fs / pi * std::atan(w0 / (2.0 * fs));
  const double gain = cascade_magnitude(sections, center_hz, fs);
  const double per_section = std::pow(1.0 / gain, 1.0 / static_cast<double>(sections.size()));
  for (auto& s : sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }
  return sections;
}

double cascade_magnitude(std::span<const Biquad> sections, double freq_hz, double fs) {
  const std::complex<double> zinv = std::polar(1.0, -2.0 * pi * freq_hz / fs);
  const std::complex<double> zinv2 = zinv * zinv;
  std::complex<double> h{1.0, 0.0};
  for (const auto& s : sections) {
    h *= (s.b0 + s.b1 * zinv + s.b2 * zinv2) / (1.0 + s.a1 * zinv + s.a2 * zinv2);
  }
  return std::abs(h);
}

namespace {

// Runs the cascade over `x` in place, each section primed at steady state for
// a constant input equal to x[0].
void run_cascade(std::span<const Biquad> sections, std::vector<double>& x) {
  if (x.empty()) return;
  double level = x.front();
  for (const auto& s : sections) {
    const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    double z2 = s.b2 * level - s.a2 * dc * level;
    double z1 = s.b1 * level - s.a1 * dc * level + z2;
    for (double& v : x) {
      const double in = v;
      const double y = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * y + z2;
      z2 = s.b2 * in - s.a2 * y;
      v = y;
    }
    level *= dc;
  }
}

} // namespace

std::vector<double> apply_bandpass(const FilterSpec& spec, std::span<const double> signal, double fs) {
  if (!(fs > 2.0 * spec.high_cut_hz)) throw ConfigError("sample rate must exceed twice high_cut");
  const auto sections = design_butterworth_bandpass(spec, fs);
  if (signal.size() < 3 * static_cast<std::size_t>(spec.order)) {
    throw InputError("signal has " + std::to_string(signal.size()) +
                     " samples; filter needs at least 3 x order");
  }

  if (spec.mode == FilterMode::causal) {
    std::vector<double> out(signal.begin(), signal.end());
    run_cascade(sections, out);
    return out;
  }

  const std::size_t n = signal.size();
  const std::size_t pad = std::min<std::size_t>(3 * (2 * sections.size() + 1), n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * signal[0] - signal[i]);
  ext.insert(ext.end(), signal.begin(), signal.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * signal[n - 1] - signal[n - 1 - i]);

  run_cascade(sections, ext);
  std::reverse(ext.begin(), ext.end());
  run_cascade(sections, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

StreamingBandpass::StreamingBandpass(const FilterSpec& spec, double fs)
    : sections_(design_butterworth_bandpass(spec, fs)), state_(sections_.size(), {0.0, 0.0}) {}

double StreamingBandpass::process(double x) {
  if (!primed_) {
    double level = x;
    for (std::size_t i = 0; i < sections_.size(); ++i) {
      const auto& s = sections_[i];
      const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
      const double z2 = s.b2 * level - s.a2 * dc * level;
      state_[i] = {s.b1 * level - s.a1 * dc * level + z2, z2};
      level *= dc;
    }
    primed_ = true;
  }
  double v = x;
  for (std::size_t i = 0; i < sections_.size(); ++i) {
    const auto& s = sections_[i];
    auto& [z1, z2] = state_[i];
    const double y = s.b0 * v + z1;
    z1 = s.b1 * v - s.a1 * y + z2;
    z2 = s.b2 * v - s.a2 * y;
    v = y;
  }
  return v;
}

void StreamingBandpass::reset() {
  std::fill(state_.begin(), state_.end(), std::pair{0.0, 0.0});
  primed_ = false;
}

std::vector<std::complex<double>> analytic_signal(std::span<const double> signal) {
  const std::size_t n = signal.size();
  std::vector<std::complex<double>> spec(signal.begin(), signal.end());
  detail::dft_inplace(spec, false);
  // Keep DC (and Nyquist for even n), double positive, zero negative bins.
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n) {
      spec[k] *= 2.0;
    } else if (2 * k > n) {
      spec[k] = 0.0;
    }
  }
  detail::dft_inplace(spec, true);
  const double scale = 1.0 / static_cast<double>(n);
  for (auto& v : spec) v *= scale;
  return spec;
}

double wrap_phase(double radians) {
  double r = std::remainder(radians, 2.0 * pi);
  if (r <= -pi) r += 2.0 * pi;
  return r;
}

std::vector<double> instantaneous_phase(std::span<const double> signal) {
  if (signal.size() < 64) {
    throw InputError("phase extraction needs at least 64 samples, got " +
                     std::to_string(signal.size()));
  }
  if (std::all_of(signal.begin(), signal.end(), [](double v) { return v == 0.0; })) {
    throw DegenerateError("phase undefined for an all-zero signal");
  }
  const auto z = analytic_signal(signal);
  std::vector<double> phase(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    double p = std::atan2(z[i].imag(), z[i].real());
    if (p <= -pi) p = pi;
    phase[i] = p;
  }
  return phase;
}

bool is_gap(std::uint64_t previous_us, std::uint64_t next_us, double sample_rate) {
  if (next_us <= previous_us) return true;
  const double period_us = 1e6 / sample_rate;
  return static_cast<double>(next_us - previous_us) > 1.5 * period_us;
}

std::size_t seconds_to_samples(double seconds, double fs) {
  return static_cast<std::size_t>(std::llround(seconds * fs));
}

std::size_t expected_window_count(std::size_t available, std::size_t window, std::size_t hop) {
  if (window == 0 || hop == 0 || available < window) return 0;
  return (available - window) / hop + 1;
}

WindowingResult slide_windows(std::span<const SampleFrame> frames, Participant participant,
                              const WindowingOptions& options) {
  if (!(options.hop_s > 0.0) || options.hop_s > options.window_s) {
    throw ConfigError("hop must be in (0, window]");
  }
  const std::size_t window = seconds_to_samples(options.window_s, options.sample_rate);
  const std::size_t hop = seconds_to_samples(options.hop_s, options.sample_rate);

  WindowingResult result;
  std::size_t run_start = 0;
  auto emit_run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s + window <= end; s += hop) {
      EpochWindow w;
      w.participant = participant;
      w.start_timestamp_us = frames[s].timestamp_us;
      w.sample_rate = options.sample_rate;
      w.data = ChannelMatrix(options.channel_count, window);
      for (std::size_t i = 0; i < window; ++i) {
        const auto& ch = frames[s + i].channels;
        for (std::size_t c = 0; c < options.channel_count; ++c) w.data.at(c, i) = ch[c];
      }
      result.windows.push_back(std::move(w));
    }
  };

  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].channels.size() != options.channel_count) {
      throw InputError("frame " + std::to_string(i) + " has " +
                       std::to_string(frames[i].channels.size()) + " channels, expected " +
                       std::to_string(options.channel_count));
    }
    if (i > 0 && is_gap(frames[i - 1].timestamp_us, frames[i].timestamp_us, options.sample_rate)) {
      result.gaps.push_back({frames[i - 1].timestamp_us, frames[i].timestamp_us});
      emit_run(run_start, i);
      run_start = i;
    }
  }
  emit_run(run_start, frames.size());
  return result;
}

} // namespace nr
