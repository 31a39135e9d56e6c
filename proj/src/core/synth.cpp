#include "neuresonance/synth.hpp"

#include "neuresonance/error.hpp"
#include "neuresonance/motion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace nr {

using nlohmann::json;
using std::numbers::pi;

void SynthConfig::validate() const {
  if (!(duration_s >= 0.0)) throw ConfigError("synth duration must be >= 0");
  if (!(sample_rate > 0.0) || !(motion_rate > 0.0)) throw ConfigError("synth rates must be positive");
  if (channels == 0 || channels > 255) throw ConfigError("synth channel count must be in 1..255");
  for (double k : coupling) {
    if (!(k >= 0.0 && k <= 1.0)) throw ConfigError("coupling must lie in [0, 1]");
  }
  if (carrier_uv < 0.0 || noise_sigma < 0.0 || phase_noise_rad < 0.0 || freq_jitter_hz < 0.0) {
    throw ConfigError("synth amplitudes must be non-negative");
  }
  for (const auto& b : artifact_schedule) {
    if (b.start_s < 0.0 || b.duration_s <= 0.0 || b.start_s + b.duration_s > duration_s) {
      throw ConfigError("artifact burst outside the synth duration");
    }
  }
}

namespace {

const char* band_name(Band b) {
  switch (b) {
    case Band::theta: return "theta";
    case Band::alpha: return "alpha";
    case Band::beta: return "beta";
  }
  return "alpha";
}

Band parse_band(const std::string& s) {
  if (s == "theta") return Band::theta;
  if (s == "alpha") return Band::alpha;
  if (s == "beta") return Band::beta;
  throw ConfigError("unknown band '" + s + "'");
}

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Paul Kellet's refined pinking filter: six one-pole sections plus direct
// terms, roughly -3 dB/octave across the band of interest.
class PinkNoise {
public:
  static constexpr std::array<double, 6> kPole{0.99886, 0.99332, 0.96900, 0.86650, 0.55000, -0.7616};
  static constexpr std::array<double, 6> kGain{0.0555179, 0.0750759, 0.1538520,
                                               0.3104856, 0.5329522, -0.0168980};
  static constexpr double kDirect = 0.5362;
  static constexpr double kDelayed = 0.115926;

  double next(double white) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      s_[i] = kPole[i] * s_[i] + kGain[i] * white;
      sum += s_[i];
    }
    const double out = sum + kDirect * white + delayed_;
    delayed_ = kDelayed * white;
    return out * norm_;
  }

  // Stationary output variance for unit white input.
  static double variance() {
    double v = kDirect * kDirect + kDelayed * kDelayed;
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 6; ++j) v += kGain[i] * kGain[j] / (1.0 - kPole[i] * kPole[j]);
      v += 2.0 * kDirect * kGain[i] + 2.0 * kDelayed * kGain[i] * kPole[i];
    }
    return v;
  }

private:
  std::array<double, 6> s_{};
  double delayed_{0.0};
  double norm_{1.0 / std::sqrt(variance())};
};

// Frequency performing an Ornstein-Uhlenbeck walk around the band center.
class WanderingOscillator {
public:
  WanderingOscillator(double lo, double hi, double jitter_hz, double fs, std::mt19937_64& rng)
      : lo_(lo), hi_(hi), center_((lo + hi) / 2.0), jitter_(jitter_hz), dt_(1.0 / fs) {
    std::uniform_real_distribution<double> uni(-pi, pi);
    phase_ = uni(rng);
    std::normal_distribution<double> n01;
    freq_ = std::clamp(center_ + jitter_ * n01(rng), lo_, hi_);
  }

  // Advances one sample and returns the unwrapped phase.
  double step(std::mt19937_64& rng) {
    constexpr double tau = 1.0;
    std::normal_distribution<double> n01;
    freq_ += -(freq_ - center_) / tau * dt_ + jitter_ * std::sqrt(2.0 * dt_ / tau) * n01(rng);
    freq_ = std::clamp(freq_, lo_, hi_);
    phase_ += 2.0 * pi * freq_ * dt_;
    return phase_;
  }

private:
  double lo_, hi_, center_, jitter_, dt_;
  double phase_{0.0};
  double freq_{0.0};
};

} // namespace

json synth_config_to_json(const SynthConfig& c) {
  json doc;
  doc["duration_s"] = c.duration_s;
  doc["sample_rate"] = c.sample_rate;
  doc["motion_rate"] = c.motion_rate;
  doc["channels"] = c.channels;
  doc["coupling"] = {{"theta", c.coupling[0]}, {"alpha", c.coupling[1]}, {"beta", c.coupling[2]}};
  doc["carrier_band"] = band_name(c.carrier_band);
  doc["carrier_uv"] = c.carrier_uv;
  doc["noise_sigma"] = c.noise_sigma;
  doc["phase_noise_rad"] = c.phase_noise_rad;
  doc["freq_jitter_hz"] = c.freq_jitter_hz;
  doc["burst_speed_mm_s"] = c.burst_speed_mm_s;
  doc["burst_deflection_uv"] = c.burst_deflection_uv;
  doc["artifact_schedule"] = json::array();
  for (const auto& b : c.artifact_schedule) {
    doc["artifact_schedule"].push_back({{"start_s", b.start_s},
                                        {"duration_s", b.duration_s},
                                        {"participant", b.participant == Participant::A ? "A" : "B"}});
  }
  doc["seed"] = c.seed;
  return doc;
}

SynthConfig synth_config_from_json(const json& doc) {
  SynthConfig c;
  try {
    c.duration_s = doc.value("duration_s", c.duration_s);
    c.sample_rate = doc.value("sample_rate", c.sample_rate);
    c.motion_rate = doc.value("motion_rate", c.motion_rate);
    c.channels = doc.value("channels", c.channels);
    if (doc.contains("coupling")) {
      const auto& k = doc["coupling"];
      if (k.is_number()) {
        c.set_coupling(k.get<double>());
      } else {
        c.coupling = {k.value("theta", 0.0), k.value("alpha", 0.0), k.value("beta", 0.0)};
      }
    }
    if (doc.contains("carrier_band")) c.carrier_band = parse_band(doc["carrier_band"].get<std::string>());
    c.carrier_uv = doc.value("carrier_uv", c.carrier_uv);
    c.noise_sigma = doc.value("noise_sigma", c.noise_sigma);
    c.phase_noise_rad = doc.value("phase_noise_rad", c.phase_noise_rad);
    c.freq_jitter_hz = doc.value("freq_jitter_hz", c.freq_jitter_hz);
    c.burst_speed_mm_s = doc.value("burst_speed_mm_s", c.burst_speed_mm_s);
    c.burst_deflection_uv = doc.value("burst_deflection_uv", c.burst_deflection_uv);
    for (const auto& b : doc.value("artifact_schedule", json::array())) {
      const auto who = b.value("participant", std::string("A"));
      if (who != "A" && who != "B") throw ConfigError("artifact participant must be A or B");
      c.artifact_schedule.push_back({b.at("start_s").get<double>(), b.at("duration_s").get<double>(),
                                     who == "A" ? Participant::A : Participant::B});
    }
    c.seed = doc.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed synth config: ") + e.what());
  }
  c.validate();
  return c;
}

struct SynthSource::State {
  struct Channel {
    std::mt19937_64 rng_a, rng_b, rng_noise;
    WanderingOscillator osc_a, osc_b;
    PinkNoise pink_a, pink_b;
    double jitter{0.0};
  };

  std::vector<Channel> channels;
  std::mt19937_64 motion_rng;
  std::uint64_t eeg_index{0};
  std::uint64_t eeg_count{0};
  std::uint64_t motion_index{0};
  std::uint64_t motion_count{0};
  double kappa{0.0};
};

SynthSource::SynthSource(SynthConfig config) : config_(std::move(config)) {
  config_.validate();
  state_ = std::make_unique<State>();
  std::uint64_t sm = config_.seed;
  const auto [lo, hi] = band_edges(config_.carrier_band);
  for (std::size_t c = 0; c < config_.channels; ++c) {
    std::mt19937_64 rng_a(splitmix64(sm));
    std::mt19937_64 rng_b(splitmix64(sm));
    std::mt19937_64 rng_noise(splitmix64(sm));
    WanderingOscillator osc_a(lo, hi, config_.freq_jitter_hz, config_.sample_rate, rng_a);
    WanderingOscillator osc_b(lo, hi, config_.freq_jitter_hz, config_.sample_rate, rng_b);
    state_->channels.push_back({std::move(rng_a), std::move(rng_b), std::move(rng_noise), osc_a, osc_b,
                                PinkNoise{}, PinkNoise{}, 0.0});
  }
  state_->motion_rng.seed(splitmix64(sm));
  state_->eeg_count = static_cast<std::uint64_t>(std::llround(config_.duration_s * config_.sample_rate));
  state_->motion_count = static_cast<std::uint64_t>(std::llround(config_.duration_s * config_.motion_rate));
  state_->kappa = config_.effective_coupling();
  trace_.push_back({0, state_->kappa});
}

SynthSource::~SynthSource() = default;
SynthSource::SynthSource(SynthSource&&) noexcept = default;
SynthSource& SynthSource::operator=(SynthSource&&) noexcept = default;

void SynthSource::set_coupling(double kappa) {
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw ConfigError("coupling must lie in [0, 1]");
  config_.set_coupling(kappa);
  state_->kappa = kappa;
  const auto ts = static_cast<std::uint64_t>(
      std::llround(static_cast<double>(state_->eeg_index) * 1e6 / config_.sample_rate));
  trace_.push_back({ts, kappa});
}

bool SynthSource::finished() const {
  return state_->eeg_index >= state_->eeg_count && state_->motion_index >= state_->motion_count;
}

std::uint64_t SynthSource::end_us() const {
  return static_cast<std::uint64_t>(std::llround(config_.duration_s * 1e6));
}

std::vector<SampleFrame> SynthSource::advance_to(std::uint64_t t_us) {
  auto& st = *state_;
  const double fs = config_.sample_rate;
  const double fm = config_.motion_rate;
  const double noise_alpha = std::exp(-1.0 / (0.2 * fs)); // 200 ms jitter memory
  const double noise_drive = std::sqrt(1.0 - noise_alpha * noise_alpha);

  auto eeg_ts = [&](std::uint64_t i) {
    return static_cast<std::uint64_t>(std::llround(static_cast<double>(i) * 1e6 / fs));
  };
  auto motion_ts = [&](std::uint64_t j) {
    return static_cast<std::uint64_t>(std::llround(static_cast<double>(j) * 1e6 / fm));
  };
  auto burst_envelope = [&](Participant p, double t, double& progress) {
    for (const auto& b : config_.artifact_schedule) {
      if (b.participant != p) continue;
      if (t >= b.start_s && t < b.start_s + b.duration_s) {
        progress = (t - b.start_s) / b.duration_s;
        return true;
      }
    }
    return false;
  };

  std::vector<SampleFrame> out;
  for (;;) {
    const bool eeg_left = st.eeg_index < st.eeg_count;
    const bool motion_left = st.motion_index < st.motion_count;
    if (!eeg_left && !motion_left) break;
    const std::uint64_t te = eeg_left ? eeg_ts(st.eeg_index) : UINT64_MAX;
    const std::uint64_t tm = motion_left ? motion_ts(st.motion_index) : UINT64_MAX;
    const std::uint64_t next = std::min(te, tm);
    if (next >= t_us) break;

    if (te <= tm) {
      const double t = static_cast<double>(st.eeg_index) / fs;
      SampleFrame fa{to_u8(StreamId::eeg_a), te, std::vector<float>(config_.channels)};
      SampleFrame fb{to_u8(StreamId::eeg_b), te, std::vector<float>(config_.channels)};
      double progress = 0.0;
      const double defl_a = burst_envelope(Participant::A, t, progress)
                                ? config_.burst_deflection_uv * std::sin(pi * progress)
                                : 0.0;
      const double defl_b = burst_envelope(Participant::B, t, progress)
                                ? config_.burst_deflection_uv * std::sin(pi * progress)
                                : 0.0;
      std::normal_distribution<double> n01;
      for (std::size_t c = 0; c < config_.channels; ++c) {
        auto& ch = st.channels[c];
        const double phase_a = ch.osc_a.step(ch.rng_a);
        const double phase_bi = ch.osc_b.step(ch.rng_b);
        ch.jitter = noise_alpha * ch.jitter + noise_drive * config_.phase_noise_rad * n01(ch.rng_noise);
        const double phase_b = st.kappa * phase_a + (1.0 - st.kappa) * phase_bi + ch.jitter;
        const double na = config_.noise_sigma * ch.pink_a.next(n01(ch.rng_noise));
        const double nb = config_.noise_sigma * ch.pink_b.next(n01(ch.rng_noise));
        fa.channels[c] = static_cast<float>(config_.carrier_uv * std::sin(phase_a) + na + defl_a);
        fb.channels[c] = static_cast<float>(config_.carrier_uv * std::sin(phase_b) + nb + defl_b);
      }
      out.push_back(std::move(fa));
      out.push_back(std::move(fb));
      ++st.eeg_index;
    } else {
      const double t = static_cast<double>(st.motion_index) / fm;
      std::normal_distribution<double> n01;
      for (auto p : {Participant::A, Participant::B}) {
        MotionSample m;
        m.participant = p;
        m.timestamp_us = tm;
        m.position_mm = {p == Participant::A ? 0.0 : 800.0, 0.0, 1600.0};
        // Displacement accumulated by all bursts that started before t.
        for (const auto& b : config_.artifact_schedule) {
          if (b.participant != p || t < b.start_s) continue;
          m.position_mm[0] += config_.burst_speed_mm_s * std::min(t - b.start_s, b.duration_s);
        }
        for (double& v : m.position_mm) v += 0.05 * n01(st.motion_rng);
        const double yaw = 0.001 * n01(st.motion_rng);
        m.orientation = {std::cos(yaw / 2.0), 0.0, 0.0, std::sin(yaw / 2.0)};
        out.push_back(motion_to_frame(
            m, to_u8(p == Participant::A ? StreamId::motion_a : StreamId::motion_b)));
      }
      ++st.motion_index;
    }
  }
  return out;
}

std::vector<SampleFrame> SynthSource::advance_all() { return advance_to(UINT64_MAX); }

std::vector<SampleFrame> SynthOutput::merged() const {
  std::vector<SampleFrame> all;
  all.reserve(eeg_a.size() + eeg_b.size() + motion_a.size() + motion_b.size());
  for (const auto* s : {&eeg_a, &eeg_b, &motion_a, &motion_b}) all.insert(all.end(), s->begin(), s->end());
  std::stable_sort(all.begin(), all.end(), [](const SampleFrame& l, const SampleFrame& r) {
    return l.timestamp_us != r.timestamp_us ? l.timestamp_us < r.timestamp_us : l.stream_id < r.stream_id;
  });
  return all;
}

SynthOutput synth_dual_eeg(const SynthConfig& config) {
  SynthSource source(config);
  SynthOutput out;
  for (auto& f : source.advance_all()) {
    switch (static_cast<StreamId>(f.stream_id)) {
      case StreamId::eeg_a: out.eeg_a.push_back(std::move(f)); break;
      case StreamId::eeg_b: out.eeg_b.push_back(std::move(f)); break;
      case StreamId::motion_a: out.motion_a.push_back(std::move(f)); break;
      case StreamId::motion_b: out.motion_b.push_back(std::move(f)); break;
    }
  }
  out.coupling_trace = source.coupling_trace();
  return out;
}

} // namespace nr

namespace nr {

Manifest write_synth_session(const std::filesystem::path& dir, SynthConfig config,
                             const std::vector<SynthSegment>& segments) {
  std::vector<SynthSegment> plan = segments;
  if (plan.empty()) plan.push_back({Condition::no_feedback, config.effective_coupling(), config.duration_s});
  double total = 0.0;
  for (const auto& s : plan) {
    if (!(s.duration_s > 0.0)) throw ConfigError("segment duration must be positive");
    if (!(s.coupling >= 0.0 && s.coupling <= 1.0)) throw ConfigError("segment coupling must lie in [0, 1]");
    total += s.duration_s;
  }
  config.duration_s = total;
  config.set_coupling(plan.front().coupling);
  config.validate();

  Manifest manifest;
  manifest.session_id = "synth-" + std::to_string(config.seed);
  manifest.streams = default_streams(config.sample_rate, config.motion_rate);
  nlohmann::json seg_json = nlohmann::json::array();
  for (const auto& s : plan) {
    seg_json.push_back({{"condition", std::string(condition_label(s.condition))},
                        {"coupling", s.coupling},
                        {"duration_s", s.duration_s}});
  }
  manifest.config = {{"synth", synth_config_to_json(config)}, {"segments", seg_json}};

  RecordingWriter writer(dir, manifest);
  SynthSource source(config);
  double elapsed = 0.0;
  int id = 1;
  for (const auto& s : plan) {
    const auto start = static_cast<std::uint64_t>(std::llround(elapsed * 1e6));
    elapsed += s.duration_s;
    const auto stop = static_cast<std::uint64_t>(std::llround(elapsed * 1e6));
    if (id > 1) source.set_coupling(s.coupling);
    for (const auto& f : source.advance_to(stop)) writer.append(f);
    writer.manifest().trials.push_back({id++, s.condition, start, stop});
  }
  for (const auto& f : source.advance_all()) writer.append(f);
  writer.close();
  return writer.manifest();
}

} // namespace nr
