#include "neuresonance/analysis.hpp"

#include "fft.hpp"
#include "neuresonance/error.hpp"
#include "neuresonance/log.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <future>
#include <numbers>
#include <sstream>

namespace nr {

using nlohmann::json;

void AnalysisOptions::validate() const {
  if (!(window_s > 0.0) || !(hop_s > 0.0)) throw ConfigError("analysis window and hop must be positive");
  if (!(threshold_k > 0.0) || !std::isfinite(threshold_k)) throw ConfigError("threshold k must be positive");
  if (top_k == 0) throw ConfigError("top_k must be at least 1");
  if (stft_window < 2 || stft_hop == 0) throw ConfigError("bad STFT geometry");
}

std::vector<std::uint64_t> epoch_starts(std::uint64_t start_us, std::uint64_t stop_us, double window_s,
                                        double hop_s, double sample_rate) {
  std::vector<std::uint64_t> out;
  if (stop_us <= start_us) return out;
  const double duration_s = static_cast<double>(stop_us - start_us) * 1e-6;
  const auto available = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  const auto window = seconds_to_samples(window_s, sample_rate);
  const auto hop = seconds_to_samples(hop_s, sample_rate);
  const auto count = expected_window_count(available, window, hop);
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(start_us + static_cast<std::uint64_t>(std::llround(static_cast<double>(k * hop) * 1e6 / sample_rate)));
  }
  return out;
}

std::vector<StftFrame> stft_frames(std::span<const double> x, double sample_rate, std::size_t window,
                                   std::size_t hop) {
  std::vector<StftFrame> frames;
  if (x.size() < window) return frames;
  std::vector<double> hann(window);
  for (std::size_t i = 0; i < window; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(window));
  }
  const double bin_hz = sample_rate / static_cast<double>(window);
  std::vector<std::complex<double>> buf(window);
  for (std::size_t off = 0; off + window <= x.size(); off += hop) {
    for (std::size_t i = 0; i < window; ++i) buf[i] = {x[off + i] * hann[i], 0.0};
    detail::dft_inplace(buf, false);
    double weighted = 0.0;
    double mag_sum = 0.0;
    double energy = 0.0;
    for (std::size_t k = 0; k <= window / 2; ++k) {
      const double mag = std::abs(buf[k]);
      weighted += static_cast<double>(k) * bin_hz * mag;
      mag_sum += mag;
      energy += mag * mag;
    }
    frames.push_back({mag_sum > 0.0 ? weighted / mag_sum : 0.0, energy});
  }
  return frames;
}

double spectral_energy_score(std::span<const ChannelMatrix* const> channels, double sample_rate,
                             std::size_t window, std::size_t hop) {
  double total = 0.0;
  for (const auto* m : channels) {
    for (std::size_t c = 0; c < m->channels(); ++c) {
      const auto frames = stft_frames(m->channel(c), sample_rate, window, hop);
      if (frames.empty()) continue;
      double acc = 0.0;
      for (const auto& f : frames) acc += f.centroid_hz * f.energy;
      total += acc / static_cast<double>(frames.size());
    }
  }
  return total;
}

double spectral_energy_score(const ChannelMatrix& data, double sample_rate, std::size_t window, std::size_t hop) {
  const ChannelMatrix* one[] = {&data};
  return spectral_energy_score(std::span<const ChannelMatrix* const>(one), sample_rate, window, hop);
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

RejectionResult reject_noisy_epochs(std::span<const double> scores, double k, std::size_t min_epochs) {
  RejectionResult out;
  out.epochs.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out.epochs.push_back({i, scores[i], true});
  if (scores.size() < min_epochs) {
    out.low_confidence = true;
    out.threshold = std::numeric_limits<double>::infinity();
    return out;
  }
  std::vector<double> v(scores.begin(), scores.end());
  out.median = median_of(v);
  for (auto& s : v) s = std::abs(s - out.median);
  out.mad = median_of(v);
  if (out.mad == 0.0) {
    out.threshold = std::numeric_limits<double>::infinity();
    return out;
  }
  out.threshold = out.median + k * out.mad;
  for (auto& e : out.epochs) e.valid = !(e.score > out.threshold);
  return out;
}

bool trial_is_valid(std::size_t valid, std::size_t analyzable) { return analyzable > 0 && 2 * valid >= analyzable; }

namespace {

constexpr std::array<Band, 3> kBands{Band::theta, Band::alpha, Band::beta};

std::string band_name(Band b) {
  switch (b) {
  case Band::theta: return "theta";
  case Band::alpha: return "alpha";
  case Band::beta: return "beta";
  }
  return "?";
}

struct Streams {
  std::vector<SampleFrame> eeg[2];
  std::vector<MotionSample> motion[2];
  double eeg_rate{kDefaultSampleRate};
};

std::optional<EpochWindow> cut(const std::vector<SampleFrame>& frames, Participant who, std::uint64_t start,
                               std::size_t n, double fs) {
  const double period = 1e6 / fs;
  const double lo = static_cast<double>(start) - 0.5 * period;
  const double hi = static_cast<double>(start) + (static_cast<double>(n) - 0.5) * period;
  auto first = std::lower_bound(frames.begin(), frames.end(), lo, [](const SampleFrame& f, double t) {
    return static_cast<double>(f.timestamp_us) < t;
  });
  std::size_t count = 0;
  for (auto it = first; it != frames.end() && static_cast<double>(it->timestamp_us) < hi; ++it) {
    if (it != first && is_gap(std::prev(it)->timestamp_us, it->timestamp_us, fs)) return std::nullopt;
    ++count;
  }
  if (count != n) return std::nullopt;
  EpochWindow w;
  w.participant = who;
  w.start_timestamp_us = first->timestamp_us;
  w.sample_rate = fs;
  w.data = ChannelMatrix(kEegChannels, n);
  auto it = first;
  for (std::size_t s = 0; s < n; ++s, ++it) {
    for (std::size_t c = 0; c < kEegChannels; ++c) w.data.at(c, s) = it->channels[c];
  }
  return w;
}

ChannelMatrix filtered(const ChannelMatrix& m, const FilterSpec& spec, double fs) {
  ChannelMatrix out(m.channels(), m.samples());
  for (std::size_t c = 0; c < m.channels(); ++c) {
    const auto y = apply_bandpass(spec, m.channel(c), fs);
    for (std::size_t s = 0; s < y.size(); ++s) out.at(c, s) = y[s];
  }
  return out;
}

double fisher_mean(const std::vector<double>& values) {
  double acc = 0.0;
  for (double v : values) acc += fisher_z(v);
  return inverse_fisher_z(acc / static_cast<double>(values.size()));
}

TrialReport analyze_trial(const TrialMarker& marker, const Streams& streams, const AnalysisOptions& options) {
  TrialReport report;
  report.trial_id = marker.trial_id;
  report.condition = marker.condition;
  report.start_us = marker.start_us;
  report.stop_us = marker.stop_us;
  if (!marker.stop_us) {
    report.skipped = true;
    report.notes.push_back("missing stop marker; trial skipped");
    return report;
  }

  const double fs = streams.eeg_rate;
  const auto n = seconds_to_samples(options.window_s, fs);
  const auto starts = epoch_starts(marker.start_us, *marker.stop_us, options.window_s, options.hop_s, fs);
  report.total = starts.size();
  std::vector<std::size_t> indices(starts.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  const auto trimmed = trim_edges(indices, options.trim);
  report.trimmed = trimmed.removed;
  report.too_short = trimmed.too_short;
  if (report.too_short) {
    report.notes.push_back("too short: " + std::to_string(report.total) + " epochs before trimming");
    return report;
  }

  IbsOptions ibs;
  ibs.filter = options.filter;
  ibs.top_k = options.top_k;

  struct Work {
    std::optional<EpochWindow> a, b;
  };
  std::vector<Work> work;
  std::vector<double> scores;
  for (auto idx : trimmed.kept) {
    EpochRecord rec;
    rec.index = idx;
    rec.start_us = starts[idx];
    Work w{cut(streams.eeg[0], Participant::A, starts[idx], n, fs), cut(streams.eeg[1], Participant::B, starts[idx], n, fs)};
    rec.complete = w.a && w.b;
    if (rec.complete) {
      const auto fa = filtered(w.a->data, options.filter, fs);
      const auto fb = filtered(w.b->data, options.filter, fs);
      const ChannelMatrix* both[] = {&fa, &fb};
      rec.score = spectral_energy_score(std::span<const ChannelMatrix* const>(both), fs, options.stft_window,
                                        options.stft_hop);
      scores.push_back(rec.score);
    }
    const auto end = starts[idx] + static_cast<std::uint64_t>(std::llround(static_cast<double>(n) * 1e6 / fs));
    for (int p = 0; p < 2; ++p) {
      if (streams.motion[p].empty()) continue;
      if (classify_span(streams.motion[p], starts[idx], end, options.motion).rejected) rec.motion_valid = false;
    }
    report.epochs.push_back(rec);
    work.push_back(std::move(w));
  }
  if (report.epochs.size() > scores.size()) {
    report.notes.push_back(std::to_string(report.epochs.size() - scores.size()) + " epochs with incomplete data");
  }

  const auto rejection = reject_noisy_epochs(scores, options.threshold_k, options.min_scored);
  report.median = rejection.median;
  report.mad = rejection.mad;
  report.threshold = rejection.threshold;
  if (rejection.low_confidence) report.notes.push_back("fewer than " + std::to_string(options.min_scored) +
                                                       " scored epochs; spectral rule not applied (low confidence)");

  std::vector<double> values;
  std::map<std::string, std::vector<double>> band_values;
  std::size_t scored = 0;
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    auto& rec = report.epochs[i];
    if (rec.complete) rec.spectral_valid = rejection.epochs[scored++].valid;
    if (rec.complete && rec.spectral_valid && rec.motion_valid) {
      const auto m = compute_ibs(*work[i].a, *work[i].b, ibs);
      rec.metric_valid = m.valid;
      if (m.valid) rec.value = m.value;
      if (options.per_band && m.valid) {
        for (auto band : kBands) {
          auto opt = ibs;
          opt.band = band;
          const auto mb = compute_ibs(*work[i].a, *work[i].b, opt);
          if (mb.valid) rec.band_values[band_name(band)] = mb.value;
        }
      }
    }
    rec.valid = rec.complete && rec.spectral_valid && rec.motion_valid && rec.metric_valid;
    if (rec.valid) {
      ++report.valid;
      values.push_back(*rec.value);
      for (const auto& [name, v] : rec.band_values) band_values[name].push_back(v);
    } else {
      ++report.invalid;
    }
  }

  report.trial_valid = trial_is_valid(report.valid, report.epochs.size());
  if (report.trial_valid) {
    report.pooled = fisher_mean(values);
    for (const auto& [name, vs] : band_values) report.pooled_per_band[name] = fisher_mean(vs);
  } else {
    report.notes.push_back("rejected: " + std::to_string(report.valid) + " of " +
                           std::to_string(report.epochs.size()) + " epochs valid");
  }
  return report;
}

} // namespace

AnalysisReport analyze_frames(const Manifest& manifest, const std::vector<SampleFrame>& frames,
                              const AnalysisOptions& options) {
  options.validate();
  Streams streams;
  for (const auto& s : manifest.streams) {
    if (s.id == 0 && s.sample_rate > 0.0) streams.eeg_rate = s.sample_rate;
  }
  options.filter.validate(streams.eeg_rate);
  for (const auto& f : frames) {
    switch (f.stream_id) {
    case 0:
    case 1:
      if (f.channels.size() == kEegChannels) streams.eeg[f.stream_id].push_back(f);
      break;
    case 2:
    case 3:
      if (f.channels.size() == kMotionChannels) {
        const auto who = f.stream_id == 2 ? Participant::A : Participant::B;
        streams.motion[f.stream_id - 2].push_back(motion_from_frame(f, who));
      }
      break;
    default: break;
    }
  }
  auto by_time = [](const auto& l, const auto& r) { return l.timestamp_us < r.timestamp_us; };
  for (auto& v : streams.eeg) std::stable_sort(v.begin(), v.end(), by_time);
  for (auto& v : streams.motion) std::stable_sort(v.begin(), v.end(), by_time);

  AnalysisReport report;
  report.session_id = manifest.session_id;
  report.options = options;
  if (manifest.trials.empty()) report.notes.push_back("recording has no trial markers");

  std::vector<std::future<TrialReport>> jobs;
  for (const auto& t : manifest.trials) {
    jobs.push_back(std::async(std::launch::async, [&streams, &options, t] { return analyze_trial(t, streams, options); }));
  }
  for (auto& j : jobs) report.trials.push_back(j.get());

  std::map<Condition, std::vector<const TrialReport*>> grouped;
  for (const auto& t : report.trials) {
    if (t.trial_valid) grouped[t.condition].push_back(&t);
  }
  for (const auto& [cond, trials] : grouped) {
    ConditionSummary s;
    s.condition = cond;
    s.valid_trials = trials.size();
    double acc = 0.0;
    std::map<std::string, std::pair<double, std::size_t>> bands;
    for (const auto* t : trials) {
      acc += *t->pooled;
      for (const auto& [name, v] : t->pooled_per_band) {
        bands[name].first += v;
        ++bands[name].second;
      }
    }
    s.mean_pooled = acc / static_cast<double>(trials.size());
    for (const auto& [name, p] : bands) s.mean_per_band[name] = p.first / static_cast<double>(p.second);
    report.conditions.push_back(s);
  }
  report.all_rejected = report.conditions.empty();
  if (report.all_rejected) {
    report.notes.push_back("every trial was rejected; condition table is empty");
    log_warn("analysis: every trial was rejected");
  }
  return report;
}

AnalysisReport analyze(const std::filesystem::path& recording, const AnalysisOptions& options) {
  return analyze_frames(read_manifest(recording), read_frames(recording), options);
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

} // namespace

json report_to_json(const AnalysisReport& report) {
  json doc = json::object();
  doc["session_id"] = report.session_id;
  const auto& o = report.options;
  doc["options"] = {{"window_s", o.window_s},
                    {"hop_s", o.hop_s},
                    {"trim", o.trim},
                    {"threshold_k", o.threshold_k},
                    {"filter_mode", o.filter.mode == FilterMode::zero_phase ? "zero_phase" : "causal"},
                    {"low_cut_hz", o.filter.low_cut_hz},
                    {"high_cut_hz", o.filter.high_cut_hz},
                    {"order", o.filter.order},
                    {"top_k", o.top_k},
                    {"per_band", o.per_band}};
  doc["trials"] = json::array();
  for (const auto& t : report.trials) {
    json tj;
    tj["trial_id"] = t.trial_id;
    tj["condition"] = std::string(condition_label(t.condition));
    tj["start_us"] = t.start_us;
    tj["stop_us"] = t.stop_us ? json(*t.stop_us) : json(nullptr);
    tj["skipped"] = t.skipped;
    tj["epochs_total"] = t.total;
    tj["epochs_valid"] = t.valid;
    tj["epochs_invalid"] = t.invalid;
    tj["epochs_trimmed"] = t.trimmed;
    tj["too_short"] = t.too_short;
    tj["trial_valid"] = t.trial_valid;
    tj["pooled_ccorr"] = optional_number(t.pooled);
    if (o.per_band) tj["pooled_per_band"] = t.pooled_per_band;
    tj["score_median"] = t.median;
    tj["score_mad"] = t.mad;
    tj["score_threshold"] = finite_or_null(t.threshold);
    tj["notes"] = t.notes;
    tj["epochs"] = json::array();
    for (const auto& e : t.epochs) {
      json ej{{"index", e.index},       {"start_us", e.start_us},           {"score", e.score},
              {"complete", e.complete}, {"spectral_valid", e.spectral_valid}, {"motion_valid", e.motion_valid},
              {"valid", e.valid},       {"value", optional_number(e.value)}};
      if (o.per_band) ej["band_values"] = e.band_values;
      tj["epochs"].push_back(ej);
    }
    doc["trials"].push_back(tj);
  }
  doc["conditions"] = json::array();
  for (const auto& c : report.conditions) {
    json cj{{"condition", std::string(condition_label(c.condition))},
            {"valid_trials", c.valid_trials},
            {"mean_pooled_ccorr", c.mean_pooled}};
    if (o.per_band) cj["mean_per_band"] = c.mean_per_band;
    doc["conditions"].push_back(cj);
  }
  doc["all_rejected"] = report.all_rejected;
  doc["notes"] = report.notes;
  return doc;
}

std::string report_to_csv(const AnalysisReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "trial_id,condition,epochs_total,epochs_valid,epochs_invalid,epochs_trimmed,too_short,trial_valid,"
         "pooled_ccorr,score_threshold\n";
  for (const auto& t : report.trials) {
    out << t.trial_id << ',' << condition_label(t.condition) << ',' << t.total << ',' << t.valid << ','
        << t.invalid << ',' << t.trimmed << ',' << (t.too_short ? 1 : 0) << ',' << (t.trial_valid ? 1 : 0) << ',';
    if (t.pooled) out << *t.pooled;
    out << ',';
    if (std::isfinite(t.threshold)) out << t.threshold;
    out << '\n';
  }
  return out.str();
}

void write_report(const std::filesystem::path& dir, const AnalysisReport& report) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  {
    std::ofstream f(dir / "report.json");
    if (!f) throw IoError("cannot write " + (dir / "report.json").string());
    f << report_to_json(report).dump(2) << '\n';
  }
  std::ofstream f(dir / "report.csv");
  if (!f) throw IoError("cannot write " + (dir / "report.csv").string());
  f << report_to_csv(report);
}

} // namespace nr
