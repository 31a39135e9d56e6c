#include "neuresonance/analysis.hpp"
#include "neuresonance/engine.hpp"
#include "neuresonance/error.hpp"
#include "neuresonance/synth.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

using namespace nr;

namespace {

// Oracle: median + k * median(|x - median|), written out locally.
std::vector<bool> oracle_reject(const std::vector<double>& scores, double k) {
  const double med = test::oracle_median(scores);
  std::vector<double> dev;
  for (double s : scores) dev.push_back(std::abs(s - med));
  const double mad = test::oracle_median(dev);
  std::vector<bool> valid;
  for (double s : scores) valid.push_back(mad == 0.0 || s <= med + k * mad);
  return valid;
}

ChannelMatrix tone(double hz, std::size_t n, double fs, double amp = 1.0) {
  ChannelMatrix m(1, n);
  for (std::size_t i = 0; i < n; ++i) m.at(0, i) = amp * std::sin(2.0 * std::numbers::pi * hz * i / fs);
  return m;
}

double rms(const ChannelMatrix& m) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m.samples(); ++i) acc += m.at(0, i) * m.at(0, i);
  return std::sqrt(acc / m.samples());
}

} // namespace

TEST_CASE("epoch counts from trial length") {
  const auto fs = 256.0;
  CHECK(epoch_starts(0, 30'000'000, 3.0, 0.5, fs).size() == 55);
  CHECK(epoch_starts(0, 3'000'000, 3.0, 0.5, fs).size() == 1);
  CHECK(epoch_starts(0, 2'000'000, 3.0, 0.5, fs).empty());
  CHECK(epoch_starts(5'000'000, 5'000'000, 3.0, 0.5, fs).empty());
  const auto s = epoch_starts(1'000'000, 31'000'000, 3.0, 0.5, fs);
  REQUIRE(s.size() == 55);
  CHECK(s.front() == 1'000'000);
  CHECK(s[1] - s[0] == 500'000);
  CHECK(s.back() == 1'000'000 + 54 * 500'000);
}

TEST_CASE("edge trimming") {
  auto make = [](std::size_t n) {
    std::vector<int> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
    return v;
  };
  const auto t55 = trim_edges(make(55));
  CHECK(t55.kept.size() == 49);
  CHECK(t55.kept.front() == 3);
  CHECK(t55.kept.back() == 51);
  CHECK(t55.removed == 6);
  const auto t7 = trim_edges(make(7));
  REQUIRE(t7.kept.size() == 1);
  CHECK(t7.kept[0] == 3);
  CHECK_FALSE(t7.too_short);
  const auto t6 = trim_edges(make(6));
  CHECK(t6.kept.empty());
  CHECK(t6.too_short);
  CHECK(trim_edges(make(0)).too_short);

  // Symmetric: reversing the input reverses the kept set.
  auto v = make(20);
  auto fwd = trim_edges(v).kept;
  std::reverse(v.begin(), v.end());
  auto rev = trim_edges(v).kept;
  std::reverse(rev.begin(), rev.end());
  CHECK(fwd == rev);
}

TEST_CASE("spectral centroid and energy score") {
  const double fs = 256.0;
  const auto t = tone(10.0, 768, fs);
  const auto frames = stft_frames(t.channel(0), fs);
  REQUIRE(frames.size() == 5);
  for (const auto& f : frames) CHECK(std::abs(f.centroid_hz - 10.0) <= 1.0);
  CHECK(stft_frames(t.channel(0), fs, 1024).empty());

  // Broadband 20-48 Hz burst against a clean alpha signal of equal variance.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> raw(768);
  for (auto& x : raw) x = g(rng);
  FilterSpec hf{20.0, 48.0, 4, FilterMode::zero_phase};
  const auto burst_v = apply_bandpass(hf, raw, fs);
  ChannelMatrix burst(1, 768);
  for (std::size_t i = 0; i < 768; ++i) burst.at(0, i) = burst_v[i];
  const double scale = rms(t) / rms(burst);
  for (std::size_t i = 0; i < 768; ++i) burst.at(0, i) *= scale;
  CHECK(rms(burst) == doctest::Approx(rms(t)).epsilon(1e-12));
  CHECK(spectral_energy_score(burst, fs) > spectral_energy_score(t, fs));

  CHECK(spectral_energy_score(ChannelMatrix(2, 768), fs) == 0.0);
}

TEST_CASE("noisy epoch rejection against the median/MAD oracle") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(90.0, 110.0);
  std::vector<double> scores(50);
  for (auto& s : scores) s = u(rng);
  scores[7] *= 10.0;
  scores[31] *= 10.0;
  const auto r = reject_noisy_epochs(scores, 3.0);
  const auto expect = oracle_reject(scores, 3.0);
  REQUIRE(r.epochs.size() == 50);
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(r.epochs[i].valid == expect[i]);
    CHECK(r.epochs[i].valid == (i != 7 && i != 31));
    rejected += !r.epochs[i].valid;
  }
  CHECK(rejected == 2);
  CHECK(r.median == test::oracle_median(scores));

  // Scaling all scores leaves the decision unchanged.
  auto scaled = scores;
  for (auto& s : scaled) s *= 1e6;
  const auto rs = reject_noisy_epochs(scaled, 3.0);
  for (std::size_t i = 0; i < 50; ++i) CHECK(rs.epochs[i].valid == r.epochs[i].valid);
}

TEST_CASE("rejection edge cases") {
  const std::vector<double> same(30, 4.2);
  const auto r = reject_noisy_epochs(same, 3.0);
  CHECK(r.mad == 0.0);
  for (const auto& e : r.epochs) CHECK(e.valid);

  std::vector<double> ramp(100);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);
  const auto rr = reject_noisy_epochs(ramp, 3.0);
  std::size_t valid = 0;
  for (const auto& e : rr.epochs) valid += e.valid;
  CHECK(valid >= 90);

  const std::vector<double> few{1.0, 100.0, 1.0};
  const auto rf = reject_noisy_epochs(few, 3.0, 5);
  CHECK(rf.low_confidence);
  for (const auto& e : rf.epochs) CHECK(e.valid);
}

TEST_CASE("trial validity rule") {
  CHECK_FALSE(trial_is_valid(10, 24));
  CHECK(trial_is_valid(12, 24));
  CHECK(trial_is_valid(13, 25));
  CHECK_FALSE(trial_is_valid(12, 25));
  CHECK_FALSE(trial_is_valid(0, 0));
}

TEST_CASE("session analysis separates coupled from uncoupled trials") {
  const auto dir = test::temp_dir("an_session");
  SynthConfig s;
  s.seed = 5;
  write_synth_session(dir, s,
                      {{Condition::non_sync, 0.0, 30.0},
                       {Condition::visual, 0.8, 30.0},
                       {Condition::non_sync, 0.0, 30.0},
                       {Condition::visual, 0.8, 30.0}});
  AnalysisOptions opt;
  opt.per_band = true;
  const auto report = analyze(dir, opt);
  REQUIRE(report.trials.size() == 4);
  for (const auto& t : report.trials) {
    CHECK(t.total == 55);
    CHECK(t.trimmed == 6);
    CHECK(t.total == t.valid + t.invalid + t.trimmed);
    CHECK(t.epochs.size() == 49);
    CHECK(t.trial_valid);
  }
  REQUIRE(report.conditions.size() == 2);
  double non_sync = 0.0, visual = 0.0;
  for (const auto& c : report.conditions) {
    CHECK(c.valid_trials == 2);
    CHECK(c.mean_per_band.count("alpha") == 1);
    (c.condition == Condition::visual ? visual : non_sync) = c.mean_pooled;
  }
  CHECK(visual > 1.1 * non_sync);
  CHECK_FALSE(report.all_rejected);

  const auto out = test::temp_dir("an_out");
  write_report(out, report);
  CHECK(std::filesystem::exists(out / "report.json"));
  std::ifstream csv(out / "report.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header ==
        "trial_id,condition,epochs_total,epochs_valid,epochs_invalid,epochs_trimmed,too_short,trial_valid,pooled_ccorr,"
        "score_threshold");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) rows += !line.empty();
  CHECK(rows == 4);
  const auto doc = report_to_json(report);
  CHECK(doc["trials"].size() == 4);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(out);
}

TEST_CASE("causal offline values match the live metric on shared windows") {
  const auto dir = test::temp_dir("an_causal");
  std::filesystem::remove_all(dir);
  EngineConfig cfg;
  cfg.control_port = -1;
  cfg.record_dir = dir.string();
  cfg.start_condition = Condition::visual;
  SynthConfig s;
  s.duration_s = 40.0;
  s.set_coupling(0.6);
  Engine e(cfg);
  e.run_synth(s, std::numeric_limits<double>::infinity());
  const auto live = e.updates();

  AnalysisOptions opt;
  opt.filter.mode = FilterMode::causal;
  opt.threshold_k = 1e9;
  const auto report = analyze(dir, opt);
  REQUIRE(report.trials.size() == 1);
  int compared = 0;
  for (const auto& rec : report.trials[0].epochs) {
    if (rec.index % 3 != 0 || !rec.value) continue;
    const auto m = rec.index / 3;
    REQUIRE(m < live.size());
    REQUIRE(live[m].metric.epoch_start_us == rec.start_us);
    CHECK(std::abs(*rec.value - live[m].metric.value) <= 1e-6);
    ++compared;
  }
  CHECK(compared >= 20);
  std::filesystem::remove_all(dir);
}

TEST_CASE("noisy trials are rejected and reported") {
  const auto dir = test::temp_dir("an_noisy");
  SynthConfig s;
  s.seed = 8;
  s.duration_s = 30.0;
  // Bursts covering most of the trial on one participant.
  for (double t = 2.0; t < 28.0; t += 4.0) s.artifact_schedule.push_back({t, 3.5, Participant::A});
  write_synth_session(dir, s, {{Condition::haptic, 0.5, 30.0}});
  const auto report = analyze(dir);
  REQUIRE(report.trials.size() == 1);
  const auto& t = report.trials[0];
  CHECK_FALSE(t.trial_valid);
  CHECK(t.total == t.valid + t.invalid + t.trimmed);
  CHECK(report.all_rejected);
  CHECK(report.conditions.empty());
  CHECK_FALSE(report.notes.empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("missing stop markers and short trials") {
  Manifest m;
  m.session_id = "short";
  m.streams = default_streams();
  m.trials = {{1, Condition::visual, 0, std::nullopt}, {2, Condition::auditory, 0, 4'000'000}};
  auto frames = test::noise_frames(0, 5.0, 256.0, 1);
  const auto b = test::noise_frames(1, 5.0, 256.0, 2);
  frames.insert(frames.end(), b.begin(), b.end());
  const auto report = analyze_frames(m, frames);
  REQUIRE(report.trials.size() == 2);
  CHECK(report.trials[0].skipped);
  CHECK(report.trials[0].notes.at(0).find("missing stop marker") != std::string::npos);
  CHECK(report.trials[1].too_short);
  CHECK(report.trials[1].total == 3);
  CHECK(report.all_rejected);
  CHECK_THROWS_AS(analyze_frames(m, frames, AnalysisOptions{.threshold_k = -1.0}), ConfigError);
}
