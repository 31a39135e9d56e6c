#include "neuresonance/ibs.hpp"

#include "neuresonance/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

namespace nr {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

double mean_angle(std::span<const double> phases) {
  double s = 0.0;
  double c = 0.0;
  for (double p : phases) {
    s += std::sin(p);
    c += std::cos(p);
  }
  return std::atan2(s, c);
}

} // namespace

double circular_mean(std::span<const double> phases) {
  if (phases.empty()) throw InputError("circular mean of an empty series");
  double s = 0.0;
  double c = 0.0;
  for (double p : phases) {
    s += std::sin(p);
    c += std::cos(p);
  }
  const double n = static_cast<double>(phases.size());
  if (std::hypot(s / n, c / n) <= 1e-12) {
    throw DegenerateError("circular mean undefined: zero resultant length");
  }
  return wrap_phase(std::atan2(s, c));
}

double ccorr(std::span<const double> phase_a, std::span<const double> phase_b, CcorrForm form) {
  if (phase_a.size() != phase_b.size()) {
    throw InputError("ccorr series differ in length (" + std::to_string(phase_a.size()) + " vs " +
                     std::to_string(phase_b.size()) + ")");
  }
  if (phase_a.size() < 64) throw InputError("ccorr needs at least 64 samples");

  const double mean_a = mean_angle(phase_a);
  const double mean_b = mean_angle(phase_b);
  double num = 0.0;
  double sum_aa = 0.0;
  double sum_bb = 0.0;
  double sum_prod_sq = 0.0;
  for (std::size_t i = 0; i < phase_a.size(); ++i) {
    const double sa = std::sin(phase_a[i] - mean_a);
    const double sb = std::sin(phase_b[i] - mean_b);
    num += sa * sb;
    sum_aa += sa * sa;
    sum_bb += sb * sb;
    sum_prod_sq += sa * sa * sb * sb;
  }
  const double den = form == CcorrForm::standard ? std::sqrt(sum_aa * sum_bb) : sum_prod_sq;
  if (!(den > 1e-300) || sum_aa <= 1e-24 || sum_bb <= 1e-24) {
    throw DegenerateError("ccorr denominator is zero (constant phase series)");
  }
  const double r = num / den;
  return form == CcorrForm::standard ? std::clamp(r, -1.0, 1.0) : r;
}

double fisher_z(double r) {
  const double c = std::clamp(r, -kFisherClamp, kFisherClamp);
  return 0.5 * std::log((1.0 + c) / (1.0 - c));
}

double inverse_fisher_z(double z) { return std::tanh(z); }

double pool_top_k(std::span<const double> correlations, std::size_t k) {
  if (k == 0) throw ConfigError("top-k must be >= 1");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < correlations.size(); ++i) {
    if (std::isfinite(correlations[i])) order.push_back(i);
  }
  if (order.size() < k) {
    throw Error(ErrorCode::insufficient_channels,
                "pooling needs " + std::to_string(k) + " finite correlations, got " +
                    std::to_string(order.size()));
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return correlations[l] > correlations[r]; });
  double z_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) z_sum += fisher_z(correlations[order[i]]);
  return inverse_fisher_z(z_sum / static_cast<double>(k));
}

ChannelCorrelations channel_correlations(const EpochWindow& a, const EpochWindow& b,
                                         const IbsOptions& options, IbsStageTimes* times) {
  if (a.data.channels() != b.data.channels() || a.data.samples() != b.data.samples()) {
    throw InputError("epoch shapes differ");
  }
  if (a.sample_rate != b.sample_rate) throw InputError("epoch sample rates differ");
  const double period_us = 1e6 / a.sample_rate;
  const auto skew = a.start_timestamp_us > b.start_timestamp_us
                        ? a.start_timestamp_us - b.start_timestamp_us
                        : b.start_timestamp_us - a.start_timestamp_us;
  if (static_cast<double>(skew) >= period_us) {
    throw InputError("epochs misaligned by " + std::to_string(skew) + " us");
  }
  const std::size_t n = a.data.samples();
  if (n < 2 * options.edge_samples + 64) {
    throw InputError("epoch too short for edge trimming and phase statistics");
  }

  const FilterSpec filter = options.band ? options.filter.for_band(*options.band) : options.filter;
  const std::size_t channels = a.data.channels();
  ChannelCorrelations out(channels);
  IbsStageTimes local;

  for (std::size_t c = 0; c < channels; ++c) {
    auto t0 = Clock::now();
    const auto fa = apply_bandpass(filter, a.data.channel(c), a.sample_rate);
    const auto fb = apply_bandpass(filter, b.data.channel(c), b.sample_rate);
    local.filter_ms += elapsed_ms(t0);

    t0 = Clock::now();
    std::vector<double> pa;
    std::vector<double> pb;
    try {
      pa = instantaneous_phase(fa);
      pb = instantaneous_phase(fb);
    } catch (const DegenerateError&) {
      local.phase_ms += elapsed_ms(t0);
      continue;
    }
    local.phase_ms += elapsed_ms(t0);

    t0 = Clock::now();
    const std::size_t e = options.edge_samples;
    const std::span<const double> ia(pa.data() + e, n - 2 * e);
    const std::span<const double> ib(pb.data() + e, n - 2 * e);
    try {
      const double r = ccorr(ia, ib, options.form);
      if (std::isfinite(r)) out[c] = r;
    } catch (const DegenerateError&) {
    }
    local.ccorr_ms += elapsed_ms(t0);
  }
  if (times) {
    times->filter_ms += local.filter_ms;
    times->phase_ms += local.phase_ms;
    times->ccorr_ms += local.ccorr_ms;
  }
  return out;
}

IbsMetric compute_ibs(const EpochWindow& a, const EpochWindow& b, const IbsOptions& options,
                      IbsStageTimes* times) {
  const auto correlations = channel_correlations(a, b, options, times);
  const auto t0 = Clock::now();
  std::vector<double> kept;
  for (const auto& r : correlations) {
    if (r) kept.push_back(*r);
  }
  IbsMetric metric;
  metric.epoch_start_us = a.start_timestamp_us;
  if (kept.size() >= options.top_k) {
    metric.value = pool_top_k(kept, options.top_k);
    metric.valid = true;
  }
  if (times) times->pool_ms += elapsed_ms(t0);
  return metric;
}

} // namespace nr
