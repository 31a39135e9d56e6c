#pragma once

#include "neuresonance/signal.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace nr {

// |r| is clamped to this before the Fisher transform so identical channels
// pool to a finite value.
inline constexpr double kFisherClamp = 1.0 - 1e-7;
inline constexpr std::size_t kDefaultTopK = 5;

struct IbsMetric {
  double value{0.0};
  std::uint64_t epoch_start_us{0};
  bool valid{false};
  bool held{false};

  bool operator==(const IbsMetric&) const = default;
};

enum class CcorrForm {
  standard, // sum of products over sqrt of the product of sums
  printed,  // literal single-sum denominator without the root; comparison only
};

// Argument of the mean resultant vector, in (-pi, pi]. Throws InputError on an
// empty series and DegenerateError when the resultant length is <= 1e-12.
double circular_mean(std::span<const double> phases);

// Circular correlation of two equal-length phase series. Throws InputError on
// length mismatch or fewer than 64 samples, DegenerateError on a zero
// denominator.
double ccorr(std::span<const double> phase_a, std::span<const double> phase_b,
             CcorrForm form = CcorrForm::standard);

double fisher_z(double r);
double inverse_fisher_z(double z);

// Fisher-z average of the k largest values. Ties keep index order.
// Throws Error(insufficient_channels) when fewer than k values are given.
double pool_top_k(std::span<const double> correlations, std::size_t k = kDefaultTopK);

// One circular correlation per homologous channel pair; nullopt marks a pair
// dropped as degenerate.
using ChannelCorrelations = std::vector<std::optional<double>>;

struct IbsOptions {
  FilterSpec filter{};
  std::optional<Band> band{}; // per-band phase mode; broadband when empty
  std::size_t top_k{kDefaultTopK};
  std::size_t edge_samples{kPhaseEdgeSamples};
  CcorrForm form{CcorrForm::standard};
};

// Wall time spent in each stage of compute_ibs, milliseconds.
struct IbsStageTimes {
  double filter_ms{0.0};
  double phase_ms{0.0};
  double ccorr_ms{0.0};
  double pool_ms{0.0};
};

ChannelCorrelations channel_correlations(const EpochWindow& a, const EpochWindow& b,
                                         const IbsOptions& options, IbsStageTimes* times = nullptr);

// filter -> phase -> homologous ccorr -> top-k pooling. Pairs that turn out
// degenerate are dropped; fewer than top_k surviving pairs yields valid=false.
IbsMetric compute_ibs(const EpochWindow& a, const EpochWindow& b, const IbsOptions& options,
                      IbsStageTimes* times = nullptr);

inline IbsMetric compute_ibs(const EpochWindow& a, const EpochWindow& b, const FilterSpec& spec) {
  IbsOptions options;
  options.filter = spec;
  return compute_ibs(a, b, options);
}

} // namespace nr
