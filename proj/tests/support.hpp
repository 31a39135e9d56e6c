#pragma once

// Independent reference implementations and fixtures for the test suites.
// Nothing here calls into the code under test except where noted.

#include "neuresonance/ibs.hpp"
#include "neuresonance/recording.hpp"
#include "neuresonance/signal.hpp"

#include <complex>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace nr::test {

// O(n^2) DFT straight from the definition.
std::vector<std::complex<double>> naive_dft(std::span<const double> x);

// RMS of x restricted to the DFT bins within [lo, hi] Hz (Parseval).
double band_rms(std::span<const double> x, double fs, double lo, double hi);

// Mean-resultant circular mean, written out separately from the library.
double oracle_circular_mean(std::span<const double> phases);

// Single-pass circular correlation, standard form.
double oracle_ccorr(std::span<const double> a, std::span<const double> b);

// tanh(mean(atanh(top k))) with the same clamp.
double oracle_pool(std::vector<double> values, std::size_t k);

// Batch compute_ibs written independently: fresh direct-form biquads,
// naive-DFT analytic signal, explicit loops.
double oracle_ibs(const EpochWindow& a, const EpochWindow& b, const FilterSpec& spec, std::size_t edge = 32,
                  std::size_t k = 5);

struct DecodedOsc {
  std::string address;
  std::string tags;
  float f{0.0f};
  std::int32_t i{0};
};
// OSC 1.0 parser that knows nothing about the library's encoder.
DecodedOsc oracle_decode_osc(std::span<const std::uint8_t> packet);
// Hand-built OSC image for ("/neuresonance/ibs", ",fi", f, i).
std::vector<std::uint8_t> oracle_encode_osc(float f, std::int32_t i);

double oracle_median(std::vector<double> v);

// EEG frames (14 channels) for one participant, white Gaussian per channel.
std::vector<SampleFrame> noise_frames(std::uint8_t stream_id, double seconds, double fs, std::uint64_t seed,
                                      double sigma = 10.0);

EpochWindow random_epoch(Participant who, std::size_t samples, std::uint64_t seed, double fs = 256.0);

// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

} // namespace nr::test
