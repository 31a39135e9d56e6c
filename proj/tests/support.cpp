#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <cstring>
#include <stdexcept>

namespace nr::test {

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x, bool inverse) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = sign * 2.0 * kPi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    out[k] = inverse ? acc / static_cast<double>(n) : acc;
  }
  return out;
}

// Second-order section y = g*(x[n] - x[n-2]) - a1*y[n-1] - a2*y[n-2].
struct Section {
  double g{1.0};
  double a1{0.0};
  double a2{0.0};
};

std::vector<Section> oracle_design(const FilterSpec& spec, double fs) {
  const int n = spec.order;
  const double t = 1.0 / fs;
  // Analog band edges after prewarping.
  const double lo = (2.0 / t) * std::tan(kPi * spec.low_cut_hz * t);
  const double hi = (2.0 / t) * std::tan(kPi * spec.high_cut_hz * t);
  const double center_sq = lo * hi;
  const double width = hi - lo;

  std::vector<std::complex<double>> poles;
  for (int k = 1; k <= n; ++k) {
    // Left-half-plane Butterworth prototype pole.
    const double angle = kPi / 2.0 + kPi * (2.0 * k - 1.0) / (2.0 * n);
    const std::complex<double> p(std::cos(angle), std::sin(angle));
    // Roots of s^2 - p*width*s + center^2 = 0.
    const std::complex<double> b = -p * width;
    const std::complex<double> root = std::sqrt(b * b - 4.0 * center_sq);
    for (const auto s : {(-b + root) / 2.0, (-b - root) / 2.0}) {
      poles.push_back((1.0 + s * t / 2.0) / (1.0 - s * t / 2.0));
    }
  }
  // Pair each pole with its conjugate (or another real pole).
  std::vector<Section> sections;
  std::vector<bool> used(poles.size(), false);
  for (std::size_t i = 0; i < poles.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    std::size_t best = poles.size();
    double best_d = 1e300;
    for (std::size_t j = 0; j < poles.size(); ++j) {
      if (used[j]) continue;
      const double d = std::abs(poles[j] - std::conj(poles[i]));
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    used[best] = true;
    const auto p1 = poles[i];
    const auto p2 = poles[best];
    sections.push_back({1.0, -(p1 + p2).real(), (p1 * p2).real()});
  }
  // Unity gain at the digital image of the analog center.
  const double fc = std::atan(std::sqrt(center_sq) * t / 2.0) / (kPi * t);
  const std::complex<double> z = std::polar(1.0, 2.0 * kPi * fc * t);
  std::complex<double> h{1.0, 0.0};
  for (const auto& s : sections) {
    const auto zi = 1.0 / z;
    h *= (1.0 - zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
  }
  sections.front().g = 1.0 / std::abs(h);
  return sections;
}

// Direct form I, first section primed as if x[0] had been present forever.
std::vector<double> oracle_filter(const std::vector<Section>& sections, std::span<const double> x) {
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t si = 0; si < sections.size(); ++si) {
    const auto& s = sections[si];
    const double x0 = cur.empty() ? 0.0 : cur[0];
    double x1 = si == 0 ? x0 : 0.0;
    double x2 = x1;
    double y1 = 0.0;
    double y2 = 0.0;
    std::vector<double> out(cur.size());
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const double y = s.g * (cur[i] - x2) - s.a1 * y1 - s.a2 * y2;
      x2 = x1;
      x1 = cur[i];
      y2 = y1;
      y1 = y;
      out[i] = y;
    }
    cur = std::move(out);
  }
  return cur;
}

std::vector<double> oracle_phase(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = x[i];
  auto spec = dft(buf, false);
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n) spec[k] *= 2.0;
    else if (2 * k > n) spec[k] = 0.0;
  }
  const auto analytic = dft(spec, true);
  std::vector<double> phase(n);
  for (std::size_t i = 0; i < n; ++i) {
    double p = std::atan2(analytic[i].imag(), analytic[i].real());
    if (p <= -kPi) p += 2.0 * kPi;
    phase[i] = p;
  }
  return phase;
}

} // namespace

std::vector<std::complex<double>> naive_dft(std::span<const double> x) {
  std::vector<std::complex<double>> buf(x.begin(), x.end());
  return dft(buf, false);
}

double band_rms(std::span<const double> x, double fs, double lo, double hi) {
  const auto spec = naive_dft(x);
  const std::size_t n = x.size();
  double energy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(std::min(k, n - k)) * fs / static_cast<double>(n);
    if (f >= lo && f <= hi) energy += std::norm(spec[k]);
  }
  return std::sqrt(energy / static_cast<double>(n * n));
}

double oracle_circular_mean(std::span<const double> phases) {
  double s = 0.0;
  double c = 0.0;
  for (double p : phases) {
    s += std::sin(p);
    c += std::cos(p);
  }
  return std::atan2(s, c);
}

double oracle_ccorr(std::span<const double> a, std::span<const double> b) {
  const double ma = oracle_circular_mean(a);
  const double mb = oracle_circular_mean(b);
  double num = 0.0;
  double da = 0.0;
  double db = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double sa = std::sin(a[i] - ma);
    const double sb = std::sin(b[i] - mb);
    num += sa * sb;
    da += sa * sa;
    db += sb * sb;
  }
  return num / std::sqrt(da * db);
}

double oracle_pool(std::vector<double> values, std::size_t k) {
  std::sort(values.begin(), values.end(), std::greater<>());
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double r = std::clamp(values[i], -(1.0 - 1e-7), 1.0 - 1e-7);
    acc += std::atanh(r);
  }
  return std::tanh(acc / static_cast<double>(k));
}

double oracle_ibs(const EpochWindow& a, const EpochWindow& b, const FilterSpec& spec, std::size_t edge,
                  std::size_t k) {
  const auto sections = oracle_design(spec, a.sample_rate);
  std::vector<double> r;
  for (std::size_t c = 0; c < a.data.channels(); ++c) {
    const auto fa = oracle_filter(sections, a.data.channel(c));
    const auto fb = oracle_filter(sections, b.data.channel(c));
    const auto pa = oracle_phase(fa);
    const auto pb = oracle_phase(fb);
    const std::span<const double> ia(pa.data() + edge, pa.size() - 2 * edge);
    const std::span<const double> ib(pb.data() + edge, pb.size() - 2 * edge);
    r.push_back(std::clamp(oracle_ccorr(ia, ib), -1.0, 1.0));
  }
  return oracle_pool(r, k);
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> p, std::size_t at) {
  return (std::uint32_t{p[at]} << 24) | (std::uint32_t{p[at + 1]} << 16) | (std::uint32_t{p[at + 2]} << 8) |
         std::uint32_t{p[at + 3]};
}

std::string read_padded(std::span<const std::uint8_t> p, std::size_t& at) {
  std::string s;
  while (at < p.size() && p[at] != 0) s.push_back(static_cast<char>(p[at++]));
  if (at >= p.size()) throw std::runtime_error("unterminated OSC string");
  at = (at + 4) & ~std::size_t{3};
  return s;
}

} // namespace

DecodedOsc oracle_decode_osc(std::span<const std::uint8_t> packet) {
  if (packet.size() % 4 != 0) throw std::runtime_error("OSC packet not 4-byte aligned");
  DecodedOsc out;
  std::size_t at = 0;
  out.address = read_padded(packet, at);
  out.tags = read_padded(packet, at);
  for (char t : out.tags.substr(1)) {
    if (at + 4 > packet.size()) throw std::runtime_error("OSC argument truncated");
    const auto bits = read_be32(packet, at);
    at += 4;
    if (t == 'f') std::memcpy(&out.f, &bits, 4);
    else if (t == 'i') out.i = static_cast<std::int32_t>(bits);
    else throw std::runtime_error("unexpected OSC tag");
  }
  return out;
}

std::vector<std::uint8_t> oracle_encode_osc(float f, std::int32_t i) {
  std::vector<std::uint8_t> out;
  const std::string address = "/neuresonance/ibs";
  out.insert(out.end(), address.begin(), address.end());
  do out.push_back(0); while (out.size() % 4 != 0);
  for (char c : std::string(",fi")) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(0);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(bits >> shift));
  const auto ui = static_cast<std::uint32_t>(i);
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(ui >> shift));
  return out;
}

double oracle_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

std::vector<SampleFrame> noise_frames(std::uint8_t stream_id, double seconds, double fs, std::uint64_t seed,
                                      double sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  std::vector<SampleFrame> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].stream_id = stream_id;
    out[i].timestamp_us = static_cast<std::uint64_t>(std::llround(static_cast<double>(i) * 1e6 / fs));
    out[i].channels.resize(kEegChannels);
    for (auto& c : out[i].channels) c = static_cast<float>(g(rng));
  }
  return out;
}

EpochWindow random_epoch(Participant who, std::size_t samples, std::uint64_t seed, double fs) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 10.0);
  EpochWindow w;
  w.participant = who;
  w.sample_rate = fs;
  w.data = ChannelMatrix(kEegChannels, samples);
  for (std::size_t c = 0; c < kEegChannels; ++c) {
    for (std::size_t s = 0; s < samples; ++s) w.data.at(c, s) = g(rng);
  }
  return w;
}

std::filesystem::path temp_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  std::random_device rd;
  auto dir = std::filesystem::temp_directory_path() /
             ("nr-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace nr::test
