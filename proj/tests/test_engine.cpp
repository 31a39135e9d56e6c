#include "neuresonance/control.hpp"
#include "neuresonance/engine.hpp"
#include "neuresonance/error.hpp"
#include "neuresonance/mock_haptic.hpp"
#include "neuresonance/synth.hpp"
#include "neuresonance/wire.hpp"
#include "support.hpp"

#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <cstring>
#include <random>
#include <set>
#include <thread>

using namespace nr;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

constexpr double kBatch = std::numeric_limits<double>::infinity();

EngineConfig quiet() {
  EngineConfig c;
  c.control_port = -1;
  return c;
}

// Participant B equals A during "sync" hops and is independent otherwise.
// Segments are `segment_s` long and alternate starting with sync.
std::vector<SampleFrame> alternating_frames(double seconds, double segment_s, std::uint64_t seed) {
  auto a = test::noise_frames(0, seconds, 256.0, seed);
  auto b = test::noise_frames(1, seconds, 256.0, seed + 1000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto seg = static_cast<std::size_t>(static_cast<double>(a[i].timestamp_us) * 1e-6 / segment_s);
    if (seg % 2 == 0) b[i].channels = a[i].channels;
  }
  std::vector<SampleFrame> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.push_back(a[i]);
    out.push_back(b[i]);
  }
  return out;
}

std::filesystem::path write_frames(const std::string& tag, const std::vector<SampleFrame>& frames) {
  const auto dir = test::temp_dir(tag);
  Manifest m;
  m.session_id = tag;
  m.streams = default_streams();
  write_recording(dir, m, frames);
  return dir;
}

std::vector<IbsUpdate> run_pipeline(Pipeline& p, const std::vector<SampleFrame>& frames) {
  std::vector<IbsUpdate> out;
  for (const auto& f : frames) {
    p.ingest(f);
    for (auto& u : p.process()) out.push_back(u);
  }
  p.close_input();
  for (auto& u : p.process()) out.push_back(u);
  return out;
}

// Minimal RFC 6455 client for the control channel.
class WsClient {
public:
  explicit WsClient(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    const std::string key = "dGhlIHNhbXBsZSBub25jZQ==";
    const std::string req = "GET / HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                            "Sec-WebSocket-Key: " + key + "\r\nSec-WebSocket-Version: 13\r\n\r\n";
    ::send(fd_, req.data(), req.size(), 0);
    std::string head;
    char c;
    while (head.find("\r\n\r\n") == std::string::npos && ::recv(fd_, &c, 1, 0) == 1) head.push_back(c);
    handshake = head;
  }
  ~WsClient() { ::close(fd_); }

  void send_text(const std::string& text) {
    std::vector<std::uint8_t> f{0x81};
    const std::uint8_t mask[4] = {0x12, 0x34, 0x56, 0x78};
    if (text.size() < 126) {
      f.push_back(static_cast<std::uint8_t>(0x80 | text.size()));
    } else {
      f.push_back(0x80 | 126);
      f.push_back(static_cast<std::uint8_t>(text.size() >> 8));
      f.push_back(static_cast<std::uint8_t>(text.size()));
    }
    f.insert(f.end(), mask, mask + 4);
    for (std::size_t i = 0; i < text.size(); ++i) f.push_back(static_cast<std::uint8_t>(text[i]) ^ mask[i % 4]);
    ::send(fd_, f.data(), f.size(), 0);
  }

  // Next text message, or empty on timeout.
  std::optional<json> next(std::chrono::milliseconds timeout = 3000ms) {
    std::uint8_t h[2];
    if (!read_exact(h, 2, timeout)) return std::nullopt;
    std::uint64_t len = h[1] & 0x7F;
    if (len == 126) {
      std::uint8_t e[2];
      read_exact(e, 2, timeout);
      len = (std::uint64_t{e[0]} << 8) | e[1];
    } else if (len == 127) {
      std::uint8_t e[8];
      read_exact(e, 8, timeout);
      len = 0;
      for (auto b : e) len = (len << 8) | b;
    }
    std::string payload(len, '\0');
    read_exact(reinterpret_cast<std::uint8_t*>(payload.data()), len, timeout);
    if ((h[0] & 0x0F) != 1) return next(timeout);
    return json::parse(payload);
  }

  std::optional<json> next_of(const std::string& type, std::chrono::milliseconds timeout = 3000ms) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
      auto m = next(timeout);
      if (!m) return std::nullopt;
      if ((*m)["type"] == type) return m;
    }
    return std::nullopt;
  }

  std::string handshake;

private:
  bool read_exact(std::uint8_t* p, std::size_t n, std::chrono::milliseconds timeout) {
    std::size_t got = 0;
    while (got < n) {
      pollfd pfd{fd_, POLLIN, 0};
      if (::poll(&pfd, 1, static_cast<int>(timeout.count())) <= 0) return false;
      const auto r = ::recv(fd_, p + got, n - got, 0);
      if (r <= 0) return false;
      got += static_cast<std::size_t>(r);
    }
    return true;
  }

  int fd_{-1};
};

} // namespace

TEST_CASE("config json round trip and validation") {
  EngineConfig c;
  c.modality = Modality::visual;
  c.start_condition = Condition::auditory;
  c.bin_edges = {0.1, 0.3, 0.5, 0.7};
  c.filter.order = 2;
  const auto back = engine_config_from_json(engine_config_to_json(c));
  CHECK(engine_config_to_json(back) == engine_config_to_json(c));
  CHECK(back.modality == Modality::visual);
  CHECK(back.start_condition == Condition::auditory);
  CHECK_THROWS_AS(engine_config_from_json({{"no_such_key", 1}}), ConfigError);
  CHECK_THROWS_AS(engine_config_from_json({{"hop_s", 4.0}}), ConfigError);
  CHECK_THROWS_AS(engine_config_from_json({{"tick_ms", 2000}}), ConfigError);
  CHECK_THROWS_AS(engine_config_from_json({{"bin_edges", {0.5, 0.4, 0.6, 0.8}}}), ConfigError);
}

TEST_CASE("60 s synthetic run publishes 39 updates on an exact hop cadence") {
  Engine e(quiet());
  const auto summary = e.run_synth(SynthConfig{}, kBatch);
  const auto ups = e.updates();
  CHECK(ups.size() == 39);
  CHECK(summary.updates == 39);
  CHECK_FALSE(summary.stopped);
  for (std::size_t i = 0; i < ups.size(); ++i) {
    CHECK(ups[i].sequence == i);
    CHECK(ups[i].metric.epoch_start_us == i * 1'500'000);
    CHECK(ups[i].compute_latency_ms >= 0.0);
    // No trial open: neutral level, modality muted.
    CHECK(ups[i].level.value() == 3);
    CHECK(ups[i].modality == Modality::none);
    CHECK_FALSE(ups[i].haptic.has_value());
  }
}

TEST_CASE("latency stats are empty before any update and populated after") {
  Engine e(quiet());
  CHECK_FALSE(e.latency_stats().has_value());
  CHECK(latency_to_json(e.latency_stats())["empty"] == true);
  SynthConfig s;
  s.duration_s = 6.0;
  e.run_synth(s, kBatch);
  const auto stats = e.latency_stats();
  REQUIRE(stats.has_value());
  for (const char* stage : {"filter", "phase", "ccorr", "pool", "ibs", "motion", "gate", "dispatch", "total"}) {
    REQUIRE(stats->count(stage) == 1);
    CHECK(stats->at(stage).count == 3);
    CHECK(stats->at(stage).p50 <= stats->at(stage).p95);
    CHECK(stats->at(stage).p95 <= stats->at(stage).max);
  }
  e.reset_latency();
  CHECK_FALSE(e.latency_stats().has_value());
}

TEST_CASE("motion burst holds the last valid value") {
  SynthConfig s;
  s.duration_s = 30.0;
  s.set_coupling(0.5);
  s.artifact_schedule = {{10.0, 2.0, Participant::A}};
  Engine e(quiet());
  e.run_synth(s, kBatch);
  const auto ups = e.updates();
  std::optional<double> last_valid;
  int held = 0;
  for (const auto& u : ups) {
    const double start = u.metric.epoch_start_us * 1e-6;
    const bool overlaps = start < 12.0 && start + 3.0 > 10.0;
    CHECK(u.metric.held == overlaps);
    if (overlaps) {
      ++held;
      REQUIRE(last_valid.has_value());
      CHECK(u.metric.value == *last_valid);
      CHECK(u.metric.valid);
    } else {
      last_valid = u.metric.value;
    }
  }
  CHECK(held == 3);
}

TEST_CASE("long burst hits the staleness cap") {
  SynthConfig s;
  s.duration_s = 40.0;
  s.artifact_schedule = {{10.0, 20.0, Participant::B}};
  Engine e(quiet());
  e.run_synth(s, kBatch);
  int held = 0;
  int stale = 0;
  for (const auto& u : e.updates()) {
    if (u.metric.held && u.metric.valid) ++held;
    if (!u.metric.valid) {
      ++stale;
      CHECK(held == 5);
      CHECK(u.level.value() == 3);
    }
  }
  CHECK(held == 5);
  CHECK(stale > 0);
}

TEST_CASE("stream gap yields invalid updates and bypasses the gate") {
  auto frames = alternating_frames(15.0, 100.0, 3);
  // Remove 20 samples of participant A around 7 s.
  std::size_t removed = 0;
  std::erase_if(frames, [&](const SampleFrame& f) {
    const bool drop = f.stream_id == 0 && f.timestamp_us >= 7'000'000 && removed < 20;
    removed += drop;
    return drop;
  });
  Pipeline p(quiet());
  const auto ups = run_pipeline(p, frames);
  REQUIRE(ups.size() == 9);
  for (const auto& u : ups) {
    const double start = u.metric.epoch_start_us * 1e-6;
    const bool touches = start < 7.08 && start + 3.0 > 7.0;
    CHECK(u.metric.valid == !touches);
    CHECK_FALSE(u.metric.held);
  }
}

TEST_CASE("stalled stream is abandoned after the queue horizon") {
  auto a = test::noise_frames(0, 5.0, 256.0, 1);
  auto b = test::noise_frames(1, 20.0, 256.0, 2);
  Pipeline p(quiet());
  std::vector<IbsUpdate> ups;
  for (const auto& f : a) p.ingest(f);
  for (const auto& f : b) {
    p.ingest(f);
    for (auto& u : p.process()) ups.push_back(u);
  }
  // Windows at 0 and 1.5 are complete; later ones are invalid once B runs
  // five seconds past their end.
  REQUIRE(ups.size() >= 4);
  CHECK(ups[0].metric.valid);
  CHECK(ups[1].metric.valid);
  CHECK_FALSE(ups[2].metric.valid);
  CHECK_FALSE(ups[3].metric.valid);
}

TEST_CASE("trial protocol and condition routing") {
  Pipeline p(quiet());
  CHECK_FALSE(p.set_condition("Sync").ok);
  CHECK(p.state().condition == Condition::no_feedback);
  CHECK(p.set_condition("Auditory").ok);
  CHECK(p.mark_trial("start").ok);
  const auto blocked = p.set_condition("Visual");
  CHECK_FALSE(blocked.ok);
  CHECK(blocked.error == "conditions change only between trials");
  CHECK(p.state().condition == Condition::auditory);

  const auto frames = alternating_frames(6.0, 100.0, 5);
  const auto ups = run_pipeline(p, frames);
  REQUIRE(ups.size() == 3);
  for (const auto& u : ups) {
    CHECK(u.modality == Modality::auditory);
    CHECK(u.chord.has_value());
    CHECK_FALSE(u.ring.has_value());
    CHECK(u.trial_id == 1);
    CHECK(u.condition == "Auditory");
    CHECK(u.level.value() == 5);
  }
  CHECK(p.mark_trial("stop").ok);
  const auto again = p.mark_trial("stop");
  CHECK(again.ok);
  CHECK_FALSE(again.warning.empty());
  REQUIRE(p.trials().size() == 1);
  CHECK(p.trials()[0].stop_us.has_value());
  CHECK_FALSE(p.mark_trial("pause").ok);
}

TEST_CASE("set_modality overrides until the next condition change") {
  Pipeline p(quiet());
  CHECK(p.set_condition("Visual").ok);
  CHECK(p.set_modality("haptic").ok);
  CHECK_FALSE(p.set_modality("smell").ok);
  CHECK(p.mark_trial("start").ok);
  CHECK(p.active_modality() == Modality::haptic);
  p.mark_trial("stop");
  CHECK(p.active_modality() == Modality::none);
  p.set_condition("Visual");
  p.mark_trial("start");
  CHECK(p.active_modality() == Modality::visual);
}

TEST_CASE("engine commands acknowledge and report state") {
  Engine e(quiet());
  auto ack = e.command({{"type", "set_condition"}, {"label", "Haptic"}});
  CHECK(ack["ok"] == true);
  CHECK(ack["state"]["condition"] == "Haptic");
  ack = e.command({{"type", "set_condition"}, {"label", "Bogus"}});
  CHECK(ack["ok"] == false);
  CHECK(ack["state"]["condition"] == "Haptic");
  ack = e.command({{"type", "mark_trial"}, {"action", "start"}});
  CHECK(ack["ok"] == true);
  CHECK(ack["state"]["trial_open"] == true);
  CHECK(e.command({{"type", "set_condition"}, {"label", "Visual"}})["ok"] == false);
  CHECK(e.command({{"type", "set_synth_coupling"}, {"kappa", 0.5}})["ok"] == false);
  CHECK(e.command({{"type", "nope"}})["ok"] == false);
  CHECK(e.command({{"type", "mark_trial"}})["ok"] == false);
}

TEST_CASE("record then replay reproduces the update sequence") {
  const auto dir = test::temp_dir("det");
  std::filesystem::remove_all(dir);
  EngineConfig cfg = quiet();
  cfg.record_dir = dir.string();
  cfg.start_condition = Condition::visual;
  SynthConfig s;
  s.duration_s = 20.0;
  s.set_coupling(0.6);
  s.artifact_schedule = {{8.0, 1.0, Participant::B}};
  Engine live(cfg);
  live.run_synth(s, kBatch);

  const auto manifest = read_manifest(dir);
  REQUIRE(manifest.trials.size() == 1);
  CHECK(manifest.trials[0].condition == Condition::visual);
  CHECK(manifest.trials[0].stop_us.has_value());

  EngineConfig rcfg = quiet();
  rcfg.start_condition = Condition::visual;
  Engine r1(rcfg), r2(rcfg);
  r1.run_replay(dir, kBatch);
  r2.run_replay(dir, kBatch);
  const auto a = live.updates(), b = r1.updates(), c = r2.updates();
  REQUIRE(a.size() == b.size());
  REQUIRE(b.size() == c.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].same_content(b[i]));
    CHECK(b[i].same_content(c[i]));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("modality none sends no haptic requests while OSC flows") {
  MockHapticServer mock;
  EngineConfig cfg = quiet();
  cfg.haptic_url = mock.url();
  const int udp = ::socket(AF_INET, SOCK_DGRAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  socklen_t len = sizeof(addr);
  REQUIRE(::bind(udp, reinterpret_cast<sockaddr*>(&addr), len) == 0);
  ::getsockname(udp, reinterpret_cast<sockaddr*>(&addr), &len);
  cfg.osc_port = ntohs(addr.sin_port);
  cfg.start_condition = Condition::no_feedback;
  Engine e(cfg);
  SynthConfig s;
  s.duration_s = 10.0;
  e.run_synth(s, kBatch);
  CHECK(e.updates().size() == 5);
  CHECK(e.osc_sent() == 5);
  std::this_thread::sleep_for(100ms);
  CHECK(mock.requests().empty());
  std::uint8_t buf[64];
  int packets = 0;
  pollfd pfd{udp, POLLIN, 0};
  while (::poll(&pfd, 1, 100) > 0 && ::recv(udp, buf, sizeof(buf), 0) == 32) ++packets;
  CHECK(packets == 5);
  ::close(udp);
}

TEST_CASE("haptic dispatch follows the level trace, change-only") {
  MockHapticServer mock;
  EngineConfig cfg = quiet();
  cfg.haptic_url = mock.url();
  cfg.start_condition = Condition::haptic;
  const auto dir = write_frames("haptic", alternating_frames(30.0, 6.0, 9));
  Engine e(cfg);
  e.run_replay(dir, 10.0);
  std::this_thread::sleep_for(300ms);
  std::vector<int> expected;
  std::set<int> levels;
  for (const auto& u : e.updates()) {
    REQUIRE(u.haptic.has_value());
    levels.insert(u.level.value());
    if (expected.empty() || expected.back() != u.haptic->bpm) expected.push_back(u.haptic->bpm);
  }
  CHECK(levels.count(5) == 1);
  CHECK(levels.count(1) == 1);
  std::vector<int> got;
  for (const auto& r : mock.accepted()) got.push_back(r.bpm);
  CHECK(got == expected);
  CHECK(e.haptic_failures() == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("a 500 ms haptic delay leaves the update cadence unchanged") {
  MockHapticServer mock;
  mock.set_delay(500ms);
  EngineConfig cfg = quiet();
  cfg.haptic_url = mock.url();
  cfg.haptic_timeout_ms = 2000;
  cfg.start_condition = Condition::haptic;
  const auto dir = write_frames("slow", alternating_frames(24.0, 3.0, 11));
  Engine e(cfg);
  std::vector<std::chrono::steady_clock::time_point> stamps;
  e.on_update([&](const IbsUpdate&) { stamps.push_back(std::chrono::steady_clock::now()); });
  // 4x: one hop every 375 ms of wall time, shorter than the device delay.
  e.run_replay(dir, 4.0);
  REQUIRE(stamps.size() >= 10);
  for (std::size_t i = 2; i + 1 < stamps.size(); ++i) {
    const double gap = std::chrono::duration<double, std::milli>(stamps[i + 1] - stamps[i]).count();
    CHECK(gap < 375.0 + 150.0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("control channel handshake, greeting, commands and broadcasts") {
  CHECK(websocket_accept_key("dGhlIHNhbXBsZSBub25jZQ==") == "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
  EngineConfig cfg = quiet();
  cfg.control_port = 0;
  Engine e(cfg);
  REQUIRE(e.control_port() > 0);
  WsClient ws(e.control_port());
  CHECK(ws.handshake.find("101") != std::string::npos);
  CHECK(ws.handshake.find("s3pPLMBiTxaQ9kYGzzhZRbK+xOo=") != std::string::npos);
  const auto hello = ws.next_of("state");
  REQUIRE(hello.has_value());

  ws.send_text(R"({"type":"set_condition","label":"Visual"})");
  auto ack = ws.next_of("ack");
  REQUIRE(ack.has_value());
  CHECK((*ack)["ok"] == true);
  CHECK((*ack)["state"]["condition"] == "Visual");

  ws.send_text("not json");
  ack = ws.next_of("ack");
  REQUIRE(ack.has_value());
  CHECK((*ack)["ok"] == false);

  std::thread runner([&] {
    SynthConfig s;
    s.duration_s = 6.0;
    e.run_synth(s, 4.0);
  });
  ws.send_text(R"({"type":"set_synth_coupling","kappa":0.9})");
  const auto update = ws.next_of("update", 5000ms);
  REQUIRE(update.has_value());
  CHECK((*update)["metric"].contains("value"));
  runner.join();
}

TEST_CASE("synthetic coupling what-if through commands") {
  EngineConfig cfg = quiet();
  Engine e(cfg);
  std::thread runner([&] {
    SynthConfig s;
    s.duration_s = 8.0;
    e.run_synth(s, 8.0);
  });
  std::this_thread::sleep_for(200ms);
  const auto ack = e.command({{"type", "set_synth_coupling"}, {"kappa", 1.0}});
  CHECK(ack["ok"] == true);
  CHECK(e.command({{"type", "set_synth_coupling"}, {"kappa", 2.0}})["ok"] == false);
  runner.join();
  CHECK(e.updates().size() == 4);
}

TEST_CASE("live TCP ingest and clean stop") {
  Engine e(quiet());
  std::thread runner([&] { e.run_live(0); });
  for (int i = 0; i < 200 && e.live_port() == 0; ++i) std::this_thread::sleep_for(10ms);
  REQUIRE(e.live_port() > 0);

  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(e.live_port()));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
  std::vector<std::uint8_t> bytes{0xde, 0xad};
  for (const auto& f : alternating_frames(4.6, 100.0, 21)) append_frame(bytes, f);
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const auto n = ::send(fd, bytes.data() + sent, std::min<std::size_t>(4096, bytes.size() - sent), 0);
    REQUIRE(n > 0);
    sent += static_cast<std::size_t>(n);
  }
  for (int i = 0; i < 300 && e.updates().size() < 2; ++i) std::this_thread::sleep_for(10ms);
  e.stop();
  runner.join();
  ::close(fd);
  const auto ups = e.updates();
  REQUIRE(ups.size() == 2);
  CHECK(ups[0].metric.valid);
  CHECK(ups[0].metric.value > 0.99);
}

TEST_CASE("pipeline survives a million fuzzed wire frames") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<int> mode(0, 4);
  std::uniform_int_distribution<int> id(0, 3);
  FrameDecoder decoder;
  Pipeline p(quiet());
  std::uint64_t t = 0;
  std::size_t updates = 0;
  for (int i = 0; i < 1'000'000; ++i) {
    SampleFrame f;
    f.stream_id = static_cast<std::uint8_t>(id(rng));
    t += static_cast<std::uint64_t>(byte(rng)) * 40;
    f.timestamp_us = t;
    f.channels.assign(*expected_channels(f.stream_id), static_cast<float>(byte(rng) - 128));
    auto b = encode_frame(f);
    switch (mode(rng)) {
      case 0: b[static_cast<std::size_t>(byte(rng)) % b.size()] ^= static_cast<std::uint8_t>(byte(rng)); break;
      case 1: b.resize(static_cast<std::size_t>(byte(rng)) % b.size()); break;
      case 2:
        for (int k = 12; k + 3 < static_cast<int>(b.size()); k += 4) {
          float v = (k % 3) ? std::numeric_limits<float>::quiet_NaN() : 1e30f;
          std::memcpy(b.data() + k, &v, 4);
        }
        break;
      default: break;
    }
    decoder.feed(b);
    while (auto g = decoder.next()) p.ingest(*g);
    if (i % 1000 == 0) {
      for (const auto& u : p.process()) {
        ++updates;
        CHECK((!u.metric.valid || std::isfinite(u.metric.value)));
      }
    }
  }
  p.close_input();
  updates += p.process().size();
  CHECK(decoder.decoded() > 0);
  CHECK(p.rejected_frames() > 0);
  MESSAGE("updates under fuzz: " << updates);
}
