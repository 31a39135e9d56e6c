#include "neuresonance/engine.hpp"

#include "neuresonance/control.hpp"
#include "neuresonance/dispatch.hpp"
#include "neuresonance/error.hpp"
#include "neuresonance/log.hpp"
#include "neuresonance/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <limits>
#include <thread>

namespace nr {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// Per-stream bounded FIFO. When a stream overflows its oldest frames are
// dropped; the resulting timestamp hole is caught by the gap rule downstream.
class FrameQueue {
public:
  explicit FrameQueue(const EngineConfig& config) {
    const auto eeg = static_cast<std::size_t>(config.queue_seconds * config.sample_rate);
    const auto motion = static_cast<std::size_t>(config.queue_seconds * config.motion_rate);
    capacity_ = {eeg, eeg, motion, motion};
  }

  void push(SampleFrame frame) {
    std::lock_guard lock(mutex_);
    if (frame.stream_id >= queues_.size()) {
      ++dropped_;
      return;
    }
    const auto id = frame.stream_id;
    auto& q = queues_[id];
    q.push_back(std::move(frame));
    while (q.size() > capacity_[id]) {
      q.pop_front();
      ++dropped_;
    }
  }

  // Removes everything queued, merged by (timestamp, stream id).
  std::vector<SampleFrame> drain() {
    std::vector<SampleFrame> out;
    {
      std::lock_guard lock(mutex_);
      for (auto& q : queues_) {
        out.insert(out.end(), std::make_move_iterator(q.begin()), std::make_move_iterator(q.end()));
        q.clear();
      }
    }
    std::stable_sort(out.begin(), out.end(), [](const SampleFrame& l, const SampleFrame& r) {
      return l.timestamp_us != r.timestamp_us ? l.timestamp_us < r.timestamp_us : l.stream_id < r.stream_id;
    });
    return out;
  }

  bool empty() const {
    std::lock_guard lock(mutex_);
    for (const auto& q : queues_) {
      if (!q.empty()) return false;
    }
    return true;
  }

  std::uint64_t dropped() const {
    std::lock_guard lock(mutex_);
    return dropped_;
  }

private:
  mutable std::mutex mutex_;
  std::array<std::deque<SampleFrame>, 4> queues_;
  std::array<std::size_t, 4> capacity_{};
  std::uint64_t dropped_{0};
};

// Writes frames on its own thread.
class AsyncRecorder {
public:
  AsyncRecorder(const std::filesystem::path& dir, Manifest manifest)
      : writer_(dir, std::move(manifest)), thread_([this] { loop(); }) {}

  ~AsyncRecorder() { close({}); }

  void push(const SampleFrame& frame) {
    {
      std::lock_guard lock(mutex_);
      pending_.push_back(frame);
    }
    cv_.notify_one();
  }

  void set_trials(std::vector<TrialMarker> trials) {
    std::lock_guard lock(mutex_);
    trials_ = std::move(trials);
    trials_dirty_ = true;
    cv_.notify_one();
  }

  void close(std::optional<std::vector<TrialMarker>> trials) {
    {
      std::lock_guard lock(mutex_);
      if (closed_) return;
      if (trials) {
        trials_ = std::move(*trials);
        trials_dirty_ = true;
      }
      closing_ = true;
    }
    cv_.notify_one();
    thread_.join();
    writer_.manifest().trials = trials_;
    writer_.close();
    closed_ = true;
  }

private:
  void loop() {
    std::unique_lock lock(mutex_);
    for (;;) {
      cv_.wait(lock, [this] { return closing_ || !pending_.empty() || trials_dirty_; });
      std::deque<SampleFrame> batch;
      batch.swap(pending_);
      const bool dirty = std::exchange(trials_dirty_, false);
      auto trials = trials_;
      const bool done = closing_;
      lock.unlock();
      for (const auto& f : batch) writer_.append(f);
      if (dirty) {
        writer_.manifest().trials = std::move(trials);
        writer_.write_manifest();
      }
      lock.lock();
      if (done && pending_.empty()) return;
    }
  }

  RecordingWriter writer_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<SampleFrame> pending_;
  std::vector<TrialMarker> trials_;
  bool trials_dirty_{false};
  bool closing_{false};
  bool closed_{false};
  std::thread thread_;
};

json trial_json(const TrialMarker& t) {
  return {{"trial_id", t.trial_id},
          {"condition", std::string(condition_label(t.condition))},
          {"start_us", t.start_us},
          {"stop_us", t.stop_us ? json(*t.stop_us) : json(nullptr)}};
}

} // namespace

struct Engine::Impl {
  explicit Impl(EngineConfig cfg) : config(cfg), pipeline(cfg), queue(cfg) {}

  EngineConfig config;
  mutable std::mutex pipeline_mutex;
  Pipeline pipeline;
  FrameQueue queue;

  std::unique_ptr<OscSender> osc;
  std::unique_ptr<HapticDispatcher> haptic;
  std::unique_ptr<ControlServer> control;
  std::unique_ptr<AsyncRecorder> recorder;

  mutable std::mutex updates_mutex;
  std::vector<IbsUpdate> updates;
  std::function<void(const IbsUpdate&)> callback;

  std::mutex synth_mutex;
  SynthSource* synth{nullptr};

  std::atomic<bool> stop{false};
  std::uint64_t frames{0};
  std::uint64_t published_at_start{0};

  json state_json_locked() const {
    const auto& st = pipeline.state();
    json doc;
    doc["condition"] = std::string(condition_label(st.condition));
    doc["trial_id"] = st.trial_id ? json(*st.trial_id) : json(nullptr);
    doc["trial_open"] = st.trial_id.has_value();
    doc["modality"] = std::string(modality_name(pipeline.active_modality()));
    doc["consecutive_holds"] = st.consecutive_holds;
    doc["stream_time_us"] = pipeline.stream_time_us();
    doc["trials"] = json::array();
    for (const auto& t : pipeline.trials()) doc["trials"].push_back(trial_json(t));
    return doc;
  }

  void ingest(const SampleFrame& f) {
    pipeline.ingest(f);
    if (recorder) recorder->push(f);
    ++frames;
  }

  void publish(const IbsUpdate& u) {
    const auto t0 = Clock::now();
    if (osc) {
      const float value = u.metric.valid && std::isfinite(u.metric.value) ? static_cast<float>(u.metric.value) : 0.0f;
      osc->send(encode_osc(value, u.level.value()));
    }
    if (haptic && u.haptic) haptic->submit(*u.haptic);
    pipeline.latency().record(
        "dispatch", std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    {
      std::lock_guard lock(updates_mutex);
      updates.push_back(u);
    }
    if (control) control->broadcast(update_to_json(u));
    if (callback) callback(u);
  }

  void process_and_publish() {
    std::vector<IbsUpdate> out;
    {
      std::lock_guard lock(pipeline_mutex);
      out = pipeline.process();
    }
    for (const auto& u : out) publish(u);
  }

  void heartbeat() {
    if (!control) return;
    json msg;
    {
      std::lock_guard lock(pipeline_mutex);
      msg = {{"type", "tick"}, {"state", state_json_locked()}};
    }
    control->broadcast(msg);
  }

  void drain_queue() {
    auto frames_in = queue.drain();
    std::lock_guard lock(pipeline_mutex);
    for (const auto& f : frames_in) ingest(f);
  }

  // Tick loop for paced sources; `producer_done` reports end of input.
  void tick_loop(const std::function<bool()>& producer_done) {
    auto next = Clock::now();
    const auto tick = std::chrono::milliseconds(config.tick_ms);
    for (;;) {
      next += tick;
      drain_queue();
      process_and_publish();
      heartbeat();
      if (stop.load()) break;
      if (producer_done() && queue.empty()) {
        drain_queue();
        process_and_publish();
        break;
      }
      std::this_thread::sleep_until(next);
    }
  }

  void begin_run(const Manifest& base) {
    stop = false;
    frames = 0;
    if (!config.record_dir.empty()) {
      Manifest m = base;
      recorder = std::make_unique<AsyncRecorder>(config.record_dir, std::move(m));
    }
  }

  void end_run() {
    {
      std::lock_guard lock(pipeline_mutex);
      pipeline.close_input();
    }
    process_and_publish();
    std::vector<TrialMarker> trials;
    {
      std::lock_guard lock(pipeline_mutex);
      if (pipeline.state().trial_id) pipeline.mark_trial("stop");
      trials = pipeline.trials();
    }
    if (recorder) {
      recorder->close(trials);
      recorder.reset();
    }
  }

  RunSummary summary(bool stopped) const {
    RunSummary s;
    s.frames = frames;
    {
      std::lock_guard lock(updates_mutex);
      s.updates = updates.size() - published_at_start;
    }
    s.dropped_frames = queue.dropped();
    s.stopped = stopped;
    return s;
  }
};

Engine::Engine(EngineConfig config) : impl_(std::make_unique<Impl>(config)) {
  auto& im = *impl_;
  if (config.osc_port > 0) im.osc = std::make_unique<OscSender>(config.osc_host, static_cast<std::uint16_t>(config.osc_port));
  if (!config.haptic_url.empty()) {
    im.haptic = std::make_unique<HapticDispatcher>(config.haptic_url,
                                                   std::chrono::milliseconds(config.haptic_timeout_ms));
  }
  if (config.control_port >= 0) {
    im.control = std::make_unique<ControlServer>(
        config.control_port, [this](const json& msg) { return command(msg); },
        [this] {
          std::vector<json> hello;
          hello.push_back({{"type", "state"}, {"state", state_json()}});
          std::lock_guard lock(impl_->updates_mutex);
          if (!impl_->updates.empty()) hello.push_back(update_to_json(impl_->updates.back()));
          return hello;
        });
  }
}

Engine::~Engine() {
  stop();
  if (impl_->control) impl_->control->stop();
}

void Engine::stop() { impl_->stop = true; }

void Engine::on_update(std::function<void(const IbsUpdate&)> callback) { impl_->callback = std::move(callback); }

int Engine::control_port() const { return impl_->control ? impl_->control->port() : 0; }

std::uint64_t Engine::haptic_failures() const { return impl_->haptic ? impl_->haptic->stats().failed : 0; }

std::uint64_t Engine::osc_sent() const { return impl_->osc ? impl_->osc->sent() : 0; }

std::vector<IbsUpdate> Engine::updates() const {
  std::lock_guard lock(impl_->updates_mutex);
  return impl_->updates;
}

std::optional<std::map<std::string, LatencySummary>> Engine::latency_stats() const {
  return impl_->pipeline.latency().summary();
}

void Engine::reset_latency() { impl_->pipeline.latency().reset(); }

json Engine::state_json() const {
  std::lock_guard lock(impl_->pipeline_mutex);
  json doc = impl_->state_json_locked();
  doc["running"] = running_.load();
  return doc;
}

json Engine::command(const json& message) {
  json ack{{"type", "ack"}};
  const std::string type = message.is_object() ? message.value("type", "") : "";
  ack["command"] = type;
  CommandResult result;
  try {
    if (type == "set_condition") {
      std::lock_guard lock(impl_->pipeline_mutex);
      result = impl_->pipeline.set_condition(message.at("label").get<std::string>());
    } else if (type == "set_modality") {
      std::lock_guard lock(impl_->pipeline_mutex);
      result = impl_->pipeline.set_modality(message.at("modality").get<std::string>());
    } else if (type == "mark_trial") {
      std::vector<TrialMarker> trials;
      {
        std::lock_guard lock(impl_->pipeline_mutex);
        result = impl_->pipeline.mark_trial(message.at("action").get<std::string>());
        trials = impl_->pipeline.trials();
      }
      if (impl_->recorder) impl_->recorder->set_trials(std::move(trials));
    } else if (type == "set_synth_coupling") {
      const double kappa = message.at("kappa").get<double>();
      std::lock_guard lock(impl_->synth_mutex);
      if (!impl_->synth) {
        result = {false, "no synthetic source attached", ""};
      } else if (!(kappa >= 0.0 && kappa <= 1.0)) {
        result = {false, "coupling must lie in [0, 1]", ""};
      } else {
        impl_->synth->set_coupling(kappa);
      }
    } else if (type == "get_state") {
      result = {};
    } else {
      result = {false, "unknown command type '" + type + "'", ""};
    }
  } catch (const json::exception& e) {
    result = {false, std::string("malformed command: ") + e.what(), ""};
  }
  ack["ok"] = result.ok;
  if (!result.error.empty()) ack["error"] = result.error;
  if (!result.warning.empty()) {
    ack["warning"] = result.warning;
    log_warn(result.warning);
  }
  ack["state"] = state_json();
  return ack;
}

RunSummary Engine::run_replay(const std::filesystem::path& recording, double speed) {
  auto& im = *impl_;
  const Manifest source_manifest = read_manifest(recording);
  Manifest base;
  base.session_id = source_manifest.session_id + "-replay";
  base.streams = source_manifest.streams;
  base.config = engine_config_to_json(im.config);
  running_ = true;
  im.begin_run(base);
  bool stopped = false;

  try {
    if (!std::isfinite(speed)) {
      const auto tick_us = static_cast<std::uint64_t>(im.config.tick_ms) * 1000;
      std::optional<std::uint64_t> next_tick;
      auto result = replay(recording, {std::numeric_limits<double>::infinity(), &im.stop},
                           [&](const SampleFrame& f) {
                             if (!next_tick) next_tick = f.timestamp_us + tick_us;
                             while (f.timestamp_us >= *next_tick) {
                               im.process_and_publish();
                               *next_tick += tick_us;
                             }
                             std::lock_guard lock(im.pipeline_mutex);
                             im.ingest(f);
                             return true;
                           });
      im.process_and_publish();
      stopped = result.stopped;
    } else {
      std::atomic<bool> done{false};
      std::exception_ptr failure;
      std::thread producer([&] {
        try {
          replay(recording, {speed, &im.stop}, [&](const SampleFrame& f) {
            im.queue.push(f);
            return true;
          });
        } catch (...) {
          failure = std::current_exception();
        }
        done = true;
      });
      im.tick_loop([&] { return done.load(); });
      stopped = im.stop.load();
      im.stop = true;
      producer.join();
      if (failure) std::rethrow_exception(failure);
    }
  } catch (...) {
    im.end_run();
    running_ = false;
    throw;
  }
  im.end_run();
  running_ = false;
  return im.summary(stopped);
}

RunSummary Engine::run_synth(const SynthConfig& synth_config, double speed) {
  auto& im = *impl_;
  SynthSource source(synth_config);
  {
    std::lock_guard lock(im.synth_mutex);
    im.synth = &source;
  }
  Manifest base;
  base.session_id = "synth-" + std::to_string(synth_config.seed);
  base.streams = default_streams(synth_config.sample_rate, synth_config.motion_rate);
  base.config = {{"engine", engine_config_to_json(im.config)}, {"synth", synth_config_to_json(synth_config)}};
  running_ = true;
  im.begin_run(base);
  bool stopped = false;

  auto detach = [&] {
    std::lock_guard lock(im.synth_mutex);
    im.synth = nullptr;
  };

  try {
    if (!std::isfinite(speed)) {
      const auto tick_us = static_cast<std::uint64_t>(im.config.tick_ms) * 1000;
      for (std::uint64_t t = tick_us;; t += tick_us) {
        if (im.stop.load()) {
          stopped = true;
          break;
        }
        std::vector<SampleFrame> frames;
        bool finished = false;
        {
          std::lock_guard lock(im.synth_mutex);
          frames = source.advance_to(t);
          finished = source.finished();
        }
        {
          std::lock_guard lock(im.pipeline_mutex);
          for (const auto& f : frames) im.ingest(f);
        }
        im.process_and_publish();
        if (finished) break;
      }
    } else {
      std::atomic<bool> done{false};
      std::thread producer([&] {
        const auto t0 = Clock::now();
        while (!im.stop.load()) {
          const double elapsed_us =
              std::chrono::duration<double, std::micro>(Clock::now() - t0).count() * speed;
          std::vector<SampleFrame> frames;
          bool finished = false;
          {
            std::lock_guard lock(im.synth_mutex);
            frames = source.advance_to(static_cast<std::uint64_t>(elapsed_us));
            finished = source.finished();
          }
          for (auto& f : frames) im.queue.push(std::move(f));
          if (finished) break;
          std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        done = true;
      });
      im.tick_loop([&] { return done.load(); });
      stopped = im.stop.load();
      im.stop = true;
      producer.join();
    }
  } catch (...) {
    detach();
    im.end_run();
    running_ = false;
    throw;
  }
  detach();
  im.end_run();
  running_ = false;
  return im.summary(stopped);
}

RunSummary Engine::run_live(int port) {
  auto& im = *impl_;
  const int listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd < 0) throw IoError("cannot open ingest socket");
  int yes = 1;
  ::setsockopt(listen_fd, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd, 8) != 0) {
    ::close(listen_fd);
    throw IoError("cannot listen for frames on port " + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
  live_port_ = ntohs(addr.sin_port);

  Manifest base;
  base.session_id = "live";
  base.streams = default_streams(im.config.sample_rate, im.config.motion_rate);
  base.config = engine_config_to_json(im.config);
  running_ = true;
  im.begin_run(base);

  std::vector<std::thread> readers;
  std::mutex readers_mutex;
  std::thread acceptor([&] {
    while (!im.stop.load()) {
      pollfd pfd{listen_fd, POLLIN, 0};
      if (::poll(&pfd, 1, 100) <= 0) continue;
      const int fd = ::accept(listen_fd, nullptr, nullptr);
      if (fd < 0) continue;
      std::lock_guard lock(readers_mutex);
      readers.emplace_back([&im, fd] {
        FrameDecoder decoder;
        std::array<std::uint8_t, 4096> buf{};
        while (!im.stop.load()) {
          pollfd cfd{fd, POLLIN, 0};
          const int r = ::poll(&cfd, 1, 100);
          if (r == 0) continue;
          if (r < 0) break;
          const auto n = ::recv(fd, buf.data(), buf.size(), 0);
          if (n <= 0) break;
          decoder.feed({buf.data(), static_cast<std::size_t>(n)});
          while (auto f = decoder.next()) im.queue.push(std::move(*f));
        }
        if (decoder.skipped_bytes() > 0) {
          log_warn("ingest connection skipped " + std::to_string(decoder.skipped_bytes()) + " malformed bytes");
        }
        ::close(fd);
      });
    }
  });

  im.tick_loop([] { return false; });
  acceptor.join();
  {
    std::lock_guard lock(readers_mutex);
    for (auto& t : readers) t.join();
  }
  ::close(listen_fd);
  live_port_ = 0;
  im.end_run();
  running_ = false;
  return im.summary(true);
}

} // namespace nr
