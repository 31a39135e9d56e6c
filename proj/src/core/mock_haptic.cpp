#include "neuresonance/mock_haptic.hpp"

#include "neuresonance/error.hpp"
#include "neuresonance/log.hpp"

#include <httplib.h>
#include <json.hpp>

namespace nr {

MockHapticServer::MockHapticServer(int port, const std::string& host)
    : server_(std::make_unique<httplib::Server>()), host_(host) {
  server_->Post("/vibrate", [this](const httplib::Request& req, httplib::Response& res) {
    std::chrono::milliseconds delay;
    {
      std::lock_guard lock(mutex_);
      delay = delay_;
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);

    HapticRequest entry;
    entry.received = std::chrono::steady_clock::now();
    entry.body = req.body;
    try {
      const auto doc = nlohmann::json::parse(req.body);
      for (const char* key : {"bpm", "intensity", "pulse_ms"}) {
        if (!doc.contains(key) || !doc[key].is_number_integer()) {
          throw std::invalid_argument(std::string("missing integer field ") + key);
        }
      }
      entry.bpm = doc["bpm"].get<int>();
      entry.intensity = doc["intensity"].get<int>();
      entry.pulse_ms = doc["pulse_ms"].get<int>();
      entry.status = 200;
      res.set_content(R"({"ok":true})", "application/json");
    } catch (const std::exception& e) {
      entry.status = 400;
      res.status = 400;
      res.set_content(nlohmann::json{{"ok", false}, {"error", e.what()}}.dump(), "application/json");
      log_warn(std::string("mock haptic rejected request: ") + e.what());
    }
    std::lock_guard lock(mutex_);
    log_.push_back(std::move(entry));
  });

  if (port == 0) {
    port_ = server_->bind_to_any_port(host_);
  } else {
    port_ = server_->bind_to_port(host_, port) ? port : -1;
  }
  if (port_ <= 0) throw IoError("mock haptic server cannot bind " + host_ + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

MockHapticServer::~MockHapticServer() { stop(); }

std::string MockHapticServer::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

void MockHapticServer::set_delay(std::chrono::milliseconds delay) {
  std::lock_guard lock(mutex_);
  delay_ = delay;
}

std::vector<HapticRequest> MockHapticServer::requests() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::vector<HapticRequest> MockHapticServer::accepted() const {
  std::lock_guard lock(mutex_);
  std::vector<HapticRequest> out;
  for (const auto& r : log_) {
    if (r.status >= 200 && r.status < 300) out.push_back(r);
  }
  return out;
}

void MockHapticServer::clear() {
  std::lock_guard lock(mutex_);
  log_.clear();
}

void MockHapticServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

} // namespace nr
