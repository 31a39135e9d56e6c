#include "neuresonance/dispatch.hpp"

#include "neuresonance/error.hpp"
#include "neuresonance/log.hpp"

#include <httplib.h>
#include <json.hpp>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace nr {

OscSender::OscSender(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw ConfigError("cannot resolve OSC host '" + host + "'");
  }
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  freeaddrinfo(res);
  addr.sin_port = htons(port);
  static_assert(sizeof(addr) <= sizeof(addr_));
  std::memcpy(addr_.data(), &addr, sizeof(addr));

  fd_ = ::socket(AF_INET, SOCK_DGRAM | SOCK_NONBLOCK, 0);
  if (fd_ < 0) throw IoError("cannot open UDP socket");
}

OscSender::~OscSender() {
  if (fd_ >= 0) ::close(fd_);
}

bool OscSender::send(std::span<const std::uint8_t> packet) {
  const auto n = ::sendto(fd_, packet.data(), packet.size(), 0,
                          reinterpret_cast<const sockaddr*>(addr_.data()), sizeof(sockaddr_in));
  if (n == static_cast<ssize_t>(packet.size())) {
    ++sent_;
    return true;
  }
  ++failed_;
  return false;
}

std::string haptic_request_body(const HapticPattern& pattern) {
  nlohmann::json body;
  body["bpm"] = pattern.bpm;
  body["intensity"] = pattern.intensity;
  body["pulse_ms"] = pattern.pulse_ms;
  return body.dump();
}

HapticDispatcher::HapticDispatcher(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
  while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
  thread_ = std::thread([this] { worker(); });
}

HapticDispatcher::~HapticDispatcher() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  thread_.join();
}

bool HapticDispatcher::submit(const HapticPattern& pattern) {
  {
    std::lock_guard lock(mutex_);
    if (last_submitted_ && *last_submitted_ == pattern) {
      ++stats_.suppressed;
      return false;
    }
    last_submitted_ = pattern;
    if (pending_) ++stats_.coalesced;
    pending_ = pattern;
  }
  cv_.notify_all();
  return true;
}

void HapticDispatcher::flush() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return !pending_ && !in_flight_; });
}

HapticStats HapticDispatcher::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

void HapticDispatcher::worker() {
  const auto secs = timeout_.count() / 1000;
  const auto usecs = (timeout_.count() % 1000) * 1000;
  std::unique_ptr<httplib::Client> client;
  try {
    client = std::make_unique<httplib::Client>(endpoint_);
    client->set_connection_timeout(secs, usecs);
    client->set_read_timeout(secs, usecs);
    client->set_write_timeout(secs, usecs);
  } catch (const std::exception& e) {
    log_error(std::string("haptic endpoint invalid: ") + e.what());
  }

  std::unique_lock lock(mutex_);
  for (;;) {
    cv_.wait(lock, [this] { return stopping_ || pending_.has_value(); });
    if (stopping_) return;
    const HapticPattern pattern = *pending_;
    pending_.reset();
    in_flight_ = true;
    lock.unlock();

    bool ok = false;
    if (client && client->is_valid()) {
      auto res = client->Post("/vibrate", haptic_request_body(pattern), "application/json");
      ok = res && res->status >= 200 && res->status < 300;
      if (!ok) {
        log_warn("haptic dispatch failed: " +
                 (res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error())));
      }
    }

    lock.lock();
    in_flight_ = false;
    if (ok) {
      ++stats_.delivered;
    } else {
      ++stats_.failed;
    }
    cv_.notify_all();
  }
}

} // namespace nr
