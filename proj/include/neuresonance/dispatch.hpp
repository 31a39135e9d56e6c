#pragma once

#include "neuresonance/feedback.hpp"

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>

namespace nr {

// Fire-and-forget UDP datagrams to one OSC receiver.
class OscSender {
public:
  OscSender(const std::string& host, std::uint16_t port);
  ~OscSender();

  OscSender(const OscSender&) = delete;
  OscSender& operator=(const OscSender&) = delete;

  // False when the datagram could not be handed to the kernel.
  bool send(std::span<const std::uint8_t> packet);

  std::uint64_t sent() const noexcept { return sent_; }
  std::uint64_t failed() const noexcept { return failed_; }

private:
  int fd_{-1};
  std::array<std::uint8_t, 16> addr_{}; // sockaddr_in storage
  std::uint64_t sent_{0};
  std::uint64_t failed_{0};
};

struct HapticStats {
  std::uint64_t delivered{0};
  std::uint64_t failed{0};
  std::uint64_t suppressed{0}; // identical to the previous submission
  std::uint64_t coalesced{0};  // replaced by a newer pattern before sending
};

// Posts patterns to `<endpoint>/vibrate` from a worker thread so a slow or
// dead device never stalls the caller. Only changes are sent; a newer pattern
// replaces one still waiting in the queue.
class HapticDispatcher {
public:
  explicit HapticDispatcher(std::string endpoint,
                            std::chrono::milliseconds timeout = std::chrono::milliseconds(250));
  ~HapticDispatcher();

  HapticDispatcher(const HapticDispatcher&) = delete;
  HapticDispatcher& operator=(const HapticDispatcher&) = delete;

  // Returns false when suppressed as a duplicate. Never blocks on I/O.
  bool submit(const HapticPattern& pattern);

  // Waits until the queue is empty and no request is in flight.
  void flush();

  HapticStats stats() const;

private:
  void worker();

  std::string endpoint_;
  std::chrono::milliseconds timeout_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<HapticPattern> last_submitted_;
  std::optional<HapticPattern> pending_;
  bool in_flight_{false};
  bool stopping_{false};
  HapticStats stats_;
  std::thread thread_;
};

// Body of a POST /vibrate request.
std::string haptic_request_body(const HapticPattern& pattern);

} // namespace nr
