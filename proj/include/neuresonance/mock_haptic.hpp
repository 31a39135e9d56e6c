#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace nr {

struct HapticRequest {
  std::chrono::steady_clock::time_point received;
  int status{0};
  int bpm{0};
  int intensity{0};
  int pulse_ms{0};
  std::string body;
};

// Stand-in for the vibrotactile band: serves POST /vibrate and logs every
// request it sees. Port 0 picks a free port.
class MockHapticServer {
public:
  explicit MockHapticServer(int port = 0, const std::string& host = "127.0.0.1");
  ~MockHapticServer();

  MockHapticServer(const MockHapticServer&) = delete;
  MockHapticServer& operator=(const MockHapticServer&) = delete;

  int port() const noexcept { return port_; }
  std::string url() const;

  // Every response is delayed by this much (latency injection).
  void set_delay(std::chrono::milliseconds delay);

  std::vector<HapticRequest> requests() const;
  // Requests answered with 2xx only.
  std::vector<HapticRequest> accepted() const;
  void clear();

  void stop();

private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_{0};

  mutable std::mutex mutex_;
  std::vector<HapticRequest> log_;
  std::chrono::milliseconds delay_{0};
};

} // namespace nr
