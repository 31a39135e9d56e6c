#pragma once

#include <json.hpp>

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace nr {

// Sec-WebSocket-Accept value for a client key.
std::string websocket_accept_key(const std::string& client_key);

// WebSocket endpoint for the operator console. Every inbound text message is
// a JSON command answered by `handler`; broadcast() pushes snapshots to all
// connected clients. New clients first receive `greeting()`.
class ControlServer {
public:
  using Handler = std::function<nlohmann::json(const nlohmann::json&)>;
  using Greeting = std::function<std::vector<nlohmann::json>()>;

  ControlServer(int port, Handler handler, Greeting greeting, const std::string& host = "127.0.0.1");
  ~ControlServer();

  ControlServer(const ControlServer&) = delete;
  ControlServer& operator=(const ControlServer&) = delete;

  int port() const noexcept { return port_; }
  void broadcast(const nlohmann::json& message);
  std::size_t client_count() const;
  void stop();

private:
  struct Client;

  void accept_loop();
  void serve(std::shared_ptr<Client> client);

  Handler handler_;
  Greeting greeting_;
  int listen_fd_{-1};
  int port_{0};
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;

  mutable std::mutex mutex_;
  std::vector<std::shared_ptr<Client>> clients_;
  std::vector<std::thread> workers_;
};

} // namespace nr
