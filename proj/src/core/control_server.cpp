#include "neuresonance/control.hpp"

#include "neuresonance/error.hpp"
#include "neuresonance/log.hpp"

#include <openssl/evp.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstring>

namespace nr {

using nlohmann::json;

std::string websocket_accept_key(const std::string& client_key) {
  const std::string input = client_key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_Digest(input.data(), input.size(), digest.data(), &len, EVP_sha1(), nullptr);
  std::array<unsigned char, 64> encoded{};
  const int n = EVP_EncodeBlock(encoded.data(), digest.data(), static_cast<int>(len));
  return std::string(reinterpret_cast<const char*>(encoded.data()), static_cast<std::size_t>(n));
}

struct ControlServer::Client {
  int fd{-1};
  std::mutex send_mutex;
  std::atomic<bool> open{false};

  bool send_raw(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    while (size > 0) {
      const auto n = ::send(fd, p, size, MSG_NOSIGNAL);
      if (n <= 0) return false;
      p += n;
      size -= static_cast<std::size_t>(n);
    }
    return true;
  }

  bool send_frame(std::uint8_t opcode, const std::string& payload) {
    std::vector<std::uint8_t> frame;
    frame.push_back(static_cast<std::uint8_t>(0x80 | opcode));
    const std::size_t len = payload.size();
    if (len < 126) {
      frame.push_back(static_cast<std::uint8_t>(len));
    } else if (len <= 0xffff) {
      frame.push_back(126);
      frame.push_back(static_cast<std::uint8_t>(len >> 8));
      frame.push_back(static_cast<std::uint8_t>(len));
    } else {
      frame.push_back(127);
      for (int i = 7; i >= 0; --i) frame.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    }
    frame.insert(frame.end(), payload.begin(), payload.end());
    std::lock_guard lock(send_mutex);
    return send_raw(frame.data(), frame.size());
  }
};

namespace {

bool read_exact(int fd, std::uint8_t* out, std::size_t size, const std::atomic<bool>& stopping) {
  while (size > 0) {
    pollfd pfd{fd, POLLIN, 0};
    const int r = ::poll(&pfd, 1, 100);
    if (stopping.load()) return false;
    if (r == 0) continue;
    if (r < 0) return false;
    const auto n = ::recv(fd, out, size, 0);
    if (n <= 0) return false;
    out += n;
    size -= static_cast<std::size_t>(n);
  }
  return true;
}

std::string header_value(const std::string& request, const std::string& name) {
  std::string lower = request;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  std::string key = name;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  auto pos = lower.find("\r\n" + key + ":");
  if (pos == std::string::npos) return {};
  pos += key.size() + 3;
  const auto end = request.find("\r\n", pos);
  std::string value = request.substr(pos, end - pos);
  const auto b = value.find_first_not_of(" \t");
  const auto e = value.find_last_not_of(" \t");
  return b == std::string::npos ? std::string{} : value.substr(b, e - b + 1);
}

} // namespace

ControlServer::ControlServer(int port, Handler handler, Greeting greeting, const std::string& host)
    : handler_(std::move(handler)), greeting_(std::move(greeting)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError("cannot open control socket");
  int yes = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw ConfigError("bad control host " + host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 8) != 0) {
    ::close(listen_fd_);
    throw IoError("cannot bind control channel on port " + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

ControlServer::~ControlServer() { stop(); }

void ControlServer::stop() {
  if (stopping_.exchange(true)) return;
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mutex_);
    for (auto& c : clients_) ::shutdown(c->fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
  ::close(listen_fd_);
}

std::size_t ControlServer::client_count() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(clients_.begin(), clients_.end(), [](const auto& c) { return c->open.load(); }));
}

void ControlServer::broadcast(const json& message) {
  const std::string text = message.dump();
  std::vector<std::shared_ptr<Client>> targets;
  {
    std::lock_guard lock(mutex_);
    targets = clients_;
  }
  for (auto& c : targets) {
    if (c->open.load() && !c->send_frame(0x1, text)) c->open = false;
  }
}

void ControlServer::accept_loop() {
  while (!stopping_.load()) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    if (::poll(&pfd, 1, 100) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    auto client = std::make_shared<Client>();
    client->fd = fd;
    std::lock_guard lock(mutex_);
    clients_.push_back(client);
    workers_.emplace_back([this, client] { serve(client); });
  }
}

void ControlServer::serve(std::shared_ptr<Client> client) {
  const int fd = client->fd;
  auto finish = [&] {
    client->open = false;
    ::close(fd);
    std::lock_guard lock(mutex_);
    clients_.erase(std::remove(clients_.begin(), clients_.end(), client), clients_.end());
  };

  // HTTP upgrade handshake.
  std::string request;
  std::uint8_t ch = 0;
  while (request.size() < 8192 && request.find("\r\n\r\n") == std::string::npos) {
    if (!read_exact(fd, &ch, 1, stopping_)) return finish();
    request.push_back(static_cast<char>(ch));
  }
  const std::string key = header_value(request, "Sec-WebSocket-Key");
  if (key.empty()) {
    const char reply[] = "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
    client->send_raw(reply, sizeof(reply) - 1);
    return finish();
  }
  const std::string response = "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\n"
                               "Connection: Upgrade\r\nSec-WebSocket-Accept: " +
                               websocket_accept_key(key) + "\r\n\r\n";
  if (!client->send_raw(response.data(), response.size())) return finish();
  client->open = true;
  if (greeting_) {
    for (const auto& msg : greeting_()) client->send_frame(0x1, msg.dump());
  }

  std::string message;
  while (!stopping_.load()) {
    std::array<std::uint8_t, 2> head{};
    if (!read_exact(fd, head.data(), 2, stopping_)) break;
    const bool fin = head[0] & 0x80;
    const std::uint8_t opcode = head[0] & 0x0f;
    const bool masked = head[1] & 0x80;
    std::uint64_t len = head[1] & 0x7f;
    if (len == 126) {
      std::array<std::uint8_t, 2> ext{};
      if (!read_exact(fd, ext.data(), 2, stopping_)) break;
      len = (std::uint64_t{ext[0]} << 8) | ext[1];
    } else if (len == 127) {
      std::array<std::uint8_t, 8> ext{};
      if (!read_exact(fd, ext.data(), 8, stopping_)) break;
      len = 0;
      for (auto b : ext) len = (len << 8) | b;
    }
    if (len > (1u << 20)) break;
    std::array<std::uint8_t, 4> mask{};
    if (masked && !read_exact(fd, mask.data(), 4, stopping_)) break;
    std::string payload(static_cast<std::size_t>(len), '\0');
    if (len > 0 && !read_exact(fd, reinterpret_cast<std::uint8_t*>(payload.data()), payload.size(), stopping_)) {
      break;
    }
    if (masked) {
      for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(payload[i] ^ mask[i % 4]);
    }

    if (opcode == 0x8) {
      client->send_frame(0x8, payload.substr(0, 2));
      break;
    }
    if (opcode == 0x9) {
      client->send_frame(0xA, payload);
      continue;
    }
    if (opcode == 0xA) continue;
    if (opcode == 0x1 || opcode == 0x0) {
      message += payload;
      if (!fin) continue;
      json reply;
      try {
        reply = handler_(json::parse(message));
      } catch (const json::exception& e) {
        reply = {{"type", "ack"}, {"ok", false}, {"error", std::string("malformed message: ") + e.what()}};
      }
      message.clear();
      if (!client->send_frame(0x1, reply.dump())) break;
    }
  }
  finish();
}

} // namespace nr
