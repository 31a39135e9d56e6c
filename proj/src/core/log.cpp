#include "neuresonance/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace nr {
namespace {

std::atomic<LogLevel> g_level{LogLevel::warn};
std::mutex g_mutex;
std::function<void(LogLevel, std::string_view)> g_sink;

const char* tag(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    case LogLevel::error: return "error";
    case LogLevel::off: break;
  }
  return "";
}

} // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void set_log_sink(std::function<void(LogLevel, std::string_view)> sink) {
  std::lock_guard lock(g_mutex);
  g_sink = std::move(sink);
}

void log(LogLevel level, std::string_view message) {
  if (level < g_level.load() || level == LogLevel::off) return;
  std::lock_guard lock(g_mutex);
  if (g_sink) {
    g_sink(level, message);
  } else {
    std::cerr << "[neuresonance " << tag(level) << "] " << message << '\n';
  }
}

} // namespace nr
