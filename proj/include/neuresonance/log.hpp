#pragma once

#include <functional>
#include <string_view>

namespace nr {

enum class LogLevel { debug = 0, info, warn, error, off };

// Process-wide logging. Messages go to stderr unless a sink is installed.
void set_log_level(LogLevel level);
LogLevel log_level();
void set_log_sink(std::function<void(LogLevel, std::string_view)> sink);

void log(LogLevel level, std::string_view message);
inline void log_info(std::string_view m) { log(LogLevel::info, m); }
inline void log_warn(std::string_view m) { log(LogLevel::warn, m); }
inline void log_error(std::string_view m) { log(LogLevel::error, m); }

} // namespace nr
