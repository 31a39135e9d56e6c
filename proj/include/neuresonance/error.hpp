#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nr {

enum class ErrorCode {
  config = 1,
  input,
  framing,
  gap,
  degenerate,
  io,
  state,
  insufficient_channels,
};

const char* to_string(ErrorCode code);

// Every failure the core raises derives from this. The C API maps `code()`
// onto its status enum.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::config, what) {}
};

class InputError : public Error {
public:
  explicit InputError(const std::string& what) : Error(ErrorCode::input, what) {}
};

// Zero resultant / zero denominator situations. Kept apart from NaN so callers
// can drop the offending channel instead of propagating garbage.
class DegenerateError : public Error {
public:
  explicit DegenerateError(const std::string& what) : Error(ErrorCode::degenerate, what) {}
};

class FramingError : public Error {
public:
  FramingError(const std::string& what, std::size_t offset)
      : Error(ErrorCode::framing, what + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

class IoError : public Error {
public:
  explicit IoError(const std::string& what) : Error(ErrorCode::io, what) {}
};

class StateError : public Error {
public:
  explicit StateError(const std::string& what) : Error(ErrorCode::state, what) {}
};

} // namespace nr
