#pragma once

#include "neuresonance/signal.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace nr {

// "NR", stream id, channel count, u64 LE timestamp, then LE float32 samples.
inline constexpr std::size_t kFrameHeaderBytes = 12;

constexpr std::size_t frame_size(std::size_t channel_count) {
  return kFrameHeaderBytes + 4 * channel_count;
}

// Channel count each stream id must carry, if it is one of the known ids.
std::optional<std::size_t> expected_channels(std::uint8_t stream_id);

std::vector<std::uint8_t> encode_frame(const SampleFrame& frame);
void append_frame(std::vector<std::uint8_t>& out, const SampleFrame& frame);

// Decodes exactly one frame occupying all of `bytes`. Throws FramingError
// (bad magic, truncation, trailing bytes, channel count that contradicts the
// stream id) with the offending byte offset.
SampleFrame decode_frame(std::span<const std::uint8_t> bytes);

// Incremental decoder for a byte stream. Malformed input is skipped up to the
// next magic; it never throws.
class FrameDecoder {
public:
  void feed(std::span<const std::uint8_t> bytes);

  // Next complete frame, if any.
  std::optional<SampleFrame> next();

  std::uint64_t decoded() const noexcept { return decoded_; }
  std::uint64_t skipped_bytes() const noexcept { return skipped_; }
  std::size_t buffered() const noexcept { return buffer_.size() - head_; }

private:
  void compact();

  std::vector<std::uint8_t> buffer_;
  std::size_t head_{0};
  std::uint64_t decoded_{0};
  std::uint64_t skipped_{0};
};

} // namespace nr
