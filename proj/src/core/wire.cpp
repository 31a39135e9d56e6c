#include "neuresonance/wire.hpp"

#include "neuresonance/error.hpp"

#include <bit>
#include <cstring>
#include <string>

namespace nr {
namespace {

constexpr std::uint8_t kMagic0 = 'N';
constexpr std::uint8_t kMagic1 = 'R';

void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_le32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

std::uint64_t get_le64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

} // namespace

std::optional<std::size_t> expected_channels(std::uint8_t stream_id) {
  switch (static_cast<StreamId>(stream_id)) {
    case StreamId::eeg_a:
    case StreamId::eeg_b: return kEegChannels;
    case StreamId::motion_a:
    case StreamId::motion_b: return kMotionChannels;
  }
  return std::nullopt;
}

void append_frame(std::vector<std::uint8_t>& out, const SampleFrame& frame) {
  if (frame.channels.size() > 255) throw InputError("frame carries more than 255 channels");
  out.push_back(kMagic0);
  out.push_back(kMagic1);
  out.push_back(frame.stream_id);
  out.push_back(static_cast<std::uint8_t>(frame.channels.size()));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(frame.timestamp_us >> (8 * i)));
  for (float v : frame.channels) put_le32(out, std::bit_cast<std::uint32_t>(v));
}

std::vector<std::uint8_t> encode_frame(const SampleFrame& frame) {
  std::vector<std::uint8_t> out;
  out.reserve(frame_size(frame.channels.size()));
  append_frame(out, frame);
  return out;
}

SampleFrame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderBytes) {
    throw FramingError("truncated frame header (" + std::to_string(bytes.size()) + " bytes)",
                       bytes.size());
  }
  if (bytes[0] != kMagic0) throw FramingError("bad frame magic", 0);
  if (bytes[1] != kMagic1) throw FramingError("bad frame magic", 1);
  const std::uint8_t stream = bytes[2];
  const std::size_t channels = bytes[3];
  if (auto want = expected_channels(stream); want && *want != channels) {
    throw FramingError("stream " + std::to_string(stream) + " must carry " + std::to_string(*want) +
                           " channels, header says " + std::to_string(channels),
                       3);
  }
  const std::size_t need = frame_size(channels);
  if (bytes.size() < need) {
    throw FramingError("truncated frame: " + std::to_string(bytes.size()) + " of " +
                           std::to_string(need) + " bytes",
                       bytes.size());
  }
  if (bytes.size() > need) throw FramingError("trailing bytes after frame", need);

  SampleFrame f;
  f.stream_id = stream;
  f.timestamp_us = get_le64(bytes.data() + 4);
  f.channels.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    f.channels[c] = std::bit_cast<float>(get_le32(bytes.data() + kFrameHeaderBytes + 4 * c));
  }
  return f;
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
  compact();
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

void FrameDecoder::compact() {
  if (head_ > 0 && head_ * 2 >= buffer_.size()) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(head_));
    head_ = 0;
  }
}

std::optional<SampleFrame> FrameDecoder::next() {
  for (;;) {
    const std::size_t avail = buffer_.size() - head_;
    if (avail < kFrameHeaderBytes) return std::nullopt;
    const std::uint8_t* p = buffer_.data() + head_;
    const std::size_t channels = p[3];
    const auto want = expected_channels(p[2]);
    if (p[0] != kMagic0 || p[1] != kMagic1 || (want && *want != channels)) {
      ++head_;
      ++skipped_;
      continue;
    }
    const std::size_t need = frame_size(channels);
    if (avail < need) return std::nullopt;
    SampleFrame f = decode_frame({p, need});
    head_ += need;
    ++decoded_;
    return f;
  }
}

} // namespace nr
