#include "neuresonance/error.hpp"
#include "neuresonance/wire.hpp"

#include <doctest.h>

#include <random>

using namespace nr;

namespace {

SampleFrame random_frame(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> id(0, 3);
  std::uniform_int_distribution<std::uint64_t> ts;
  std::normal_distribution<float> g(0.0f, 50.0f);
  SampleFrame f;
  f.stream_id = static_cast<std::uint8_t>(id(rng));
  f.timestamp_us = ts(rng);
  f.channels.resize(*expected_channels(f.stream_id));
  for (auto& c : f.channels) c = g(rng);
  return f;
}

} // namespace

TEST_CASE("EEG frame is 68 bytes with the documented layout") {
  SampleFrame f{0, 0x0102030405060708ULL, std::vector<float>(14, 1.0f)};
  const auto b = encode_frame(f);
  REQUIRE(b.size() == 68);
  CHECK(frame_size(14) == 68);
  CHECK(frame_size(7) == 40);
  CHECK(b[0] == 'N');
  CHECK(b[1] == 'R');
  CHECK(b[2] == 0);
  CHECK(b[3] == 14);
  CHECK(b[4] == 0x08);
  CHECK(b[11] == 0x01);
  // 1.0f little-endian.
  CHECK(b[12] == 0x00);
  CHECK(b[15] == 0x3F);
}

TEST_CASE("round trip of 100000 random frames") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100000; ++i) {
    const auto f = random_frame(rng);
    REQUIRE(decode_frame(encode_frame(f)) == f);
  }
}

TEST_CASE("framing errors carry offsets") {
  SampleFrame f{0, 5, std::vector<float>(14, 0.5f)};
  auto b = encode_frame(f);
  std::vector<std::uint8_t> trunc(b.begin(), b.end() - 1);
  REQUIRE(trunc.size() == 67);
  CHECK_THROWS_AS(decode_frame(trunc), FramingError);
  auto bad = b;
  bad[0] = 'X';
  try {
    decode_frame(bad);
    FAIL("expected a framing error");
  } catch (const FramingError& e) {
    CHECK(e.offset() == 0);
  }
  auto mismatch = b;
  mismatch[2] = 2;
  CHECK_THROWS_AS(decode_frame(mismatch), FramingError);
  auto trailing = b;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_frame(trailing), FramingError);
}

TEST_CASE("stream decoder resynchronizes after garbage") {
  std::mt19937_64 rng(2);
  std::vector<SampleFrame> sent;
  std::vector<std::uint8_t> bytes{'N', 'x', 1, 2, 3};
  for (int i = 0; i < 50; ++i) {
    sent.push_back(random_frame(rng));
    append_frame(bytes, sent.back());
    if (i % 7 == 0) bytes.insert(bytes.end(), {0xFF, 'N', 0x00});
  }
  FrameDecoder d;
  std::vector<SampleFrame> got;
  // Feed in awkward chunk sizes.
  for (std::size_t at = 0; at < bytes.size(); at += 13) {
    d.feed({bytes.data() + at, std::min<std::size_t>(13, bytes.size() - at)});
    while (auto f = d.next()) got.push_back(*f);
  }
  CHECK(got == sent);
  CHECK(d.skipped_bytes() > 0);
}

TEST_CASE("codec survives a million fuzzed frames") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<int> mode(0, 3);
  FrameDecoder stream;
  std::uint64_t decoded = 0;
  for (int i = 0; i < 1'000'000; ++i) {
    std::vector<std::uint8_t> b;
    switch (mode(rng)) {
      case 0: b = encode_frame(random_frame(rng)); break;
      case 1: {
        b = encode_frame(random_frame(rng));
        b[static_cast<std::size_t>(byte(rng)) % b.size()] = static_cast<std::uint8_t>(byte(rng));
        break;
      }
      case 2: {
        b = encode_frame(random_frame(rng));
        b.resize(static_cast<std::size_t>(byte(rng)) % b.size());
        break;
      }
      default: {
        b.resize(static_cast<std::size_t>(byte(rng)) % 80);
        for (auto& x : b) x = static_cast<std::uint8_t>(byte(rng));
      }
    }
    try {
      const auto f = decode_frame(b);
      // Unknown stream ids pass the codec; known ones must match their width.
      if (const auto want = expected_channels(f.stream_id)) CHECK(f.channels.size() == *want);
    } catch (const FramingError&) {
    }
    stream.feed(b);
    while (auto f = stream.next()) ++decoded;
  }
  CHECK(decoded > 0);
  CHECK(stream.buffered() < 1024);
}
