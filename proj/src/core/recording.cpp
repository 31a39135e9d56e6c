#include "neuresonance/recording.hpp"

#include "neuresonance/error.hpp"
#include "neuresonance/wire.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <thread>

namespace nr {

using nlohmann::json;

std::string_view condition_label(Condition condition) {
  switch (condition) {
    case Condition::non_sync: return "Non-sync";
    case Condition::no_feedback: return "No Feedback";
    case Condition::visual: return "Visual";
    case Condition::auditory: return "Auditory";
    case Condition::haptic: return "Haptic";
  }
  return "No Feedback";
}

std::optional<Condition> parse_condition(std::string_view label) {
  for (auto c : {Condition::non_sync, Condition::no_feedback, Condition::visual, Condition::auditory,
                 Condition::haptic}) {
    if (label == condition_label(c)) return c;
  }
  return std::nullopt;
}

std::vector<StreamInfo> default_streams(double eeg_rate, double motion_rate) {
  return {{to_u8(StreamId::eeg_a), "eeg_a", kEegChannels, eeg_rate},
          {to_u8(StreamId::eeg_b), "eeg_b", kEegChannels, eeg_rate},
          {to_u8(StreamId::motion_a), "motion_a", kMotionChannels, motion_rate},
          {to_u8(StreamId::motion_b), "motion_b", kMotionChannels, motion_rate}};
}

json manifest_to_json(const Manifest& manifest) {
  json doc;
  doc["format"] = "neuresonance-recording";
  doc["version"] = kLogVersion;
  doc["session_id"] = manifest.session_id;
  doc["frame_log"] = std::string(kFrameLogFile);
  doc["streams"] = json::array();
  for (const auto& s : manifest.streams) {
    doc["streams"].push_back(
        {{"id", s.id}, {"name", s.name}, {"channels", s.channels}, {"sample_rate", s.sample_rate}});
  }
  doc["config"] = manifest.config;
  doc["trials"] = json::array();
  for (const auto& t : manifest.trials) {
    json jt{{"trial_id", t.trial_id},
            {"condition", std::string(condition_label(t.condition))},
            {"start_us", t.start_us}};
    jt["stop_us"] = t.stop_us ? json(*t.stop_us) : json(nullptr);
    doc["trials"].push_back(std::move(jt));
  }
  return doc;
}

Manifest manifest_from_json(const json& doc) {
  try {
    Manifest m;
    m.session_id = doc.value("session_id", "");
    for (const auto& s : doc.at("streams")) {
      m.streams.push_back({s.at("id").get<std::uint8_t>(), s.value("name", ""),
                           s.at("channels").get<std::size_t>(), s.at("sample_rate").get<double>()});
    }
    if (doc.contains("config")) m.config = doc["config"];
    for (const auto& t : doc.value("trials", json::array())) {
      const auto label = t.at("condition").get<std::string>();
      const auto cond = parse_condition(label);
      if (!cond) throw ConfigError("unknown condition label '" + label + "' in manifest");
      TrialMarker marker{t.at("trial_id").get<int>(), *cond, t.at("start_us").get<std::uint64_t>(), {}};
      if (t.contains("stop_us") && !t["stop_us"].is_null()) marker.stop_us = t["stop_us"].get<std::uint64_t>();
      m.trials.push_back(marker);
    }
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
}

namespace {

std::array<char, kLogHeaderBytes> log_header(std::uint16_t streams) {
  std::array<char, kLogHeaderBytes> h{};
  const char magic[] = "NRLOG1";
  for (int i = 0; i < 6; ++i) h[i] = magic[i];
  h[6] = static_cast<char>(kLogVersion & 0xff);
  h[7] = static_cast<char>(kLogVersion >> 8);
  h[8] = static_cast<char>(streams & 0xff);
  h[9] = static_cast<char>(streams >> 8);
  return h;
}

} // namespace

RecordingWriter::RecordingWriter(std::filesystem::path dir, Manifest manifest)
    : dir_(std::move(dir)), manifest_(std::move(manifest)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create recording directory " + dir_.string() + ": " + ec.message());
  log_.open(dir_ / kFrameLogFile, std::ios::binary | std::ios::trunc);
  if (!log_) throw IoError("cannot open frame log in " + dir_.string());
  const auto header = log_header(static_cast<std::uint16_t>(manifest_.streams.size()));
  log_.write(header.data(), header.size());
  write_manifest();
}

RecordingWriter::~RecordingWriter() {
  try {
    close();
  } catch (...) {
  }
}

void RecordingWriter::append(const SampleFrame& frame) {
  if (closed_) throw StateError("recording already closed");
  const auto bytes = encode_frame(frame);
  const auto len = static_cast<std::uint32_t>(bytes.size());
  const char prefix[4] = {static_cast<char>(len & 0xff), static_cast<char>((len >> 8) & 0xff),
                          static_cast<char>((len >> 16) & 0xff), static_cast<char>(len >> 24)};
  log_.write(prefix, 4);
  log_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  ++frames_;
}

void RecordingWriter::write_manifest() {
  log_.flush();
  const auto path = dir_ / kManifestFile;
  const auto tmp = dir_ / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in " + dir_.string());
    out << manifest_to_json(manifest_).dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

void RecordingWriter::close() {
  if (closed_) return;
  write_manifest();
  log_.close();
  closed_ = true;
}

FrameLogReader::FrameLogReader(const std::filesystem::path& log_path)
    : in_(log_path, std::ios::binary) {
  if (!in_) throw IoError("cannot open frame log " + log_path.string());
  std::array<char, kLogHeaderBytes> h{};
  in_.read(h.data(), h.size());
  if (in_.gcount() != static_cast<std::streamsize>(h.size())) {
    throw FramingError("frame log header truncated", static_cast<std::size_t>(in_.gcount()));
  }
  if (std::string_view(h.data(), 6) != "NRLOG1") throw FramingError("bad frame log magic", 0);
  const auto version = static_cast<std::uint16_t>(static_cast<std::uint8_t>(h[6]) |
                                                  (static_cast<std::uint8_t>(h[7]) << 8));
  if (version != kLogVersion) throw FramingError("unsupported frame log version", 6);
  stream_count_ = static_cast<std::uint16_t>(static_cast<std::uint8_t>(h[8]) |
                                             (static_cast<std::uint8_t>(h[9]) << 8));
  position_ = kLogHeaderBytes;
}

std::optional<SampleFrame> FrameLogReader::next() {
  std::array<std::uint8_t, 4> prefix{};
  in_.read(reinterpret_cast<char*>(prefix.data()), 4);
  const auto got = in_.gcount();
  if (got == 0) return std::nullopt;
  if (got != 4) throw FramingError("truncated record length", position_);
  const std::uint32_t len = prefix[0] | (prefix[1] << 8) | (prefix[2] << 16) |
                            (static_cast<std::uint32_t>(prefix[3]) << 24);
  if (len < kFrameHeaderBytes || len > frame_size(255)) {
    throw FramingError("implausible record length " + std::to_string(len), position_);
  }
  std::vector<std::uint8_t> bytes(len);
  in_.read(reinterpret_cast<char*>(bytes.data()), len);
  if (in_.gcount() != static_cast<std::streamsize>(len)) {
    throw FramingError("truncated record", position_ + 4);
  }
  SampleFrame frame;
  try {
    frame = decode_frame(bytes);
  } catch (const FramingError& e) {
    throw FramingError(std::string("corrupt record: ") + e.what(), position_ + 4 + e.offset());
  }
  position_ += 4 + len;
  return frame;
}

Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw IoError("no manifest in " + dir.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest is not valid JSON: ") + e.what());
  }
  return manifest_from_json(doc);
}

std::vector<SampleFrame> read_frames(const std::filesystem::path& dir) {
  FrameLogReader reader(dir / kFrameLogFile);
  std::vector<SampleFrame> frames;
  while (auto f = reader.next()) frames.push_back(std::move(*f));
  return frames;
}

void write_recording(const std::filesystem::path& dir, const Manifest& manifest,
                     const std::vector<SampleFrame>& frames) {
  RecordingWriter writer(dir, manifest);
  for (const auto& f : frames) writer.append(f);
  writer.close();
}

ReplayResult replay(const std::filesystem::path& dir, const ReplayOptions& options,
                    const std::function<bool(const SampleFrame&)>& sink) {
  read_manifest(dir);
  FrameLogReader reader(dir / kFrameLogFile);
  ReplayResult result;
  const bool paced = std::isfinite(options.speed) && options.speed > 0.0;
  const auto wall_start = std::chrono::steady_clock::now();
  std::optional<std::uint64_t> first_ts;

  while (auto frame = reader.next()) {
    if (options.stop && options.stop->load()) {
      result.stopped = true;
      break;
    }
    if (paced) {
      if (!first_ts) first_ts = frame->timestamp_us;
      const double offset_us =
          static_cast<double>(frame->timestamp_us - std::min(*first_ts, frame->timestamp_us)) /
          options.speed;
      std::this_thread::sleep_until(wall_start + std::chrono::microseconds(
                                                     static_cast<std::int64_t>(offset_us)));
    }
    ++result.frames;
    if (!sink(*frame)) {
      result.stopped = true;
      break;
    }
  }
  return result;
}

} // namespace nr
