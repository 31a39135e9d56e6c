#include "neuresonance/neuresonance.h"

#include "neuresonance/analysis.hpp"
#include "neuresonance/bench.hpp"
#include "neuresonance/engine.hpp"
#include "neuresonance/error.hpp"
#include "neuresonance/feedback.hpp"
#include "neuresonance/ibs.hpp"
#include "neuresonance/log.hpp"
#include "neuresonance/synth.hpp"
#include "neuresonance/wire.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <string>

using nlohmann::json;

struct nr_engine {
  explicit nr_engine(nr::EngineConfig config) : engine(config) {}
  nr::Engine engine;
};

namespace {

thread_local std::string last_error;

nr_status from_code(nr::ErrorCode code) { return static_cast<nr_status>(static_cast<int>(code)); }

template <class F>
nr_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return NR_OK;
  } catch (const nr::Error& e) {
    last_error = e.what();
    return from_code(e.code());
  } catch (const json::exception& e) {
    last_error = std::string("invalid JSON: ") + e.what();
    return NR_ERR_CONFIG;
  } catch (const std::exception& e) {
    last_error = e.what();
    return NR_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown failure";
    return NR_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const json& doc) {
  if (out) *out = dup_string(doc.dump());
}

void require(const void* p, const char* what) {
  if (!p) throw nr::InputError(std::string(what) + " must not be null");
}

double to_speed(double speed) { return speed > 0.0 ? speed : std::numeric_limits<double>::infinity(); }

json summary_json(const nr::RunSummary& s) {
  return {{"frames", s.frames}, {"updates", s.updates}, {"dropped_frames", s.dropped_frames}, {"stopped", s.stopped}};
}

json parse(const char* text) { return text && *text ? json::parse(text) : json::object(); }

nr::AnalysisOptions analysis_options(const json& doc) {
  nr::AnalysisOptions o;
  for (const auto& [key, value] : doc.items()) {
    if (key == "window_s") o.window_s = value.get<double>();
    else if (key == "hop_s") o.hop_s = value.get<double>();
    else if (key == "trim") o.trim = value.get<std::size_t>();
    else if (key == "threshold_k") o.threshold_k = value.get<double>();
    else if (key == "per_band") o.per_band = value.get<bool>();
    else if (key == "top_k") o.top_k = value.get<std::size_t>();
    else if (key == "filter_mode") {
      const auto mode = value.get<std::string>();
      if (mode == "causal") o.filter.mode = nr::FilterMode::causal;
      else if (mode == "zero_phase") o.filter.mode = nr::FilterMode::zero_phase;
      else throw nr::ConfigError("unknown filter_mode '" + mode + "'");
    } else {
      throw nr::ConfigError("unknown analysis option '" + key + "'");
    }
  }
  return o;
}

} // namespace

extern "C" {

const char* nr_version(void) { return "0.1.0"; }

const char* nr_last_error(void) { return last_error.c_str(); }

void nr_free_string(char* s) { std::free(s); }

void nr_set_log_level(int level) {
  if (level < 0) level = 0;
  if (level > 4) level = 4;
  nr::set_log_level(static_cast<nr::LogLevel>(level));
}

nr_status nr_ccorr(const double* a, const double* b, size_t n, double* out) {
  return guarded([&] {
    require(a, "a");
    require(b, "b");
    require(out, "out");
    *out = nr::ccorr({a, n}, {b, n});
  });
}

nr_status nr_fisher_z(double r, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = nr::fisher_z(r);
  });
}

nr_status nr_inverse_fisher_z(double z, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = nr::inverse_fisher_z(z);
  });
}

nr_status nr_pool_top_k(const double* r, size_t n, size_t k, double* out) {
  return guarded([&] {
    require(r, "r");
    require(out, "out");
    *out = nr::pool_top_k({r, n}, k);
  });
}

nr_status nr_encode_osc(float value, int32_t level, uint8_t* buf, size_t cap, size_t* written) {
  return guarded([&] {
    require(buf, "buf");
    const auto bytes = nr::encode_osc(value, level);
    if (cap < bytes.size()) throw nr::InputError("buffer holds " + std::to_string(cap) + " bytes, need " +
                                                 std::to_string(bytes.size()));
    std::memcpy(buf, bytes.data(), bytes.size());
    if (written) *written = bytes.size();
  });
}

nr_status nr_decode_frame(const uint8_t* bytes, size_t n, char** out) {
  return guarded([&] {
    require(bytes, "bytes");
    const auto f = nr::decode_frame({bytes, n});
    emit(out, {{"stream_id", f.stream_id}, {"timestamp_us", f.timestamp_us}, {"channels", f.channels}});
  });
}

nr_status nr_engine_create(const char* config_json, nr_engine** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    const auto config = nr::engine_config_from_json(parse(config_json));
    *out = new nr_engine(config);
  });
}

void nr_engine_destroy(nr_engine* engine) { delete engine; }

nr_status nr_engine_run_replay(nr_engine* engine, const char* recording, double speed, char** summary) {
  return guarded([&] {
    require(engine, "engine");
    require(recording, "recording");
    emit(summary, summary_json(engine->engine.run_replay(recording, to_speed(speed))));
  });
}

nr_status nr_engine_run_synth(nr_engine* engine, const char* synth_json, double speed, char** summary) {
  return guarded([&] {
    require(engine, "engine");
    const auto config = nr::synth_config_from_json(parse(synth_json));
    emit(summary, summary_json(engine->engine.run_synth(config, to_speed(speed))));
  });
}

nr_status nr_engine_run_live(nr_engine* engine, int port, char** summary) {
  return guarded([&] {
    require(engine, "engine");
    emit(summary, summary_json(engine->engine.run_live(port)));
  });
}

int nr_engine_live_port(const nr_engine* engine) { return engine ? engine->engine.live_port() : 0; }

int nr_engine_control_port(const nr_engine* engine) { return engine ? engine->engine.control_port() : 0; }

void nr_engine_stop(nr_engine* engine) {
  if (engine) engine->engine.stop();
}

nr_status nr_engine_command(nr_engine* engine, const char* command_json, char** ack) {
  return guarded([&] {
    require(engine, "engine");
    require(command_json, "command_json");
    emit(ack, engine->engine.command(json::parse(command_json)));
  });
}

nr_status nr_engine_updates(const nr_engine* engine, char** out) {
  return guarded([&] {
    require(engine, "engine");
    json doc = json::array();
    for (const auto& u : engine->engine.updates()) doc.push_back(nr::update_to_json(u));
    emit(out, doc);
  });
}

nr_status nr_engine_latency(const nr_engine* engine, char** out) {
  return guarded([&] {
    require(engine, "engine");
    emit(out, nr::latency_to_json(engine->engine.latency_stats()));
  });
}

nr_status nr_engine_state(const nr_engine* engine, char** out) {
  return guarded([&] {
    require(engine, "engine");
    emit(out, engine->engine.state_json());
  });
}

nr_status nr_synth_write_recording(const char* dir, const char* synth_json, const char* segments_json) {
  return guarded([&] {
    require(dir, "dir");
    const auto config = nr::synth_config_from_json(parse(synth_json));
    std::vector<nr::SynthSegment> segments;
    if (segments_json && *segments_json) {
      for (const auto& s : json::parse(segments_json)) {
        nr::SynthSegment seg;
        const auto label = s.at("condition").get<std::string>();
        const auto cond = nr::parse_condition(label);
        if (!cond) throw nr::ConfigError("unknown condition '" + label + "'");
        seg.condition = *cond;
        seg.coupling = s.at("coupling").get<double>();
        seg.duration_s = s.at("duration_s").get<double>();
        segments.push_back(seg);
      }
    }
    nr::write_synth_session(dir, config, segments);
  });
}

nr_status nr_analyze(const char* recording, const char* options_json, const char* out_dir, char** report) {
  return guarded([&] {
    require(recording, "recording");
    const auto result = nr::analyze(recording, analysis_options(parse(options_json)));
    if (out_dir) nr::write_report(out_dir, result);
    emit(report, nr::report_to_json(result));
  });
}

nr_status nr_bench(size_t updates, uint64_t seed, char** out) {
  return guarded([&] {
    const auto result = nr::run_bench(updates, seed);
    json doc = nr::latency_to_json(result.stages);
    doc["updates"] = result.updates;
    emit(out, doc);
  });
}

} // extern "C"
