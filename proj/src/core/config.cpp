#include "neuresonance/engine.hpp"
#include "neuresonance/error.hpp"

#include <fstream>
#include <set>

namespace nr {

using nlohmann::json;

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::none: return "none";
    case Modality::visual: return "visual";
    case Modality::auditory: return "auditory";
    case Modality::haptic: return "haptic";
  }
  return "none";
}

std::optional<Modality> parse_modality(std::string_view name) {
  for (auto m : {Modality::none, Modality::visual, Modality::auditory, Modality::haptic}) {
    if (name == modality_name(m)) return m;
  }
  return std::nullopt;
}

Modality modality_for(Condition condition) {
  switch (condition) {
    case Condition::visual: return Modality::visual;
    case Condition::auditory: return Modality::auditory;
    case Condition::haptic: return Modality::haptic;
    case Condition::non_sync:
    case Condition::no_feedback: break;
  }
  return Modality::none;
}

void EngineConfig::validate() const {
  if (!(window_s > 0.0) || !(hop_s > 0.0) || hop_s > window_s) {
    throw ConfigError("need 0 < hop_s <= window_s");
  }
  if (tick_ms <= 0 || tick_ms > hop_s * 1000.0) throw ConfigError("need 0 < tick_ms <= hop_s * 1000");
  if (!(motion_rate > 0.0)) throw ConfigError("motion_rate must be positive");
  filter.validate(sample_rate);
  if (band) filter.for_band(*band).validate(sample_rate);
  if (top_k == 0 || top_k > kEegChannels) throw ConfigError("top_k must be in 1..14");
  validate_bin_edges(bin_edges);
  haptic_table.validate();
  if (!(motion_thresholds.linear_mm_s > 0.0) || !(motion_thresholds.angular_rad_s > 0.0)) {
    throw ConfigError("motion thresholds must be positive");
  }
  if (osc_port < 0 || osc_port > 65535) throw ConfigError("osc port out of range");
  if (control_port < -1 || control_port > 65535) throw ConfigError("control port out of range");
  if (haptic_timeout_ms <= 0) throw ConfigError("haptic timeout must be positive");
  if (!(queue_seconds > 0.0)) throw ConfigError("queue_seconds must be positive");
  const double window_samples = window_s * sample_rate;
  if (std::abs(window_samples - std::round(window_samples)) > 1e-9) {
    throw ConfigError("window_s * sample_rate must be a whole number of samples");
  }
}

IbsOptions EngineConfig::ibs_options() const {
  IbsOptions o;
  o.filter = filter;
  o.band = band;
  o.top_k = top_k;
  return o;
}

namespace {

const char* band_key(Band b) {
  switch (b) {
    case Band::theta: return "theta";
    case Band::alpha: return "alpha";
    case Band::beta: return "beta";
  }
  return "alpha";
}

void reject_unknown(const json& doc, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

} // namespace

json engine_config_to_json(const EngineConfig& c) {
  json doc;
  doc["window_s"] = c.window_s;
  doc["hop_s"] = c.hop_s;
  doc["tick_ms"] = c.tick_ms;
  doc["sample_rate"] = c.sample_rate;
  doc["motion_rate"] = c.motion_rate;
  doc["filter"] = {{"low_cut_hz", c.filter.low_cut_hz},
                   {"high_cut_hz", c.filter.high_cut_hz},
                   {"order", c.filter.order},
                   {"mode", c.filter.mode == FilterMode::causal ? "causal" : "zero_phase"}};
  doc["band"] = c.band ? json(band_key(*c.band)) : json(nullptr);
  doc["top_k"] = c.top_k;
  doc["bin_edges"] = c.bin_edges;
  doc["modality"] = c.modality ? json(std::string(modality_name(*c.modality))) : json(nullptr);
  doc["start_condition"] =
      c.start_condition ? json(std::string(condition_label(*c.start_condition))) : json(nullptr);
  doc["audio_preset"] = c.audio_preset == AudioPreset::linear ? "linear" : "geometric";
  doc["haptic_table"] = {{"rows", c.haptic_table.rows}, {"pulse_ms", c.haptic_table.pulse_ms}};
  doc["visual"] = {{"base_radius", c.visual.base_radius},
                   {"max_amplitude", c.visual.max_amplitude},
                   {"spike_count", c.visual.spike_count}};
  doc["motion"] = {{"linear_mm_s", c.motion_thresholds.linear_mm_s},
                   {"angular_rad_s", c.motion_thresholds.angular_rad_s},
                   {"max_hold", c.max_hold}};
  doc["osc"] = {{"host", c.osc_host}, {"port", c.osc_port}};
  doc["haptic"] = {{"url", c.haptic_url}, {"timeout_ms", c.haptic_timeout_ms}};
  doc["control_port"] = c.control_port;
  doc["budget_ms"] = c.budget_ms;
  doc["queue_seconds"] = c.queue_seconds;
  doc["record_dir"] = c.record_dir;
  return doc;
}

EngineConfig engine_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("engine config must be a JSON object");
  reject_unknown(doc,
                 {"window_s", "hop_s", "tick_ms", "sample_rate", "motion_rate", "filter", "band", "top_k",
                  "bin_edges", "modality", "start_condition", "audio_preset", "haptic_table", "visual",
                  "motion", "osc", "haptic", "control_port", "budget_ms", "queue_seconds", "record_dir"},
                 "engine config");
  EngineConfig c;
  try {
    c.window_s = doc.value("window_s", c.window_s);
    c.hop_s = doc.value("hop_s", c.hop_s);
    c.tick_ms = doc.value("tick_ms", c.tick_ms);
    c.sample_rate = doc.value("sample_rate", c.sample_rate);
    c.motion_rate = doc.value("motion_rate", c.motion_rate);
    if (doc.contains("filter")) {
      const auto& f = doc["filter"];
      reject_unknown(f, {"low_cut_hz", "high_cut_hz", "order", "mode"}, "filter");
      c.filter.low_cut_hz = f.value("low_cut_hz", c.filter.low_cut_hz);
      c.filter.high_cut_hz = f.value("high_cut_hz", c.filter.high_cut_hz);
      c.filter.order = f.value("order", c.filter.order);
      const auto mode = f.value("mode", std::string("causal"));
      if (mode == "causal") {
        c.filter.mode = FilterMode::causal;
      } else if (mode == "zero_phase") {
        c.filter.mode = FilterMode::zero_phase;
      } else {
        throw ConfigError("filter mode must be causal or zero_phase");
      }
    }
    if (doc.contains("band") && !doc["band"].is_null()) {
      const auto b = doc["band"].get<std::string>();
      if (b == "theta") {
        c.band = Band::theta;
      } else if (b == "alpha") {
        c.band = Band::alpha;
      } else if (b == "beta") {
        c.band = Band::beta;
      } else {
        throw ConfigError("band must be theta, alpha or beta");
      }
    }
    c.top_k = doc.value("top_k", c.top_k);
    if (doc.contains("bin_edges")) c.bin_edges = doc["bin_edges"].get<BinEdges>();
    if (doc.contains("modality") && !doc["modality"].is_null()) {
      const auto m = parse_modality(doc["modality"].get<std::string>());
      if (!m) throw ConfigError("unknown modality");
      c.modality = *m;
    }
    if (doc.contains("start_condition") && !doc["start_condition"].is_null()) {
      const auto cond = parse_condition(doc["start_condition"].get<std::string>());
      if (!cond) throw ConfigError("unknown start_condition label");
      c.start_condition = *cond;
    }
    const auto preset = doc.value("audio_preset", std::string("linear"));
    if (preset == "linear") {
      c.audio_preset = AudioPreset::linear;
    } else if (preset == "geometric") {
      c.audio_preset = AudioPreset::geometric;
    } else {
      throw ConfigError("audio_preset must be linear or geometric");
    }
    if (doc.contains("haptic_table")) {
      const auto& h = doc["haptic_table"];
      if (h.contains("rows")) c.haptic_table.rows = h["rows"].get<decltype(c.haptic_table.rows)>();
      c.haptic_table.pulse_ms = h.value("pulse_ms", c.haptic_table.pulse_ms);
    }
    if (doc.contains("visual")) {
      const auto& v = doc["visual"];
      c.visual.base_radius = v.value("base_radius", c.visual.base_radius);
      c.visual.max_amplitude = v.value("max_amplitude", c.visual.max_amplitude);
      c.visual.spike_count = v.value("spike_count", c.visual.spike_count);
    }
    if (doc.contains("motion")) {
      const auto& m = doc["motion"];
      c.motion_thresholds.linear_mm_s = m.value("linear_mm_s", c.motion_thresholds.linear_mm_s);
      c.motion_thresholds.angular_rad_s = m.value("angular_rad_s", c.motion_thresholds.angular_rad_s);
      c.max_hold = m.value("max_hold", c.max_hold);
    }
    if (doc.contains("osc")) {
      c.osc_host = doc["osc"].value("host", c.osc_host);
      c.osc_port = doc["osc"].value("port", c.osc_port);
    }
    if (doc.contains("haptic")) {
      c.haptic_url = doc["haptic"].value("url", c.haptic_url);
      c.haptic_timeout_ms = doc["haptic"].value("timeout_ms", c.haptic_timeout_ms);
    }
    c.control_port = doc.value("control_port", c.control_port);
    c.budget_ms = doc.value("budget_ms", c.budget_ms);
    c.queue_seconds = doc.value("queue_seconds", c.queue_seconds);
    c.record_dir = doc.value("record_dir", c.record_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed engine config: ") + e.what());
  }
  c.validate();
  return c;
}

EngineConfig load_engine_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return engine_config_from_json(doc);
}

} // namespace nr
