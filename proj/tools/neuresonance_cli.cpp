#include "neuresonance/neuresonance.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

using nlohmann::json;

namespace {

std::atomic<nr_engine*> active_engine{nullptr};

extern "C" void on_sigint(int) {
  if (auto* e = active_engine.load()) nr_engine_stop(e);
}

std::string take(char* s) {
  std::string out = s ? s : "";
  nr_free_string(s);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int fail(const std::string& what) {
  std::cerr << "neuresonance: " << what << ": " << nr_last_error() << '\n';
  return 1;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Real-time inter-brain synchrony engine"};
  app.require_subcommand(1);
  int verbosity = 2;
  app.add_option("--log-level", verbosity, "0 debug .. 4 off")->check(CLI::Range(0, 4));

  // run
  auto* run = app.add_subcommand("run", "Run the engine on a live, replayed or synthetic source");
  std::string source = "synth";
  std::string config_path;
  std::string recording;
  std::string synth_path;
  std::string record_dir;
  double speed = 1.0;
  int listen = 5005;
  std::uint64_t seed = 1;
  double coupling = -1.0;
  double duration = 0.0;
  bool print_updates = false;
  run->add_option("--source", source, "live | replay | synth")->check(CLI::IsMember({"live", "replay", "synth"}));
  run->add_option("--config", config_path, "Engine config JSON");
  run->add_option("--recording", recording, "Recording directory for --source replay");
  run->add_option("--synth-config", synth_path, "Synthetic source JSON");
  run->add_option("--record", record_dir, "Record the session into this directory");
  run->add_option("--speed", speed, "Real-time multiplier; 0 runs as fast as possible");
  run->add_option("--listen", listen, "TCP port for live frames");
  run->add_option("--seed", seed, "Synthetic source seed");
  run->add_option("--coupling", coupling, "Synthetic coupling kappa in [0, 1]");
  run->add_option("--duration", duration, "Synthetic duration in seconds");
  run->add_flag("--print-updates", print_updates, "Print every update as a JSON line at the end");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Offline post-session analysis");
  std::string analyze_in;
  std::string out_dir = "report";
  double threshold_k = 3.0;
  bool per_band = false;
  bool causal = false;
  analyze->add_option("recording", analyze_in, "Recording directory")->required();
  analyze->add_option("--out", out_dir, "Output directory for report.json and report.csv");
  analyze->add_option("--threshold-k", threshold_k, "Rejection threshold: median + k * MAD");
  analyze->add_flag("--per-band", per_band, "Also report theta, alpha and beta");
  analyze->add_flag("--causal", causal, "Use the causal filter instead of zero-phase");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic recording");
  std::string synth_out;
  std::string synth_cfg;
  std::string segments_path;
  double synth_coupling = -1.0;
  double synth_duration = 0.0;
  std::uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "Recording directory")->required();
  synth->add_option("--config", synth_cfg, "Synthetic source JSON");
  synth->add_option("--segments", segments_path,
                    "JSON array of {condition, coupling, duration_s}, one trial each");
  synth->add_option("--coupling", synth_coupling, "Coupling kappa in [0, 1]");
  synth->add_option("--duration", synth_duration, "Duration in seconds");
  synth->add_option("--seed", synth_seed, "Seed");

  // bench
  auto* bench = app.add_subcommand("bench", "Latency benchmark");
  std::size_t bench_updates = 200;
  std::uint64_t bench_seed = 1;
  bench->add_option("--updates", bench_updates, "Number of updates (at least 200)")->check(CLI::Range(200, 1000000));
  bench->add_option("--seed", bench_seed, "Seed");

  CLI11_PARSE(app, argc, argv);
  nr_set_log_level(verbosity);

  try {
    auto synth_json = [&](const std::string& path, std::uint64_t s, double kappa, double dur) {
      json doc = path.empty() ? json::object() : json::parse(read_file(path));
      doc["seed"] = s;
      if (kappa >= 0.0) doc["coupling"] = kappa;
      if (dur > 0.0) doc["duration_s"] = dur;
      return doc.dump();
    };

    if (*run) {
      json cfg = config_path.empty() ? json::object() : json::parse(read_file(config_path));
      if (!record_dir.empty()) cfg["record_dir"] = record_dir;
      nr_engine* engine = nullptr;
      if (nr_engine_create(cfg.dump().c_str(), &engine) != NR_OK) return fail("config");
      active_engine = engine;
      std::signal(SIGINT, on_sigint);
      std::signal(SIGTERM, on_sigint);
      if (nr_engine_control_port(engine) > 0) {
        std::cerr << "control channel on ws://127.0.0.1:" << nr_engine_control_port(engine) << "/\n";
      }

      char* summary = nullptr;
      nr_status st = NR_OK;
      if (source == "replay") {
        if (recording.empty()) {
          std::cerr << "neuresonance: --recording is required for replay\n";
          return 2;
        }
        st = nr_engine_run_replay(engine, recording.c_str(), speed, &summary);
      } else if (source == "synth") {
        st = nr_engine_run_synth(engine, synth_json(synth_path, seed, coupling, duration).c_str(), speed, &summary);
      } else {
        std::cerr << "listening for frames on port " << listen << '\n';
        st = nr_engine_run_live(engine, listen, &summary);
      }
      active_engine = nullptr;
      if (st != NR_OK) {
        const int code = fail("run");
        nr_engine_destroy(engine);
        return code;
      }
      if (print_updates) {
        char* updates = nullptr;
        if (nr_engine_updates(engine, &updates) == NR_OK) {
          for (const auto& u : json::parse(take(updates))) std::cout << u.dump() << '\n';
        }
      }
      std::cout << take(summary) << '\n';
      nr_engine_destroy(engine);
      return 0;
    }

    if (*analyze) {
      json opts{{"threshold_k", threshold_k}, {"per_band", per_band}};
      if (causal) opts["filter_mode"] = "causal";
      char* report = nullptr;
      if (nr_analyze(analyze_in.c_str(), opts.dump().c_str(), out_dir.c_str(), &report) != NR_OK) {
        return fail("analyze");
      }
      const auto doc = json::parse(take(report));
      for (const auto& t : doc["trials"]) {
        std::cout << "trial " << t["trial_id"] << " " << t["condition"].get<std::string>() << ": "
                  << t["epochs_valid"] << "/" << (t["epochs_valid"].get<int>() + t["epochs_invalid"].get<int>())
                  << " valid, " << (t["trial_valid"].get<bool>() ? "accepted" : "rejected");
        if (!t["pooled_ccorr"].is_null()) std::cout << ", pooled " << t["pooled_ccorr"].get<double>();
        std::cout << '\n';
      }
      for (const auto& c : doc["conditions"]) {
        std::cout << c["condition"].get<std::string>() << ": mean " << c["mean_pooled_ccorr"].get<double>() << " over "
                  << c["valid_trials"] << " trials\n";
      }
      std::cout << "report written to " << out_dir << '\n';
      if (doc["all_rejected"].get<bool>()) {
        std::cerr << "neuresonance: every trial was rejected\n";
        return 3;
      }
      return 0;
    }

    if (*synth) {
      std::string segments;
      if (!segments_path.empty()) segments = read_file(segments_path);
      const auto cfg = synth_json(synth_cfg, synth_seed, synth_coupling, synth_duration);
      if (nr_synth_write_recording(synth_out.c_str(), cfg.c_str(), segments.empty() ? nullptr : segments.c_str()) !=
          NR_OK) {
        return fail("synth");
      }
      std::cout << "wrote " << synth_out << '\n';
      return 0;
    }

    if (*bench) {
      char* out = nullptr;
      if (nr_bench(bench_updates, bench_seed, &out) != NR_OK) return fail("bench");
      const auto doc = json::parse(take(out));
      std::printf("%-10s %10s %10s %10s %8s\n", "stage", "p50_ms", "p95_ms", "max_ms", "n");
      for (const auto& [stage, s] : doc["stages"].items()) {
        std::printf("%-10s %10.3f %10.3f %10.3f %8zu\n", stage.c_str(), s["p50_ms"].get<double>(),
                    s["p95_ms"].get<double>(), s["max_ms"].get<double>(), s["count"].get<std::size_t>());
      }
      std::printf("updates: %zu\n", doc["updates"].get<std::size_t>());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "neuresonance: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
