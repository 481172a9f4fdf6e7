#pragma once

// Run directory files: manifest, summaries, queue traces.

#include "tscdreamer/train/evaluate.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef TSCD_VERSION
#define TSCD_VERSION "0.1.0"
#endif

namespace tscdreamer::exp {

namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kTraceHeader = "time_s,link_id,queue";

inline std::string code_version() { return TSCD_VERSION; }

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Env var naming the default output root; falls back to ./runs.
inline fs::path default_output_root() {
  const char* v = std::getenv("TSCD_OUTPUT_ROOT");
  return (v && *v) ? fs::path(v) : fs::path("runs");
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

struct RunManifest {
  std::string command;  // train, baseline, evaluate, sweep
  nlohmann::json config;
  std::string code_version = exp::code_version();
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::string status = "running";  // running, completed, failed
  std::string error;
};

inline nlohmann::json to_json(const RunManifest& m) {
  return {{"command", m.command},         {"config", m.config}, {"code_version", m.code_version},
          {"seed", m.seed},               {"started_at", m.started_at}, {"finished_at", m.finished_at},
          {"status", m.status},           {"error", m.error}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config = j.at("config");
  m.code_version = j.value("code_version", "");
  m.seed = j.value("seed", std::uint64_t{0});
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  m.status = j.at("status").get<std::string>();
  m.error = j.value("error", "");
  return m;
}

inline void write_manifest(const fs::path& dir, const RunManifest& m) { write_text_atomic(dir / kManifestName, to_json(m).dump(2) + "\n"); }

inline std::optional<RunManifest> read_manifest(const fs::path& dir) {
  if (!fs::exists(dir / kManifestName)) return std::nullopt;
  return manifest_from_json(read_json(dir / kManifestName));
}

inline std::string trace_csv(const std::vector<train::TraceRow>& rows) {
  std::ostringstream o;
  o << kTraceHeader << '\n';
  for (const auto& r : rows) o << r.time_s << ',' << r.link_id << ',' << r.queue << '\n';
  return o.str();
}

inline std::vector<train::TraceRow> read_trace(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw std::runtime_error("unexpected trace header in " + path.string());
  std::vector<train::TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
      throw std::runtime_error("malformed trace row in " + path.string());
    rows.push_back({std::stoll(a), std::stoi(b), std::stoi(c)});
  }
  return rows;
}

inline nlohmann::json summary_json(const train::EvalSummary& s) {
  int lo = 1 << 30, hi = -(1 << 30);
  for (const auto& row : s.splits)
    for (int v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  return {{"episodes", s.rewards.size()},
          {"episode_rewards", s.rewards},
          {"mean_episode_reward", s.mean},
          {"min_episode_reward", s.min},
          {"max_episode_reward", s.max},
          {"max_queue", s.max_queue},
          {"max_weighted_queue", s.max_weighted_queue},
          {"split_min_s", s.splits.empty() ? 0 : lo},
          {"split_max_s", s.splits.empty() ? 0 : hi},
          {"trace_episode", 0}};
}

/// Writes summary.json and trace.csv into `dir`.
inline void write_eval_outputs(const fs::path& dir, const train::EvalSummary& s, const nlohmann::json& extra) {
  nlohmann::json j = summary_json(s);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text_atomic(dir / "trace.csv", trace_csv(s.trace));
  write_text_atomic(dir / "summary.json", j.dump(2) + "\n");
}

/// Mean episode reward over the last quarter of logged episodes (at least
/// one).
inline double final_window_mean(const std::vector<train::MetricsRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("no logged episodes");
  const std::size_t n = std::max<std::size_t>(1, (rows.size() + 3) / 4);
  double s = 0.0;
  for (std::size_t i = rows.size() - n; i < rows.size(); ++i) s += rows[i].episode_reward;
  return s / static_cast<double>(n);
}

}  // namespace tscdreamer::exp
