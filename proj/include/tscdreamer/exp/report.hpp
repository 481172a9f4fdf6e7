#pragma once

// Reward curves and queue heatmaps from run directories.

#include "tscdreamer/exp/run_io.hpp"
#include "tscdreamer/exp/svg.hpp"
#include "tscdreamer/train/metrics.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tscdreamer::exp {

/// Directories under `root` (including `root`) holding a metrics.csv,
/// sorted by path.
inline std::vector<fs::path> find_runs(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("runs directory not found: " + root.string());
  std::vector<fs::path> runs;
  if (fs::exists(root / "metrics.csv")) runs.push_back(root);
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "metrics.csv" && e.path().parent_path() != root)
      runs.push_back(e.path().parent_path());
  std::sort(runs.begin(), runs.end());
  return runs;
}

inline std::string run_label(const fs::path& root, const fs::path& run) {
  std::string rel = fs::relative(run, root).generic_string();
  if (rel.empty() || rel == ".") return run.filename().empty() ? "run" : run.filename().string();
  std::replace(rel.begin(), rel.end(), '/', '_');
  return rel;
}

/// Queue matrix [link][interval] from a trace.
inline HeatmapPanel heatmap_panel(const std::string& label, const std::vector<train::TraceRow>& trace) {
  std::map<std::int64_t, std::map<int, int>> by_time;
  int links = 0;
  for (const auto& r : trace) {
    by_time[r.time_s][r.link_id] = r.queue;
    links = std::max(links, r.link_id + 1);
  }
  HeatmapPanel p;
  p.label = label;
  p.cells.assign(static_cast<std::size_t>(links), {});
  for (const auto& [t, row] : by_time) {
    p.times.push_back(static_cast<double>(t));
    for (int l = 0; l < links; ++l) {
      auto it = row.find(l);
      if (it == row.end()) throw std::runtime_error("trace is missing link " + std::to_string(l) + " at t=" + std::to_string(t));
      p.cells[static_cast<std::size_t>(l)].push_back(it->second);
    }
  }
  return p;
}

/// time_s,link_0,...,link_{L-1}: one row per control interval.
inline std::string heatmap_csv(const HeatmapPanel& p) {
  std::ostringstream o;
  o << "time_s";
  for (std::size_t l = 0; l < p.cells.size(); ++l) o << ",link_" << l;
  o << '\n';
  for (std::size_t t = 0; t < p.times.size(); ++t) {
    o << static_cast<long long>(p.times[t]);
    for (const auto& row : p.cells) o << ',' << row[t];
    o << '\n';
  }
  return o.str();
}

struct ReportInputs {
  fs::path runs;
  fs::path out;
  std::optional<fs::path> baseline_trace;
  std::optional<fs::path> controlled_trace;
};

/// Returns the files written, in write order.
inline std::vector<fs::path> write_report(const ReportInputs& in) {
  const std::vector<fs::path> runs = find_runs(in.runs);
  if (runs.empty()) throw std::runtime_error("no metrics.csv found under " + in.runs.string());
  fs::create_directories(in.out);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text_atomic(in.out / name, text);
    written.push_back(in.out / name);
  };

  std::vector<Series> by_wall, by_steps;
  for (const auto& run : runs) {
    const std::string label = run_label(in.runs, run);
    const auto rows = train::read_metrics(run / "metrics.csv");
    Series w{label, {}, {}}, s{label, {}, {}};
    std::ostringstream cw, cs;
    cw << "wall_clock_s,episode,episode_reward\n";
    cs << "env_steps,episode,episode_reward\n";
    for (const auto& r : rows) {
      cw << train::detail::fmt_double(r.wall_clock_s, "%.3f") << ',' << r.episode << ',' << train::detail::fmt_double(r.episode_reward) << '\n';
      cs << r.env_steps << ',' << r.episode << ',' << train::detail::fmt_double(r.episode_reward) << '\n';
      w.x.push_back(r.wall_clock_s / 3600.0);
      w.y.push_back(r.episode_reward);
      s.x.push_back(static_cast<double>(r.env_steps));
      s.y.push_back(r.episode_reward);
    }
    emit(label + "_reward_vs_wall_clock.csv", cw.str());
    emit(label + "_reward_vs_env_steps.csv", cs.str());
    emit(label + "_reward_vs_wall_clock.svg", line_chart_svg(label + ": episode reward", "training time (h)", "episode reward", {w}));
    emit(label + "_reward_vs_env_steps.svg", line_chart_svg(label + ": episode reward", "environment steps", "episode reward", {s}));
    by_wall.push_back(std::move(w));
    by_steps.push_back(std::move(s));
  }
  if (runs.size() > 1) {
    emit("reward_vs_wall_clock.svg", line_chart_svg("Episode reward", "training time (h)", "episode reward", by_wall));
    emit("reward_vs_env_steps.svg", line_chart_svg("Episode reward", "environment steps", "episode reward", by_steps));
  }

  std::vector<HeatmapPanel> panels;
  if (in.baseline_trace) {
    panels.push_back(heatmap_panel("base case", read_trace(*in.baseline_trace)));
    emit("heatmap_baseline.csv", heatmap_csv(panels.back()));
  }
  if (in.controlled_trace) {
    panels.push_back(heatmap_panel("controlled", read_trace(*in.controlled_trace)));
    emit("heatmap_controlled.csv", heatmap_csv(panels.back()));
  }
  if (!panels.empty()) emit("heatmap.svg", heatmap_svg("Main-line queue length by control interval", panels));
  return written;
}

}  // namespace tscdreamer::exp
