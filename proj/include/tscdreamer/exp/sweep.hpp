#pragma once

// Size × ratio × seed grids, one child process per cell.

#include "tscdreamer/exp/run_io.hpp"

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

extern char** environ;

namespace tscdreamer::exp {

struct SweepCell {
  std::string size;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  fs::path dir;
};

struct SweepSpec {
  std::vector<std::string> sizes;
  std::vector<double> ratios;
  std::vector<std::uint64_t> seeds;
  fs::path out;
  int jobs = 1;
  fs::path executable;                  // binary providing the `train` subcommand
  std::vector<std::string> train_args;  // flags shared by every cell
};

struct CellOutcome {
  SweepCell cell;
  std::string status;  // completed, failed
  bool skipped = false;
  int exit_code = 0;
  std::string error;
};

inline std::string format_ratio(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", r);
  return buf;
}

inline std::string cell_name(const std::string& size, double ratio, std::uint64_t seed) {
  return size + "_ratio" + format_ratio(ratio) + "_seed" + std::to_string(seed);
}

inline std::vector<SweepCell> sweep_cells(const SweepSpec& spec) {
  if (spec.sizes.empty() || spec.ratios.empty() || spec.seeds.empty()) throw std::invalid_argument("sweep grid has an empty axis");
  std::vector<SweepCell> cells;
  for (const auto& s : spec.sizes)
    for (double r : spec.ratios)
      for (auto seed : spec.seeds) cells.push_back({s, r, seed, spec.out / cell_name(s, r, seed)});
  return cells;
}

inline bool cell_completed(const SweepCell& c) {
  try {
    auto m = read_manifest(c.dir);
    return m && m->status == "completed" && fs::exists(c.dir / "metrics.csv");
  } catch (const std::exception&) {
    return false;
  }
}

inline std::vector<std::string> cell_argv(const SweepSpec& spec, const SweepCell& c) {
  std::vector<std::string> a{spec.executable.string(), "train", "--size", c.size, "--ratio", format_ratio(c.ratio),
                             "--seed", std::to_string(c.seed), "--out", c.dir.string()};
  a.insert(a.end(), spec.train_args.begin(), spec.train_args.end());
  return a;
}

namespace sweep_detail {

inline pid_t spawn(const std::vector<std::string>& argv, const fs::path& log) {
  std::vector<char*> args;
  for (const auto& s : argv) args.push_back(const_cast<char*>(s.c_str()));
  args.push_back(nullptr);
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, STDOUT_FILENO, log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  posix_spawn_file_actions_adddup2(&fa, STDOUT_FILENO, STDERR_FILENO);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, args[0], &fa, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  if (rc != 0) throw std::runtime_error("cannot start " + argv[0]);
  return pid;
}

}  // namespace sweep_detail

/// Runs every cell not already completed, at most `jobs` at a time. A
/// failing cell is recorded and the grid continues.
inline std::vector<CellOutcome> run_sweep(const SweepSpec& spec) {
  if (spec.jobs < 1) throw std::invalid_argument("parallelism must be at least 1");
  const std::vector<SweepCell> cells = sweep_cells(spec);
  std::vector<CellOutcome> outcomes(cells.size());
  std::map<pid_t, std::size_t> running;
  std::size_t next = 0;

  auto finish = [&](std::size_t i, int code) {
    CellOutcome& o = outcomes[i];
    o.exit_code = code;
    if (code == 0 && cell_completed(cells[i])) {
      o.status = "completed";
      return;
    }
    o.status = "failed";
    RunManifest m;
    try {
      if (auto prev = read_manifest(cells[i].dir)) m = *prev;
    } catch (const std::exception&) {
    }
    if (m.command.empty()) m.command = "train";
    m.status = "failed";
    if (m.error.empty()) m.error = "cell process exited with status " + std::to_string(code);
    m.finished_at = utc_timestamp();
    o.error = m.error;
    write_manifest(cells[i].dir, m);
  };

  while (next < cells.size() || !running.empty()) {
    while (next < cells.size() && static_cast<int>(running.size()) < spec.jobs) {
      const std::size_t i = next++;
      outcomes[i].cell = cells[i];
      if (cell_completed(cells[i])) {
        outcomes[i].status = "completed";
        outcomes[i].skipped = true;
        continue;
      }
      fs::create_directories(cells[i].dir);
      try {
        running[sweep_detail::spawn(cell_argv(spec, cells[i]), cells[i].dir / "log.txt")] = i;
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
        finish(i, 127);
      }
    }
    if (running.empty()) continue;
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) throw std::runtime_error("waitpid failed");
    auto it = running.find(pid);
    if (it == running.end()) continue;
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
    const std::size_t i = it->second;
    running.erase(it);
    finish(i, code);
  }
  return outcomes;
}

/// Completed cells ranked by final-window mean reward (best first), then
/// failed cells.
inline nlohmann::json sweep_summary(const SweepSpec& spec, const std::vector<CellOutcome>& outcomes) {
  struct Row {
    nlohmann::json j;
    double score;
  };
  std::vector<Row> done;
  std::vector<nlohmann::json> failed;
  for (const auto& o : outcomes) {
    nlohmann::json j = {{"size", o.cell.size},   {"ratio", o.cell.ratio}, {"seed", o.cell.seed},
                        {"dir", o.cell.dir.filename().string()}, {"status", o.status}, {"skipped", o.skipped}};
    if (o.status == "completed") {
      try {
        const auto rows = train::read_metrics(o.cell.dir / "metrics.csv");
        j["episodes"] = rows.size();
        j["final_window_episodes"] = std::max<std::size_t>(1, (rows.size() + 3) / 4);
        j["final_window_mean_reward"] = final_window_mean(rows);
        j["env_steps"] = rows.back().env_steps;
        j["wall_clock_s"] = rows.back().wall_clock_s;
        done.push_back({j, final_window_mean(rows)});
        continue;
      } catch (const std::exception& e) {
        j["status"] = "failed";
        j["error"] = std::string("unreadable metrics: ") + e.what();
      }
    } else {
      j["error"] = o.error;
      j["exit_code"] = o.exit_code;
    }
    failed.push_back(j);
  }
  std::stable_sort(done.begin(), done.end(), [](const Row& a, const Row& b) { return a.score > b.score; });
  nlohmann::json cells = nlohmann::json::array();
  int rank = 1;
  for (auto& r : done) {
    r.j["rank"] = rank++;
    cells.push_back(r.j);
  }
  for (auto& f : failed) {
    f["rank"] = nullptr;
    cells.push_back(f);
  }
  return {{"sizes", spec.sizes},
          {"ratios", spec.ratios},
          {"seeds", spec.seeds},
          {"final_window", "mean episode reward over the last 25% of logged episodes"},
          {"completed", done.size()},
          {"failed", failed.size()},
          {"cells", cells}};
}

}  // namespace tscdreamer::exp
