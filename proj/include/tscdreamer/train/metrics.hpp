#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tscdreamer::train {

inline constexpr const char* kMetricsHeader =
    "wall_clock_s,env_steps,episode,episode_reward,wm_loss,actor_loss,critic_loss,measured_ratio";

/// One row per finished episode. Loss columns are means over the training
/// steps run during that episode, NaN when none ran.
struct MetricsRow {
  double wall_clock_s = 0.0;
  std::uint64_t env_steps = 0;
  std::uint64_t episode = 0;
  double episode_reward = 0.0;
  double wm_loss = std::nan("");
  double actor_loss = std::nan("");
  double critic_loss = std::nan("");
  double measured_ratio = 0.0;
};

namespace detail {
inline std::string fmt_double(double v, const char* spec = "%.17g") {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}
inline double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  std::size_t used = 0;
  double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}
}  // namespace detail

/// Round-trips exactly: every value except wall clock is printed with 17
/// significant digits.
inline std::string format_row(const MetricsRow& r) {
  std::ostringstream o;
  o << detail::fmt_double(r.wall_clock_s, "%.3f") << ',' << r.env_steps << ',' << r.episode << ','
    << detail::fmt_double(r.episode_reward) << ',' << detail::fmt_double(r.wm_loss) << ','
    << detail::fmt_double(r.actor_loss) << ',' << detail::fmt_double(r.critic_loss) << ','
    << detail::fmt_double(r.measured_ratio);
  return o.str();
}

inline MetricsRow parse_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
  if (f.size() != 8) throw std::runtime_error("metrics row must have 8 columns: " + line);
  MetricsRow r;
  r.wall_clock_s = detail::parse_double(f[0]);
  r.env_steps = std::stoull(f[1]);
  r.episode = std::stoull(f[2]);
  r.episode_reward = detail::parse_double(f[3]);
  r.wm_loss = detail::parse_double(f[4]);
  r.actor_loss = detail::parse_double(f[5]);
  r.critic_loss = detail::parse_double(f[6]);
  r.measured_ratio = detail::parse_double(f[7]);
  return r;
}

inline std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw std::runtime_error("metrics file has an unexpected header: " + path.string());
  std::vector<MetricsRow> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(parse_row(line));
  return rows;
}

/// Append-only CSV writer. Opening with `keep_rows` drops any rows past that
/// count, which is how a resumed run discards episodes logged after its
/// checkpoint.
class MetricsLog {
 public:
  MetricsLog() = default;
  MetricsLog(const std::filesystem::path& path, std::size_t keep_rows) : path_(path) {
    std::vector<std::string> kept;
    if (keep_rows > 0) {
      std::ifstream in(path);
      std::string line;
      if (in && std::getline(in, line) && line == kMetricsHeader)
        while (kept.size() < keep_rows && std::getline(in, line))
          if (!line.empty()) kept.push_back(line);
      if (kept.size() != keep_rows) throw std::runtime_error("metrics file has fewer rows than the checkpoint expects: " + path.string());
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write metrics file " + path.string());
    out << kMetricsHeader << '\n';
    for (const auto& l : kept) out << l << '\n';
    last_ = kept.empty() ? MetricsRow{} : parse_row(kept.back());
  }

  void append(const MetricsRow& r) {
    if (r.env_steps < last_.env_steps || r.wall_clock_s < last_.wall_clock_s)
      throw std::logic_error("metrics rows must be monotone in wall clock and env steps");
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to metrics file " + path_.string());
    out << format_row(r) << '\n';
    last_ = r;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  MetricsRow last_;
};

}  // namespace tscdreamer::train
