#include "tscdreamer/sim/scenario.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Result tscd(const std::vector<std::string>& args) {
  std::string cmd = quote(TSCD_BINARY);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string l;
  while (std::getline(ss, l))
    if (!l.empty()) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& s, char d) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string f;
  while (std::getline(ss, f, d)) out.push_back(f);
  return out;
}

// metrics.csv without its wall-clock column.
std::vector<std::string> metrics_without_wall_clock(const fs::path& p) {
  std::vector<std::string> out;
  for (const auto& l : lines(slurp(p))) {
    auto f = split(l, ',');
    EXPECT_FALSE(f.empty());
    std::string joined;
    for (std::size_t i = 1; i < f.size(); ++i) joined += f[i] + ",";
    out.push_back(joined);
  }
  return out;
}

nlohmann::json json_file(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("tscd_cli_") + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::vector<std::string> small_train(const fs::path& out) {
    return {"train", "--intersections", "2", "--size", "XXS", "--episodes", "2", "--batch-size", "4", "--batch-length", "16",
            "--ratio", "4", "--seed", "3", "--out", out.string()};
  }

  fs::path dir_;
};

std::size_t main_links(int intersections) { return 2 * static_cast<std::size_t>(intersections + 1); }

}  // namespace

TEST_F(Cli, HelpListsEverySubcommand) {
  const Result r = tscd({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"train", "baseline", "evaluate", "sweep", "report"}) EXPECT_NE(r.output.find(s), std::string::npos) << s;
}

TEST_F(Cli, ZeroRatioIsAUsageError) {
  const Result r = tscd({"train", "--ratio", "0", "--out", (dir_ / "r").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("ratio"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "r" / "metrics.csv"));
}

TEST_F(Cli, NegativeRatioIsAUsageError) {
  EXPECT_NE(tscd({"train", "--ratio", "-2", "--out", (dir_ / "r").string()}).code, 0);
}

TEST_F(Cli, UnknownSizeIsRejected) { EXPECT_NE(tscd({"train", "--size", "XXL", "--out", (dir_ / "r").string()}).code, 0); }

TEST_F(Cli, EvaluateWithoutCheckpointFails) {
  EXPECT_NE(tscd({"evaluate", "--checkpoint", (dir_ / "missing.cdrm").string()}).code, 0);
}

TEST_F(Cli, IdenticalFlagsGiveIdenticalOutputs) {
  const Result a = tscd(small_train(dir_ / "a"));
  const Result b = tscd(small_train(dir_ / "b"));
  ASSERT_EQ(a.code, 0) << a.output;
  ASSERT_EQ(b.code, 0) << b.output;
  const auto ma = metrics_without_wall_clock(dir_ / "a" / "metrics.csv");
  EXPECT_EQ(ma.size(), 3u);
  EXPECT_EQ(ma, metrics_without_wall_clock(dir_ / "b" / "metrics.csv"));

  for (const char* run : {"a", "b"})
    ASSERT_EQ(tscd({"evaluate", "--checkpoint", (dir_ / run / "checkpoint.cdrm").string(), "--episodes", "2", "--seed", "9", "--out",
                    (dir_ / (std::string("eval_") + run)).string()})
                  .code,
              0);
  EXPECT_EQ(slurp(dir_ / "eval_a" / "trace.csv"), slurp(dir_ / "eval_b" / "trace.csv"));
  EXPECT_EQ(json_file(dir_ / "eval_a" / "summary.json")["episode_rewards"], json_file(dir_ / "eval_b" / "summary.json")["episode_rewards"]);
}

TEST_F(Cli, DifferentSeedsGiveDifferentRuns) {
  ASSERT_EQ(tscd(small_train(dir_ / "a")).code, 0);
  auto args = small_train(dir_ / "b");
  ASSERT_EQ(args[13], "--seed");
  args[14] = "4";
  ASSERT_EQ(tscd(args).code, 0);
  EXPECT_NE(metrics_without_wall_clock(dir_ / "a" / "metrics.csv"), metrics_without_wall_clock(dir_ / "b" / "metrics.csv"));
}

TEST_F(Cli, TrainWritesCompletedManifest) {
  ASSERT_EQ(tscd(small_train(dir_ / "a")).code, 0);
  const auto m = json_file(dir_ / "a" / "manifest.json");
  EXPECT_EQ(m["command"], "train");
  EXPECT_EQ(m["status"], "completed");
  EXPECT_EQ(m["seed"], 3);
  EXPECT_FALSE(m["code_version"].get<std::string>().empty());
  EXPECT_FALSE(m["started_at"].get<std::string>().empty());
  EXPECT_FALSE(m["finished_at"].get<std::string>().empty());
  EXPECT_DOUBLE_EQ(m["config"]["ratio"].get<double>(), 4.0);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "checkpoint.cdrm"));
}

TEST_F(Cli, StoppedRunResumesToTheSameMetrics) {
  ASSERT_EQ(tscd(small_train(dir_ / "full")).code, 0);
  auto args = small_train(dir_ / "split");
  args.insert(args.end(), {"--checkpoint-every", "1", "--stop-after", "1"});
  ASSERT_EQ(tscd(args).code, 0);
  EXPECT_EQ(lines(slurp(dir_ / "split" / "metrics.csv")).size(), 2u);
  EXPECT_EQ(json_file(dir_ / "split" / "manifest.json")["status"], "running");
  args.resize(args.size() - 2);
  ASSERT_EQ(tscd(args).code, 0);
  EXPECT_EQ(metrics_without_wall_clock(dir_ / "full" / "metrics.csv"), metrics_without_wall_clock(dir_ / "split" / "metrics.csv"));
}

TEST_F(Cli, ConfigFromManifestReproducesTheRun) {
  ASSERT_EQ(tscd(small_train(dir_ / "a")).code, 0);
  ASSERT_EQ(tscd({"train", "--config", (dir_ / "a" / "manifest.json").string(), "--out", (dir_ / "b").string()}).code, 0);
  EXPECT_EQ(metrics_without_wall_clock(dir_ / "a" / "metrics.csv"), metrics_without_wall_clock(dir_ / "b" / "metrics.csv"));
}

TEST_F(Cli, BaselineKeepsEverySplitAtFifty) {
  const Result r = tscd({"baseline", "--intersections", "3", "--seed", "2", "--out", (dir_ / "base").string()});
  ASSERT_EQ(r.code, 0) << r.output;
  const auto s = json_file(dir_ / "base" / "summary.json");
  EXPECT_EQ(s["split_min_s"], 50);
  EXPECT_EQ(s["split_max_s"], 50);
  EXPECT_EQ(json_file(dir_ / "base" / "manifest.json")["command"], "baseline");
}

TEST_F(Cli, BaselineOnScenarioOneBuildsQueues) {
  ASSERT_EQ(tscd({"baseline", "--scenario", "1", "--seed", "0", "--out", (dir_ / "base").string()}).code, 0);
  EXPECT_GT(json_file(dir_ / "base" / "summary.json")["max_weighted_queue"].get<int>(), 50);
}

TEST_F(Cli, ZeroDemandScenarioScoresZero) {
  auto sc = tscdreamer::sim::default_scenario(1, 3);
  sc.demand.west_east = sc.demand.east_west = sc.demand.terminal_to_side = sc.demand.side_to_terminal = 0.0;
  std::ofstream(dir_ / "empty.json") << tscdreamer::sim::to_json(sc).dump(2);
  ASSERT_EQ(tscd({"baseline", "--scenario", (dir_ / "empty.json").string(), "--episodes", "2", "--out", (dir_ / "base").string()}).code, 0);
  const auto s = json_file(dir_ / "base" / "summary.json");
  EXPECT_EQ(s["episode_rewards"], nlohmann::json::array({0.0, 0.0}));
  EXPECT_EQ(s["max_queue"], 0);
}

TEST_F(Cli, EvaluateTraceHasOneRowPerLinkAndInterval) {
  ASSERT_EQ(tscd(small_train(dir_ / "a")).code, 0);
  ASSERT_EQ(tscd({"evaluate", "--checkpoint", (dir_ / "a" / "checkpoint.cdrm").string(), "--episodes", "3", "--out", (dir_ / "ev").string()})
                .code,
            0);
  const auto s = json_file(dir_ / "ev" / "summary.json");
  EXPECT_EQ(s["episodes"], 3);
  EXPECT_EQ(s["episode_rewards"].size(), 3u);
  const auto rows = lines(slurp(dir_ / "ev" / "trace.csv"));
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0], "time_s,link_id,queue");
  EXPECT_EQ(rows.size() - 1, 144 * main_links(2));
  std::map<long long, std::set<int>> by_time;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = split(rows[i], ',');
    ASSERT_EQ(f.size(), 3u);
    by_time[std::stoll(f[0])].insert(std::stoi(f[1]));
    EXPECT_GE(std::stoi(f[2]), 0);
  }
  EXPECT_EQ(by_time.size(), 144u);
  for (const auto& [t, ids] : by_time) EXPECT_EQ(ids.size(), main_links(2)) << t;
}

TEST_F(Cli, EvaluateRejectsAMismatchedCorridor) {
  ASSERT_EQ(tscd(small_train(dir_ / "a")).code, 0);
  EXPECT_NE(tscd({"evaluate", "--checkpoint", (dir_ / "a" / "checkpoint.cdrm").string(), "--scenario", "1", "--intersections", "4", "--out",
                  (dir_ / "ev").string()})
                .code,
            0);
}

TEST_F(Cli, CorruptCheckpointIsRejected) {
  ASSERT_EQ(tscd(small_train(dir_ / "a")).code, 0);
  std::string bytes = slurp(dir_ / "a" / "checkpoint.cdrm");
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(dir_ / "bad.cdrm", std::ios::binary) << bytes;
  const Result r = tscd({"evaluate", "--checkpoint", (dir_ / "bad.cdrm").string(), "--out", (dir_ / "ev").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("error"), std::string::npos);
}

TEST_F(Cli, ReportWritesCurvesAndHeatmaps) {
  ASSERT_EQ(tscd(small_train(dir_ / "runs" / "a")).code, 0);
  ASSERT_EQ(tscd({"baseline", "--intersections", "2", "--out", (dir_ / "runs" / "baseline").string()}).code, 0);
  ASSERT_EQ(tscd({"evaluate", "--checkpoint", (dir_ / "runs" / "a" / "checkpoint.cdrm").string(), "--out", (dir_ / "runs" / "evaluate").string()})
                .code,
            0);
  const Result r = tscd({"report", "--runs", (dir_ / "runs").string(), "--out", (dir_ / "rep").string()});
  ASSERT_EQ(r.code, 0) << r.output;

  const std::size_t episodes = lines(slurp(dir_ / "runs" / "a" / "metrics.csv")).size() - 1;
  for (const char* f : {"a_reward_vs_wall_clock.csv", "a_reward_vs_env_steps.csv"}) {
    const auto rows = lines(slurp(dir_ / "rep" / f));
    EXPECT_EQ(rows.size() - 1, episodes) << f;
  }
  const auto steps = lines(slurp(dir_ / "rep" / "a_reward_vs_env_steps.csv"));
  EXPECT_EQ(split(steps.back(), ',')[0], "288");

  for (const char* f : {"heatmap_baseline.csv", "heatmap_controlled.csv"}) {
    const auto rows = lines(slurp(dir_ / "rep" / f));
    ASSERT_EQ(rows.size(), 145u) << f;
    for (const auto& row : rows) EXPECT_EQ(split(row, ',').size(), main_links(2) + 1) << f;
  }

  for (const char* f : {"a_reward_vs_wall_clock.svg", "a_reward_vs_env_steps.svg", "heatmap.svg"}) {
    boost::property_tree::ptree pt;
    ASSERT_NO_THROW(boost::property_tree::read_xml((dir_ / "rep" / f).string(), pt)) << f;
    EXPECT_EQ(pt.count("svg"), 1u) << f;
  }
  boost::property_tree::ptree heat;
  boost::property_tree::read_xml((dir_ / "rep" / "heatmap.svg").string(), heat);
  std::size_t cells = 0;
  for (const auto& child : heat.get_child("svg"))
    if (child.first == "rect") ++cells;
  EXPECT_GE(cells, 2 * 144 * main_links(2));
}

TEST_F(Cli, ReportWithoutRunsFails) {
  fs::create_directories(dir_ / "empty");
  EXPECT_NE(tscd({"report", "--runs", (dir_ / "empty").string()}).code, 0);
}

TEST_F(Cli, SweepRunsEveryCellAndSkipsFinishedOnes) {
  const std::vector<std::string> args{"sweep", "--sizes", "XXS", "--ratios", "2,4", "--seeds", "0", "--jobs", "2", "--intersections", "2",
                                      "--episodes", "2", "--batch-size", "4", "--batch-length", "16", "--out", (dir_ / "sw").string()};
  const Result first = tscd(args);
  ASSERT_EQ(first.code, 0) << first.output;
  for (const char* cell : {"XXS_ratio2_seed0", "XXS_ratio4_seed0"}) {
    const auto m = json_file(dir_ / "sw" / cell / "manifest.json");
    EXPECT_EQ(m["status"], "completed") << cell;
    EXPECT_EQ(lines(slurp(dir_ / "sw" / cell / "metrics.csv")).size(), 3u) << cell;
  }
  const auto summary = json_file(dir_ / "sw" / "summary.json");
  ASSERT_EQ(summary["cells"].size(), 2u);
  EXPECT_EQ(summary["cells"][0]["rank"], 1);
  EXPECT_EQ(summary["cells"][1]["rank"], 2);
  EXPECT_GE(summary["cells"][0]["final_window_mean_reward"].get<double>(), summary["cells"][1]["final_window_mean_reward"].get<double>());
  EXPECT_EQ(json_file(dir_ / "sw" / "manifest.json")["status"], "completed");

  const auto before = slurp(dir_ / "sw" / "XXS_ratio2_seed0" / "metrics.csv");
  const Result second = tscd(args);
  ASSERT_EQ(second.code, 0);
  const auto rerun = json_file(dir_ / "sw" / "summary.json");
  for (const auto& c : rerun["cells"]) EXPECT_TRUE(c["skipped"].get<bool>());
  EXPECT_EQ(before, slurp(dir_ / "sw" / "XXS_ratio2_seed0" / "metrics.csv"));
}

TEST_F(Cli, SweepRecordsAFailedCellAndContinues) {
  fs::create_directories(dir_ / "sw" / "XXS_ratio4_seed0");
  std::ofstream(dir_ / "sw" / "XXS_ratio4_seed0" / "checkpoint.cdrm") << "not a checkpoint";
  const Result r = tscd({"sweep", "--sizes", "XXS", "--ratios", "2,4", "--seeds", "0", "--jobs", "1", "--intersections", "2", "--episodes", "2",
                         "--batch-size", "4", "--batch-length", "16", "--out", (dir_ / "sw").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(json_file(dir_ / "sw" / "XXS_ratio2_seed0" / "manifest.json")["status"], "completed");
  const auto failed = json_file(dir_ / "sw" / "XXS_ratio4_seed0" / "manifest.json");
  EXPECT_EQ(failed["status"], "failed");
  EXPECT_FALSE(failed["error"].get<std::string>().empty());
  const auto summary = json_file(dir_ / "sw" / "summary.json");
  EXPECT_EQ(summary["completed"], 1);
  EXPECT_EQ(summary["failed"], 1);
  EXPECT_TRUE(summary["cells"][1]["rank"].is_null());
  EXPECT_EQ(json_file(dir_ / "sw" / "manifest.json")["status"], "failed");
}
