// tscd: train, baseline, evaluate, sweep, report.

#include "tscdreamer/exp/report.hpp"
#include "tscdreamer/exp/run_io.hpp"
#include "tscdreamer/exp/sweep.hpp"
#include "tscdreamer/train/evaluate.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

using namespace tscdreamer;
namespace fs = std::filesystem;

namespace {

struct ScenarioArgs {
  std::string scenario = "1";
  int intersections = 5;
  CLI::Option* intersections_opt = nullptr;
};

void add_scenario_flags(CLI::App* app, ScenarioArgs& a, bool required = false) {
  auto* s = app->add_option("--scenario", a.scenario, "Demand pattern 1 or 2, or a scenario JSON file");
  if (required) s->required();
  a.intersections_opt =
      app->add_option("--intersections", a.intersections, "Intersections on the corridor (default 5)")->check(CLI::Range(1, 64));
}

sim::ScenarioConfig resolve_scenario(const ScenarioArgs& a) {
  sim::ScenarioConfig c;
  if (a.scenario == "1" || a.scenario == "2") {
    c = sim::default_scenario(std::stoi(a.scenario), a.intersections);
  } else {
    c = sim::load_scenario(a.scenario);
    if (a.intersections_opt && a.intersections_opt->count() > 0) {
      c.intersections = a.intersections;
      c.offsets.clear();
    }
  }
  sim::validate(c);
  return c;
}

struct TrainArgs {
  ScenarioArgs scenario;
  std::string config_path;
  std::string size = "XXS";
  double ratio = 32.0;
  std::uint64_t seed = 0;
  std::uint64_t budget = 20 * 144;
  std::uint64_t episodes = 0;
  std::string out;
  int batch_size = 16;
  int batch_length = 64;
  int checkpoint_every = 10;
  std::size_t replay_capacity = 500000;
  double wm_lr = 1e-4, actor_lr = 3e-5, critic_lr = 3e-5;
  int stop_after = 0;
  std::map<std::string, CLI::Option*> opts;
};

void add_training_flags(CLI::App* app, TrainArgs& a) {
  a.opts["size"] = app->add_option("--size", a.size, "Model size preset")->check(CLI::IsMember({"XXS", "XS", "S", "M", "L"}));
  a.opts["budget"] = app->add_option("--budget", a.budget, "Environment-step budget, rounded up to whole 144-step episodes")
                         ->check(CLI::PositiveNumber);
  a.opts["episodes"] = app->add_option("--episodes", a.episodes, "Episode budget (overrides --budget)")->check(CLI::PositiveNumber);
  a.opts["batch_size"] = app->add_option("--batch-size", a.batch_size, "Sequences per training batch")->check(CLI::PositiveNumber);
  a.opts["batch_length"] = app->add_option("--batch-length", a.batch_length, "Steps per training sequence")->check(CLI::PositiveNumber);
  a.opts["checkpoint_every"] =
      app->add_option("--checkpoint-every", a.checkpoint_every, "Checkpoint cadence in episodes")->check(CLI::PositiveNumber);
  a.opts["replay_capacity"] =
      app->add_option("--replay-capacity", a.replay_capacity, "Replay buffer capacity in steps")->check(CLI::PositiveNumber);
  a.opts["wm_lr"] = app->add_option("--wm-lr", a.wm_lr, "World-model learning rate")->check(CLI::PositiveNumber);
  a.opts["actor_lr"] = app->add_option("--actor-lr", a.actor_lr, "Actor learning rate")->check(CLI::PositiveNumber);
  a.opts["critic_lr"] = app->add_option("--critic-lr", a.critic_lr, "Critic learning rate")->check(CLI::PositiveNumber);
}

const CLI::Validator kPositiveRatio(
    [](std::string& v) -> std::string {
      try {
        return std::stod(v) > 0.0 ? "" : "training ratio must be greater than 0";
      } catch (const std::exception&) {
        return "training ratio must be a number";
      }
    },
    "RATIO>0");

bool given(const TrainArgs& a, const std::string& k) {
  auto it = a.opts.find(k);
  return it != a.opts.end() && it->second->count() > 0;
}

train::TrainConfig build_train_config(const TrainArgs& a) {
  train::TrainConfig c;
  if (!a.config_path.empty()) {
    nlohmann::json j = exp::read_json(a.config_path);
    if (j.contains("config") && j.contains("status")) j = j.at("config");  // a run manifest
    c = train::train_config_from_json(j);
  }
  if (a.config_path.empty() || a.scenario.intersections_opt->count() > 0 || given(a, "scenario")) c.scenario = resolve_scenario(a.scenario);
  if (a.config_path.empty() || given(a, "size")) c.size = a.size;
  if (a.config_path.empty() || given(a, "ratio")) c.ratio = a.ratio;
  if (a.config_path.empty() || given(a, "seed")) c.seed = a.seed;
  if (a.config_path.empty() || given(a, "budget")) c.budget_env_steps = a.budget;
  if (given(a, "episodes")) c.budget_env_steps = a.episodes * static_cast<std::uint64_t>(c.env.steps_per_episode());
  if (a.config_path.empty() || given(a, "batch_size")) c.batch_size = a.batch_size;
  if (a.config_path.empty() || given(a, "batch_length")) c.batch_length = a.batch_length;
  if (a.config_path.empty() || given(a, "checkpoint_every")) c.checkpoint_every = a.checkpoint_every;
  if (a.config_path.empty() || given(a, "replay_capacity")) c.replay_capacity = a.replay_capacity;
  if (a.config_path.empty() || given(a, "wm_lr")) c.wm_lr = a.wm_lr;
  if (a.config_path.empty() || given(a, "actor_lr")) c.actor_lr = a.actor_lr;
  if (a.config_path.empty() || given(a, "critic_lr")) c.critic_lr = a.critic_lr;
  c.validate();
  return c;
}

fs::path default_dir(const std::string& leaf) { return exp::default_output_root() / leaf; }

int cmd_train(const TrainArgs& a) {
  const train::TrainConfig cfg = build_train_config(a);
  const fs::path out = a.out.empty() ? default_dir("train") / exp::cell_name(cfg.size, cfg.ratio, cfg.seed) : fs::path(a.out);
  fs::create_directories(out);

  exp::RunManifest m;
  if (auto prev = exp::read_manifest(out)) {
    if (prev->config != train::to_json(cfg))
      throw std::runtime_error("run directory " + out.string() + " holds a run with a different configuration");
    m = *prev;
  } else {
    m.command = "train";
    m.config = train::to_json(cfg);
    m.seed = cfg.seed;
    m.started_at = exp::utc_timestamp();
  }
  m.status = "running";
  m.error.clear();
  m.finished_at.clear();
  exp::write_manifest(out, m);

  try {
    train::Trainer trainer(cfg, out);
    if (trainer.episodes_done() > 0) std::cout << "resuming after episode " << trainer.episodes_done() << '\n';
    trainer.on_episode([](const train::MetricsRow& r) {
      std::printf("episode %llu  env_steps %llu  reward %.1f  ratio %.2f\n", static_cast<unsigned long long>(r.episode),
                  static_cast<unsigned long long>(r.env_steps), r.episode_reward, r.measured_ratio);
      std::fflush(stdout);
    });
    trainer.run(a.stop_after > 0 ? a.stop_after : -1);
    if (!trainer.finished()) {
      exp::write_manifest(out, m);
      std::cout << "stopped after " << trainer.episodes_done() << " episodes; rerun the same command to resume\n";
      return 0;
    }
  } catch (const std::exception& e) {
    m.status = "failed";
    m.error = e.what();
    m.finished_at = exp::utc_timestamp();
    exp::write_manifest(out, m);
    throw;
  }
  m.status = "completed";
  m.finished_at = exp::utc_timestamp();
  exp::write_manifest(out, m);
  std::cout << "run complete: " << out.string() << '\n';
  return 0;
}

void write_eval_run(const fs::path& out, const std::string& command, const nlohmann::json& config, std::uint64_t seed,
                    const train::EvalSummary& s, const nlohmann::json& extra) {
  exp::RunManifest m;
  m.command = command;
  m.config = config;
  m.seed = seed;
  m.started_at = exp::utc_timestamp();
  exp::write_eval_outputs(out, s, extra);
  m.status = "completed";
  m.finished_at = exp::utc_timestamp();
  exp::write_manifest(out, m);
  std::printf("mean episode reward %.3f  max queue %d  max weighted-link queue %d\n", s.mean, s.max_queue, s.max_weighted_queue);
  std::cout << "wrote " << (out / "summary.json").string() << " and " << (out / "trace.csv").string() << '\n';
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

fs::path self_executable(const char* argv0) {
  std::error_code ec;
  fs::path p = fs::read_symlink("/proc/self/exe", ec);
  return ec ? fs::absolute(argv0) : p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based traffic signal control: training, sweeps, evaluation and reports"};
  app.require_subcommand(1);

  // train
  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train one run (resumes from the checkpoint in --out if present)");
  add_scenario_flags(train_cmd, ta.scenario);
  ta.opts["scenario"] = train_cmd->get_option("--scenario");
  add_training_flags(train_cmd, ta);
  ta.opts["ratio"] = train_cmd->add_option("--ratio", ta.ratio, "Training ratio (replayed steps per env step)")->check(kPositiveRatio);
  ta.opts["seed"] = train_cmd->add_option("--seed", ta.seed, "Run seed");
  train_cmd->add_option("--out", ta.out, "Run directory");
  train_cmd->add_option("--config", ta.config_path, "Start from a config or run manifest JSON; explicit flags override it");
  train_cmd->add_option("--stop-after", ta.stop_after, "Stop after this many episodes in this invocation")->check(CLI::PositiveNumber);

  // baseline
  ScenarioArgs ba;
  std::uint64_t b_seed = 0;
  int b_episodes = 1;
  std::string b_out;
  auto* base_cmd = app.add_subcommand("baseline", "Fixed-timing base case: every split stays at its initial value");
  add_scenario_flags(base_cmd, ba);
  base_cmd->add_option("--seed", b_seed, "Demand seed");
  base_cmd->add_option("--episodes", b_episodes, "Episodes")->check(CLI::PositiveNumber);
  base_cmd->add_option("--out", b_out, "Output directory");

  // evaluate
  std::string e_ckpt, e_out;
  ScenarioArgs ea;
  ea.scenario.clear();
  int e_episodes = 3;
  std::uint64_t e_seed = 0;
  auto* eval_cmd = app.add_subcommand("evaluate", "Greedy policy from a checkpoint, no training");
  eval_cmd->add_option("--checkpoint", e_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  add_scenario_flags(eval_cmd, ea);
  eval_cmd->add_option("--episodes", e_episodes, "Episodes")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", e_seed, "Demand seed (same seed as a baseline gives the same demand draws)");
  eval_cmd->add_option("--out", e_out, "Output directory");

  // sweep
  TrainArgs sa;
  std::string s_sizes = "XS,S,M,L", s_ratios = "32,64,128,256,512", s_seeds = "0", s_out;
  int s_jobs = std::max(1, static_cast<int>(std::thread::hardware_concurrency()) - 1);
  auto* sweep_cmd = app.add_subcommand("sweep", "Train every size x ratio x seed cell as its own process");
  add_scenario_flags(sweep_cmd, sa.scenario);
  add_training_flags(sweep_cmd, sa);
  sweep_cmd->add_option("--sizes", s_sizes, "Comma-separated size presets");
  sweep_cmd->add_option("--ratios", s_ratios, "Comma-separated training ratios");
  sweep_cmd->add_option("--seeds", s_seeds, "Comma-separated seeds");
  sweep_cmd->add_option("--out", s_out, "Sweep directory");
  sweep_cmd->add_option("--jobs", s_jobs, "Cells run at once (default: logical cores - 1)")->check(CLI::PositiveNumber);

  // report
  std::string r_runs, r_out, r_base, r_ctrl;
  auto* report_cmd = app.add_subcommand("report", "Reward curves and queue heatmaps as CSV and SVG");
  report_cmd->add_option("--runs", r_runs, "Directory holding one or more runs")->required();
  report_cmd->add_option("--out", r_out, "Report directory (default <runs>/report)");
  report_cmd->add_option("--baseline-trace", r_base, "Base-case trace.csv (default <runs>/baseline/trace.csv if present)");
  report_cmd->add_option("--controlled-trace", r_ctrl, "Controlled trace.csv (default <runs>/evaluate/trace.csv if present)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(ta);

    if (base_cmd->parsed()) {
      const sim::ScenarioConfig sc = resolve_scenario(ba);
      const env::EnvConfig ec;
      const auto s = train::run_baseline(sc, ec, b_seed, b_episodes);
      write_eval_run(b_out.empty() ? default_dir("baseline") : fs::path(b_out), "baseline",
                     {{"scenario", sim::to_json(sc)}, {"env", train::to_json(ec)}, {"episodes", b_episodes}, {"seed", b_seed}}, b_seed, s,
                     {{"policy", "fixed splits"}});
      return 0;
    }

    if (eval_cmd->parsed()) {
      const train::Checkpoint ckpt = train::load_checkpoint(e_ckpt);
      const train::TrainConfig tc = train::train_config_from_json(nlohmann::json::parse(ckpt.blob("config")));
      sim::ScenarioConfig sc = tc.scenario;
      if (!ea.scenario.empty()) {
        if (ea.intersections_opt->count() == 0) ea.intersections = tc.scenario.intersections;
        sc = resolve_scenario(ea);
      }
      const auto s = train::evaluate_policy(ckpt, sc, e_episodes, e_seed);
      write_eval_run(e_out.empty() ? default_dir("evaluate") : fs::path(e_out), "evaluate",
                     {{"checkpoint", fs::absolute(e_ckpt).string()}, {"scenario", sim::to_json(sc)}, {"episodes", e_episodes}, {"seed", e_seed}},
                     e_seed, s, {{"policy", "greedy"}, {"checkpoint_episodes", ckpt.counter("episodes_done")}});
      return 0;
    }

    if (sweep_cmd->parsed()) {
      exp::SweepSpec spec;
      spec.sizes = split_list(s_sizes);
      for (const auto& s : spec.sizes) agent::size_preset(s);
      for (const auto& r : split_list(s_ratios)) {
        const double v = std::stod(r);
        if (!(v > 0.0)) throw CLI::ValidationError("--ratios", "training ratios must be positive");
        spec.ratios.push_back(v);
      }
      for (const auto& s : split_list(s_seeds)) spec.seeds.push_back(std::stoull(s));
      spec.out = s_out.empty() ? default_dir("sweep") : fs::path(s_out);
      spec.jobs = s_jobs;
      spec.executable = self_executable(argv[0]);
      // Shared flags go to every cell verbatim.
      spec.train_args = {"--scenario", sa.scenario.scenario};
      if (sa.scenario.intersections_opt->count() > 0 || sa.scenario.scenario == "1" || sa.scenario.scenario == "2")
        spec.train_args.insert(spec.train_args.end(), {"--intersections", std::to_string(sa.scenario.intersections)});
      auto pass = [&](const std::string& key, const std::string& flag, const std::string& value) {
        if (given(sa, key)) spec.train_args.insert(spec.train_args.end(), {flag, value});
      };
      pass("budget", "--budget", std::to_string(sa.budget));
      pass("episodes", "--episodes", std::to_string(sa.episodes));
      pass("batch_size", "--batch-size", std::to_string(sa.batch_size));
      pass("batch_length", "--batch-length", std::to_string(sa.batch_length));
      pass("checkpoint_every", "--checkpoint-every", std::to_string(sa.checkpoint_every));
      pass("replay_capacity", "--replay-capacity", std::to_string(sa.replay_capacity));
      char buf[64];
      auto g = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
      };
      pass("wm_lr", "--wm-lr", g(sa.wm_lr));
      pass("actor_lr", "--actor-lr", g(sa.actor_lr));
      pass("critic_lr", "--critic-lr", g(sa.critic_lr));

      fs::create_directories(spec.out);
      exp::RunManifest m;
      m.command = "sweep";
      m.config = {{"sizes", spec.sizes}, {"ratios", spec.ratios}, {"seeds", spec.seeds}, {"jobs", spec.jobs}, {"train_args", spec.train_args}};
      m.started_at = exp::utc_timestamp();
      exp::write_manifest(spec.out, m);

      const auto outcomes = exp::run_sweep(spec);
      const nlohmann::json summary = exp::sweep_summary(spec, outcomes);
      exp::write_text_atomic(spec.out / "summary.json", summary.dump(2) + "\n");
      int failed = 0, skipped = 0;
      for (const auto& o : outcomes) {
        failed += o.status != "completed";
        skipped += o.skipped;
        std::printf("%-28s %s%s\n", o.cell.dir.filename().string().c_str(), o.status.c_str(), o.skipped ? " (skipped)" : "");
      }
      m.status = failed ? "failed" : "completed";
      if (failed) m.error = std::to_string(failed) + " cell(s) failed";
      m.finished_at = exp::utc_timestamp();
      exp::write_manifest(spec.out, m);
      std::cout << outcomes.size() << " cells, " << skipped << " skipped, " << failed << " failed; summary "
                << (spec.out / "summary.json").string() << '\n';
      return failed ? 1 : 0;
    }

    if (report_cmd->parsed()) {
      exp::ReportInputs in;
      in.runs = r_runs;
      in.out = r_out.empty() ? fs::path(r_runs) / "report" : fs::path(r_out);
      if (!r_base.empty()) in.baseline_trace = fs::path(r_base);
      else if (fs::exists(fs::path(r_runs) / "baseline" / "trace.csv")) in.baseline_trace = fs::path(r_runs) / "baseline" / "trace.csv";
      if (!r_ctrl.empty()) in.controlled_trace = fs::path(r_ctrl);
      else if (fs::exists(fs::path(r_runs) / "evaluate" / "trace.csv")) in.controlled_trace = fs::path(r_runs) / "evaluate" / "trace.csv";
      for (const auto& f : exp::write_report(in)) std::cout << f.string() << '\n';
      return 0;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
