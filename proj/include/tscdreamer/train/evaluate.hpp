#pragma once

#include "tscdreamer/train/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace tscdreamer::train {

struct TraceRow {
  std::int64_t time_s = 0;  // simulation time at the end of the control interval
  int link_id = 0;
  int queue = 0;  // ground-truth main-line queue, unclipped
};

struct EvalSummary {
  std::vector<double> rewards;  // one per episode
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<TraceRow> trace;            // first episode only
  std::vector<std::vector<int>> splits;   // first episode, one row per step
  int max_weighted_queue = 0;             // over all episodes, links with positive weight
  int max_queue = 0;                      // over all episodes and main-line links
};

using Policy = std::function<env::Action(const env::Observation&, bool is_first)>;

/// Seeds match between runs with the same `seed`, so a baseline and an
/// evaluated policy face identical demand draws.
inline EvalSummary run_episodes(const sim::ScenarioConfig& scenario, const env::EnvConfig& env_cfg, int n_episodes, std::uint64_t seed,
                                const Policy& policy) {
  if (n_episodes <= 0) throw std::invalid_argument("episode count must be positive");
  env::TscEnv env(scenario, env_cfg);
  EvalSummary s;
  for (int e = 0; e < n_episodes; ++e) {
    env::Observation obs = env.reset(derive_seed(seed ^ scenario.seed, kEvalEpisode, static_cast<std::uint64_t>(e)));
    double total = 0.0;
    bool first = true;
    while (!env.done()) {
      env::StepResult r = env.step(policy(obs, first));
      first = false;
      total += r.reward;
      for (std::size_t l = 0; l < r.raw_queues.size(); ++l) {
        s.max_queue = std::max(s.max_queue, r.raw_queues[l]);
        if (env.weights()[l] > 0.0) s.max_weighted_queue = std::max(s.max_weighted_queue, r.raw_queues[l]);
        if (e == 0) s.trace.push_back({env.state().time, static_cast<int>(l), r.raw_queues[l]});
      }
      if (e == 0) s.splits.push_back(env.current_splits());
      obs = r.observation;
    }
    s.rewards.push_back(total);
  }
  s.mean = std::accumulate(s.rewards.begin(), s.rewards.end(), 0.0) / static_cast<double>(s.rewards.size());
  s.min = *std::min_element(s.rewards.begin(), s.rewards.end());
  s.max = *std::max_element(s.rewards.begin(), s.rewards.end());
  return s;
}

/// Fixed-timing base case: every action keeps the current split.
inline EvalSummary run_baseline(const sim::ScenarioConfig& scenario, const env::EnvConfig& env_cfg, std::uint64_t seed,
                                int n_episodes = 1) {
  const int m = scenario.intersections;
  return run_episodes(scenario, env_cfg, n_episodes, seed, [m](const env::Observation&, bool) { return env::Action::keep(m); });
}

/// Greedy (argmax) policy from a checkpoint; no parameters change.
inline EvalSummary evaluate_policy(const Checkpoint& ckpt, const sim::ScenarioConfig& scenario, int n_episodes, std::uint64_t seed) {
  const TrainConfig cfg = train_config_from_json(nlohmann::json::parse(ckpt.blob("config")));
  if (scenario.intersections != cfg.scenario.intersections)
    throw std::invalid_argument("evaluation corridor must have as many intersections as the training corridor");
  const int m = scenario.intersections;
  const int obs_dim = env::TscEnv(scenario, cfg.env).observation_size();
  Agent agent(cfg, obs_dim, m);
  agent.load(ckpt);
  Rng unused(0);
  return run_episodes(scenario, cfg.env, n_episodes, seed, [&](const env::Observation& obs, bool first) {
    if (first) agent.reset();
    return agent.act(obs, agent::ActMode::kEval, unused);
  });
}

inline EvalSummary evaluate_policy(const std::filesystem::path& checkpoint, const sim::ScenarioConfig& scenario, int n_episodes,
                                   std::uint64_t seed) {
  return evaluate_policy(load_checkpoint(checkpoint), scenario, n_episodes, seed);
}

}  // namespace tscdreamer::train
