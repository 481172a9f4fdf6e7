#pragma once

// Interleaved collect/train loop with a per-step training-ratio scheduler.

#include "tscdreamer/agent/behavior.hpp"
#include "tscdreamer/agent/presets.hpp"
#include "tscdreamer/agent/world_model.hpp"
#include "tscdreamer/env/tsc_env.hpp"
#include "tscdreamer/sim/scenario.hpp"
#include "tscdreamer/train/checkpoint.hpp"
#include "tscdreamer/train/metrics.hpp"
#include "tscdreamer/train/replay.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tscdreamer::train {

using Rng = std::mt19937_64;

struct TrainConfig {
  sim::ScenarioConfig scenario = sim::default_scenario(1);
  env::EnvConfig env;
  std::string size = "XXS";
  double ratio = 32.0;
  int batch_size = 16;
  int batch_length = 64;
  std::uint64_t seed = 0;
  std::uint64_t budget_env_steps = 20 * 144;  // rounded up to whole episodes
  int checkpoint_every = 10;                  // episodes
  std::size_t replay_capacity = 500000;
  int prefill_episodes = 1;
  double wm_lr = 1e-4;
  double actor_lr = 3e-5;
  double critic_lr = 3e-5;

  void validate() const {
    if (!(ratio > 0.0) || !std::isfinite(ratio)) throw std::invalid_argument("training ratio must be positive");
    if (batch_size <= 0 || batch_length <= 0) throw std::invalid_argument("batch size and length must be positive");
    if (checkpoint_every <= 0) throw std::invalid_argument("checkpoint cadence must be positive");
    if (prefill_episodes < 1) throw std::invalid_argument("at least one prefill episode is required");
    if (replay_capacity < static_cast<std::size_t>(batch_length)) throw std::invalid_argument("replay capacity below one batch window");
    if (!(wm_lr > 0.0 && actor_lr > 0.0 && critic_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
    agent::size_preset(size);
    env.validate();
    sim::validate(scenario);
  }
};

inline nlohmann::json to_json(const env::EnvConfig& e) {
  return {{"control_interval_s", e.control_interval_s}, {"queue_upper", e.queue_upper},
          {"light_congestion", e.light_congestion},     {"heavy_congestion", e.heavy_congestion},
          {"split_lower_s", e.split_lower_s},           {"split_upper_s", e.split_upper_s},
          {"split_delta_s", e.split_delta_s},           {"heavy_penalty", e.heavy_penalty},
          {"episode_length_s", e.episode_length_s},     {"warmup_s", e.warmup_s}};
}

inline env::EnvConfig env_config_from_json(const nlohmann::json& j) {
  env::EnvConfig e;
  e.control_interval_s = j.value("control_interval_s", e.control_interval_s);
  e.queue_upper = j.value("queue_upper", e.queue_upper);
  e.light_congestion = j.value("light_congestion", e.light_congestion);
  e.heavy_congestion = j.value("heavy_congestion", e.heavy_congestion);
  e.split_lower_s = j.value("split_lower_s", e.split_lower_s);
  e.split_upper_s = j.value("split_upper_s", e.split_upper_s);
  e.split_delta_s = j.value("split_delta_s", e.split_delta_s);
  e.heavy_penalty = j.value("heavy_penalty", e.heavy_penalty);
  e.episode_length_s = j.value("episode_length_s", e.episode_length_s);
  e.warmup_s = j.value("warmup_s", e.warmup_s);
  return e;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"scenario", sim::to_json(c.scenario)},
          {"env", to_json(c.env)},
          {"size", c.size},
          {"ratio", c.ratio},
          {"batch_size", c.batch_size},
          {"batch_length", c.batch_length},
          {"seed", c.seed},
          {"budget_env_steps", c.budget_env_steps},
          {"checkpoint_every", c.checkpoint_every},
          {"replay_capacity", c.replay_capacity},
          {"prefill_episodes", c.prefill_episodes},
          {"wm_lr", c.wm_lr},
          {"actor_lr", c.actor_lr},
          {"critic_lr", c.critic_lr}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("scenario")) c.scenario = sim::scenario_from_json(j.at("scenario"));
  if (j.contains("env")) c.env = env_config_from_json(j.at("env"));
  c.size = j.value("size", c.size);
  c.ratio = j.value("ratio", c.ratio);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.batch_length = j.value("batch_length", c.batch_length);
  c.seed = j.value("seed", c.seed);
  c.budget_env_steps = j.value("budget_env_steps", c.budget_env_steps);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
  c.prefill_episodes = j.value("prefill_episodes", c.prefill_episodes);
  c.wm_lr = j.value("wm_lr", c.wm_lr);
  c.actor_lr = j.value("actor_lr", c.actor_lr);
  c.critic_lr = j.value("critic_lr", c.critic_lr);
  c.validate();
  return c;
}

/// Independent seed for stream `stream`, item `index` of a run seeded `base`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32), static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

enum SeedStream : std::uint64_t { kTrainEpisode = 1, kEvalEpisode = 2, kWorldModel = 3, kBehavior = 4, kLoop = 5 };

inline std::string rng_state(const Rng& rng) {
  std::ostringstream o;
  o << rng;
  return o.str();
}

inline void set_rng_state(Rng& rng, const std::string& s) {
  std::istringstream in(s);
  Rng r;
  in >> r;
  if (!in) throw std::runtime_error("corrupt rng state");
  rng = r;
}

/// World model, actor-critic, and the single-row latent used while acting.
class Agent {
 public:
  Agent(const TrainConfig& cfg, int obs_dim, int groups)
      : wm_(make_wm_config(cfg, obs_dim, groups), derive_seed(cfg.seed, kWorldModel, 0)),
        behavior_(wm_.preset(), groups, wm_.bins(), make_behavior_config(cfg), derive_seed(cfg.seed, kBehavior, 0)),
        groups_(groups) {
    reset();
  }

  agent::WorldModel<float>& world_model() { return wm_; }
  agent::Behavior<float>& behavior() { return behavior_; }
  const agent::WorldModel<float>& world_model() const { return wm_; }
  const agent::Behavior<float>& behavior() const { return behavior_; }

  /// The next observation starts a new episode.
  void reset() {
    first_ = true;
    state_ = wm_.initial_state(1);
    prev_action_ = Matrix<float>::Zero(1, groups_ * 3);
  }

  /// Posterior update on `obs` followed by an action from the actor.
  /// Eval mode uses the posterior and policy modes, so it draws nothing.
  env::Action act(const env::Observation& obs, agent::ActMode mode, Rng& rng) {
    const std::vector<float> flat = env::encode_observation<float>(obs);
    Matrix<float> row(1, static_cast<Eigen::Index>(flat.size()));
    for (std::size_t i = 0; i < flat.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = flat[i];
    Tape<float> tape(false);
    Matrix<float> first = Matrix<float>::Constant(1, 1, first_ ? 1.0f : 0.0f);
    auto res = wm_.observe_step(tape, wm_.constant_state(tape, state_), tape.constant(prev_action_), wm_.embed(tape, row), first, rng,
                                mode == agent::ActMode::kExplore);
    state_ = res.state.values();
    first_ = false;
    prev_action_ = behavior_.actor().act(state_.feature(), mode, rng);
    env::Action a;
    for (int g = 0; g < groups_; ++g) {
      Eigen::Index r = 0, k = 0;
      prev_action_.block(0, g * 3, 1, 3).maxCoeff(&r, &k);
      a.trits.push_back(static_cast<std::uint8_t>(k));
    }
    return a;
  }

  void save(Checkpoint& c) const {
    put_params(c, "wm/", wm_.params());
    put_params(c, "actor/", behavior_.actor().params());
    put_params(c, "critic/", behavior_.critic().params());
    put_params(c, "slow_critic/", behavior_.critic().slow(), false);
    c.scalars["normalizer.low"] = behavior_.normalizer().low();
    c.scalars["normalizer.high"] = behavior_.normalizer().high();
    c.counters["normalizer.initialized"] = behavior_.normalizer().initialized() ? 1 : 0;
  }

  void load(const Checkpoint& c) {
    // Copies first so a mismatch leaves this agent untouched.
    ParamSet<float> wm = wm_.params(), actor = behavior_.actor().params(), critic = behavior_.critic().params(),
                    slow = behavior_.critic().slow();
    get_params(c, "wm/", wm);
    get_params(c, "actor/", actor);
    get_params(c, "critic/", critic);
    get_params(c, "slow_critic/", slow, false);
    const double lo = c.scalar("normalizer.low"), hi = c.scalar("normalizer.high");
    const bool init = c.counter("normalizer.initialized") != 0;
    wm_.params() = std::move(wm);
    behavior_.actor().params() = std::move(actor);
    behavior_.critic().params() = std::move(critic);
    behavior_.critic().slow() = std::move(slow);
    behavior_.normalizer().restore(lo, hi, init);
    reset();
  }

 private:
  static agent::WorldModelConfig make_wm_config(const TrainConfig& cfg, int obs_dim, int groups) {
    agent::WorldModelConfig w;
    w.obs_dim = obs_dim;
    w.action_groups = groups;
    w.preset = agent::size_preset(cfg.size);
    w.optimizer.lr = cfg.wm_lr;
    return w;
  }
  static agent::BehaviorConfig make_behavior_config(const TrainConfig& cfg) {
    agent::BehaviorConfig b;
    b.actor_optimizer.lr = cfg.actor_lr;
    b.critic_optimizer.lr = cfg.critic_lr;
    return b;
  }

  agent::WorldModel<float> wm_;
  agent::Behavior<float> behavior_;
  int groups_;
  bool first_ = true;
  agent::LatentState<float> state_;
  Matrix<float> prev_action_;
};

inline void save_replay(Checkpoint& c, const ReplayBuffer& buf) {
  const std::size_t n = buf.size();
  const auto od = static_cast<std::size_t>(buf.obs_dim()), g = static_cast<std::size_t>(buf.action_groups());
  Tensor<float> obs({n, od}), act({n, g}), rew({n}), cont({n}), first({n});
  for (std::size_t i = 0; i < n; ++i) {
    const Transition tr = buf.at(buf.oldest() + i);
    for (std::size_t d = 0; d < od; ++d) obs.values()[i * od + d] = tr.obs[d];
    for (std::size_t k = 0; k < g; ++k) act.values()[i * g + k] = tr.action[k];
    rew.values()[i] = tr.reward;
    cont.values()[i] = tr.cont;
    first.values()[i] = tr.is_first ? 1.0f : 0.0f;
  }
  c.tensors["replay/obs"] = std::move(obs);
  c.tensors["replay/action"] = std::move(act);
  c.tensors["replay/reward"] = std::move(rew);
  c.tensors["replay/cont"] = std::move(cont);
  c.tensors["replay/first"] = std::move(first);
  c.counters["replay.oldest"] = buf.oldest();
  c.counters["replay.env_steps"] = buf.env_steps_total();
  c.counters["replay.replayed"] = buf.replayed_steps_total();
}

inline ReplayBuffer load_replay(const Checkpoint& c, std::size_t capacity, int obs_dim, int groups) {
  const auto& obs = c.tensor("replay/obs").values();
  const auto& act = c.tensor("replay/action").values();
  const auto& rew = c.tensor("replay/reward").values();
  const auto& cont = c.tensor("replay/cont").values();
  const auto& first = c.tensor("replay/first").values();
  const std::size_t n = rew.size();
  const auto od = static_cast<std::size_t>(obs_dim), g = static_cast<std::size_t>(groups);
  if (obs.size() != n * od || act.size() != n * g || cont.size() != n || first.size() != n || n > capacity)
    throw std::runtime_error("checkpoint replay buffer does not match the configured geometry");
  std::vector<Transition> live(n);
  for (std::size_t i = 0; i < n; ++i) {
    live[i].obs.assign(obs.begin() + static_cast<std::ptrdiff_t>(i * od), obs.begin() + static_cast<std::ptrdiff_t>((i + 1) * od));
    for (std::size_t k = 0; k < g; ++k) live[i].action.push_back(static_cast<std::uint8_t>(act[i * g + k]));
    live[i].reward = rew[i];
    live[i].cont = cont[i];
    live[i].is_first = first[i] != 0.0f;
  }
  ReplayBuffer buf(capacity, obs_dim, groups);
  buf.restore(c.counter("replay.oldest"), live, c.counter("replay.env_steps"), c.counter("replay.replayed"));
  return buf;
}

/// Owns one training run. With an output directory it writes
/// metrics.csv and checkpoint.cdrm there and resumes from the checkpoint
/// when one exists.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::filesystem::path out_dir)
      : cfg_((cfg.validate(), std::move(cfg))),
        out_(std::move(out_dir)),
        env_(cfg_.scenario, cfg_.env),
        agent_(cfg_, env_.observation_size(), env_.intersections()),
        buffer_(cfg_.replay_capacity, env_.observation_size(), env_.intersections()),
        rng_(derive_seed(cfg_.seed, kLoop, 0)) {
    std::size_t keep = 0;
    if (!out_.empty() && std::filesystem::exists(checkpoint_path())) {
      restore(load_checkpoint(checkpoint_path()));
      keep = static_cast<std::size_t>(episodes_done_);
    }
    if (!out_.empty()) log_ = MetricsLog(out_ / "metrics.csv", keep);
  }

  static std::filesystem::path checkpoint_name() { return "checkpoint.cdrm"; }
  std::filesystem::path checkpoint_path() const { return out_ / checkpoint_name(); }

  const TrainConfig& config() const { return cfg_; }
  Agent& agent() { return agent_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::uint64_t episodes_done() const { return episodes_done_; }
  bool finished() const { return buffer_.env_steps_total() >= cfg_.budget_env_steps; }
  /// Rows logged by this process (a resumed run starts empty).
  const std::vector<MetricsRow>& rows() const { return rows_; }
  const std::vector<double>& last_step_rewards() const { return step_rewards_; }
  void on_episode(std::function<void(const MetricsRow&)> f) { on_episode_ = std::move(f); }

  /// Runs episodes until the budget is spent or `max_episodes` more have
  /// finished (negative: no limit). Returns the number of episodes run.
  int run(int max_episodes = -1) {
    const auto start = std::chrono::steady_clock::now();
    const double offset = wall_clock_;
    int ran = 0;
    while (!finished() && (max_episodes < 0 || ran < max_episodes)) {
      MetricsRow row = run_episode();
      wall_clock_ = offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      row.wall_clock_s = wall_clock_;
      rows_.push_back(row);
      if (!out_.empty()) log_.append(row);
      if (on_episode_) on_episode_(row);
      ++ran;
      if (!out_.empty() && (episodes_done_ % static_cast<std::uint64_t>(cfg_.checkpoint_every) == 0 || finished()))
        save_checkpoint(checkpoint_path(), snapshot());
    }
    return ran;
  }

  Checkpoint snapshot() const {
    Checkpoint c;
    agent_.save(c);
    save_replay(c, buffer_);
    c.counters["episodes_done"] = episodes_done_;
    c.scalars["wall_clock_s"] = wall_clock_;
    c.blobs["rng"] = rng_state(rng_);
    c.blobs["config"] = to_json(cfg_).dump();
    return c;
  }

  void restore(const Checkpoint& c) {
    const TrainConfig saved = train_config_from_json(nlohmann::json::parse(c.blob("config")));
    if (to_json(saved) != to_json(cfg_)) throw std::runtime_error("checkpoint was written by a run with a different configuration");
    ReplayBuffer buf = load_replay(c, cfg_.replay_capacity, env_.observation_size(), env_.intersections());
    Rng rng;
    set_rng_state(rng, c.blob("rng"));
    const std::uint64_t episodes = c.counter("episodes_done");
    const double wall = c.scalar("wall_clock_s");
    agent_.load(c);
    buffer_ = std::move(buf);
    rng_ = rng;
    episodes_done_ = episodes;
    wall_clock_ = wall;
  }

 private:
  MetricsRow run_episode() {
    const std::uint64_t ep = episodes_done_;
    const bool random = ep < static_cast<std::uint64_t>(cfg_.prefill_episodes);
    env::Observation obs = env_.reset(derive_seed(cfg_.seed ^ cfg_.scenario.seed, kTrainEpisode, ep));
    agent_.reset();
    buffer_.append({env::encode_observation<float>(obs), {}, 0.0f, 1.0f, true});
    step_rewards_.clear();
    sums_ = {};
    std::uniform_int_distribution<int> trit(0, 2);
    double total = 0.0;
    while (!env_.done()) {
      env::Action a;
      if (random) {
        for (int m = 0; m < env_.intersections(); ++m) a.trits.push_back(static_cast<std::uint8_t>(trit(rng_)));
      } else {
        a = agent_.act(obs, agent::ActMode::kExplore, rng_);
      }
      env::StepResult r = env_.step(a);
      total += r.reward;
      step_rewards_.push_back(r.reward);
      // Episodes end by time limit only, so the stored continue flag stays 1.
      buffer_.append({env::encode_observation<float>(r.observation), a.trits, static_cast<float>(r.reward), 1.0f, false});
      if (!random) train_due();
      obs = r.observation;
    }
    ++episodes_done_;
    MetricsRow row;
    row.env_steps = buffer_.env_steps_total();
    row.episode = ep;
    row.episode_reward = total;
    if (sums_.ops > 0) {
      row.wm_loss = sums_.wm / sums_.ops;
      row.actor_loss = sums_.actor / sums_.ops;
      row.critic_loss = sums_.critic / sums_.ops;
    }
    row.measured_ratio = static_cast<double>(buffer_.replayed_steps_total()) / static_cast<double>(buffer_.env_steps_total());
    return row;
  }

  void train_due() {
    std::uint64_t due = train_ops_due(buffer_.env_steps_total(), buffer_.replayed_steps_total(), cfg_.ratio, cfg_.batch_size,
                                      cfg_.batch_length);
    if (due > 0 && buffer_.size() < static_cast<std::size_t>(cfg_.batch_length)) return;
    for (; due > 0; --due) train_once();
  }

  void train_once() {
    try {
      auto batch = buffer_.sample_batch(cfg_.batch_size, cfg_.batch_length, rng_);
      auto fwd = agent_.world_model().train_step(batch, rng_);
      auto bm = agent_.behavior().train_step(agent_.world_model(), fwd.posterior, rng_);
      if (!std::isfinite(bm.actor_loss) || !std::isfinite(bm.critic_loss)) throw std::domain_error("actor-critic loss is not finite");
      sums_.wm += fwd.parts.total;
      sums_.actor += bm.actor_loss;
      sums_.critic += bm.critic_loss;
      sums_.ops += 1.0;
    } catch (const std::domain_error& e) {
      std::string where;
      if (!out_.empty()) {
        Checkpoint c = snapshot();
        c.blobs["diagnostic"] = e.what();
        save_checkpoint(out_ / "diagnostic.cdrm", c);
        where = " (diagnostic checkpoint: " + (out_ / "diagnostic.cdrm").string() + ")";
      }
      throw std::runtime_error(std::string("training aborted: ") + e.what() + where);
    }
  }

  struct LossSums {
    double wm = 0.0, actor = 0.0, critic = 0.0, ops = 0.0;
  };

  TrainConfig cfg_;
  std::filesystem::path out_;
  env::TscEnv env_;
  Agent agent_;
  ReplayBuffer buffer_;
  Rng rng_;
  MetricsLog log_;
  std::uint64_t episodes_done_ = 0;
  double wall_clock_ = 0.0;
  LossSums sums_;
  std::vector<MetricsRow> rows_;
  std::vector<double> step_rewards_;
  std::function<void(const MetricsRow&)> on_episode_;
};

}  // namespace tscdreamer::train
