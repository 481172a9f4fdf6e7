#pragma once

// Queue-length signal-control environment over the corridor simulator.
// State: clipped main-line queues plus per-intersection splits. Action: one
// trit per intersection (−Δs, keep, +Δs). Reward: piecewise queue penalty.

#include "tscdreamer/sim/scenario.hpp"
#include "tscdreamer/sim/simulator.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace tscdreamer::env {

struct EnvConfig {
  int control_interval_s = 100;  // t_c
  double queue_upper = 50.0;     // q_ub
  double light_congestion = 10.0;  // q_lc
  double heavy_congestion = 25.0;  // q_hc
  int split_lower_s = 30;
  int split_upper_s = 70;
  int split_delta_s = 2;
  double heavy_penalty = 10.0;  // w_cp
  int episode_length_s = 16200;
  int warmup_s = 1800;

  int steps_per_episode() const { return (episode_length_s - warmup_s) / control_interval_s; }

  void validate() const {
    if (control_interval_s <= 0 || (episode_length_s - warmup_s) % control_interval_s != 0)
      throw std::invalid_argument("episode length after warm-up must be a multiple of the control interval");
    if (!(0.0 < light_congestion && light_congestion < heavy_congestion && heavy_congestion < queue_upper))
      throw std::invalid_argument("congestion thresholds must satisfy 0 < q_lc < q_hc < q_ub");
    if (split_lower_s >= split_upper_s || split_delta_s <= 0) throw std::invalid_argument("invalid split bounds");
    if (warmup_s < 0 || steps_per_episode() <= 0) throw std::invalid_argument("invalid episode timing");
  }
};

struct Observation {
  std::vector<double> queues;  // L main-line links, clipped to [0, q_ub]
  std::vector<int> splits;     // M intersections
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct Action {
  std::vector<std::uint8_t> trits;  // 0: −Δs, 1: keep, 2: +Δs
  friend bool operator==(const Action&, const Action&) = default;

  static Action keep(int intersections) { return Action{std::vector<std::uint8_t>(static_cast<std::size_t>(intersections), 1)}; }
};

struct RewardBreakdown {
  std::vector<double> terms;  // one per observed link, each ≤ 0
  double total = 0.0;
};

inline std::vector<int> apply_action(const std::vector<int>& splits, const Action& action, const EnvConfig& cfg) {
  if (action.trits.size() != splits.size()) throw std::invalid_argument("action length does not match intersections");
  std::vector<int> out(splits.size());
  for (std::size_t m = 0; m < splits.size(); ++m) {
    const int a = action.trits[m];
    if (a > 2) throw std::invalid_argument("action entries must be 0, 1 or 2");
    out[m] = std::clamp(splits[m] + (a - 1) * cfg.split_delta_s, cfg.split_lower_s, cfg.split_upper_s);
  }
  return out;
}

/// Per-link penalty. Boundaries belong to the milder branch:
/// q ≤ q_lc → 0, q_lc < q ≤ q_hc → −w·q, q > q_hc → −w_cp·w·q.
inline double link_reward(double q, double weight, const EnvConfig& cfg) {
  if (q < 0.0) throw std::invalid_argument("queue length must be non-negative");
  if (q <= cfg.light_congestion) return 0.0;
  if (q <= cfg.heavy_congestion) return -(weight * q);
  return -(cfg.heavy_penalty * weight * q);
}

inline RewardBreakdown corridor_reward(const std::vector<double>& queues, const std::vector<double>& weights,
                                       const EnvConfig& cfg) {
  if (queues.size() != weights.size()) throw std::invalid_argument("one weight per observed link required");
  RewardBreakdown r;
  r.terms.reserve(queues.size());
  for (std::size_t i = 0; i < queues.size(); ++i) {
    r.terms.push_back(link_reward(queues[i], weights[i], cfg));
    r.total += r.terms.back();
  }
  return r;
}

/// Main-line link weights: pattern 1 zeroes the east-west (westbound) chain.
inline std::vector<double> link_weights(const sim::CorridorGeometry& g, int pattern) {
  std::vector<double> w(static_cast<std::size_t>(g.main_link_count()), 1.0);
  if (pattern == 1)
    for (int j = 0; j <= g.intersections(); ++j) w[static_cast<std::size_t>(g.westbound(j))] = 0.0;
  return w;
}

/// Queues then splits, in link-id and intersection order, raw units.
template <class T = float>
std::vector<T> encode_observation(const Observation& obs) {
  std::vector<T> v;
  v.reserve(obs.queues.size() + obs.splits.size());
  for (double q : obs.queues) v.push_back(static_cast<T>(q));
  for (int s : obs.splits) v.push_back(static_cast<T>(s));
  return v;
}

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool is_continue = true;  // false after the final step of the episode
  RewardBreakdown breakdown;
  std::vector<int> raw_queues;  // unclipped main-line queues
};

class TscEnv {
 public:
  TscEnv(sim::ScenarioConfig scenario, EnvConfig cfg = {})
      : scenario_(std::move(scenario)), cfg_(cfg), corridor_(sim::build_corridor(scenario_)) {
    cfg_.validate();
    if (scenario_.signal.split_min_s != cfg_.split_lower_s || scenario_.signal.split_max_s != cfg_.split_upper_s)
      throw std::invalid_argument("signal split bounds must match the environment bounds");
    if (scenario_.signal.cycle_s != cfg_.control_interval_s)
      throw std::invalid_argument("control interval must equal the signal cycle");
    weights_ = link_weights(corridor_.geometry(), scenario_.pattern);
  }

  const EnvConfig& config() const { return cfg_; }
  const sim::ScenarioConfig& scenario() const { return scenario_; }
  const sim::Corridor& corridor() const { return corridor_; }
  const sim::SimState& state() const {
    if (!state_) throw std::logic_error("environment not reset");
    return *state_;
  }
  const std::vector<double>& weights() const { return weights_; }
  void set_weights(std::vector<double> w) {
    if (w.size() != weights_.size()) throw std::invalid_argument("one weight per observed link required");
    weights_ = std::move(w);
  }

  int intersections() const { return corridor_.geometry().intersections(); }
  int observed_links() const { return corridor_.geometry().main_link_count(); }
  int observation_size() const { return observed_links() + intersections(); }
  int steps_taken() const { return steps_; }
  bool done() const { return steps_ >= cfg_.steps_per_episode(); }

  /// Fresh simulator, splits at their initial value, warm-up with fixed
  /// signals and ramping demand.
  Observation reset(std::uint64_t seed) {
    state_ = corridor_.initial_state(seed);
    steps_ = 0;
    corridor_.run_interval(*state_, cfg_.warmup_s);
    return observe();
  }

  StepResult step(const Action& action) {
    if (!state_) throw std::logic_error("environment not reset");
    if (done()) throw std::logic_error("step after the end of the episode");
    const std::vector<int> splits = apply_action(current_splits(), action, cfg_);
    for (std::size_t m = 0; m < splits.size(); ++m) corridor_.set_split(*state_, static_cast<int>(m), splits[m]);
    corridor_.run_interval(*state_, cfg_.control_interval_s);
    ++steps_;

    StepResult r;
    r.raw_queues = corridor_.main_line_queues(*state_);
    std::vector<double> q(r.raw_queues.begin(), r.raw_queues.end());
    r.breakdown = corridor_reward(q, weights_, cfg_);
    r.reward = r.breakdown.total;
    r.observation = observe();
    r.is_continue = !done();
    return r;
  }

  Observation observe() const {
    Observation o;
    for (int q : corridor_.main_line_queues(state())) o.queues.push_back(std::clamp(static_cast<double>(q), 0.0, cfg_.queue_upper));
    o.splits = current_splits();
    return o;
  }

  std::vector<int> current_splits() const {
    std::vector<int> s;
    for (const auto& c : state().controllers) s.push_back(c.split());
    return s;
  }

 private:
  sim::ScenarioConfig scenario_;
  EnvConfig cfg_;
  sim::Corridor corridor_;
  std::vector<double> weights_;
  std::optional<sim::SimState> state_;
  int steps_ = 0;
};

}  // namespace tscdreamer::env
