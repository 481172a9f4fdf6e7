#pragma once

// Actor-critic trained on imagined latent rollouts.

#include "tscdreamer/agent/world_model.hpp"
#include "tscdreamer/core/autodiff.hpp"
#include "tscdreamer/core/categorical.hpp"
#include "tscdreamer/core/nn.hpp"
#include "tscdreamer/core/optim.hpp"
#include "tscdreamer/core/transforms.hpp"

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace tscdreamer::agent {

struct BehaviorConfig {
  int horizon = 15;
  double gamma = 0.997;
  double lambda = 0.95;
  double entropy = 3e-4;
  double unimix = 0.01;
  double slow_critic_rate = 0.02;
  double slow_critic_reg = 1.0;
  double normalizer_decay = 0.99;
  double normalizer_low = 0.05;
  double normalizer_high = 0.95;
  AdamConfig actor_optimizer{3e-5, 0.9, 0.999, 1e-5, 100.0};
  AdamConfig critic_optimizer{3e-5, 0.9, 0.999, 1e-8, 100.0};
};

/// States s_0..s_H, actions a_0..a_{H-1} taken in s_t, and rewards[t] /
/// continues[t] predicted for the state s_{t+1} that a_t leads to.
/// Every per-step matrix has one row per rollout.
template <class T>
struct ImaginedTrajectory {
  std::vector<LatentState<T>> states;  // H+1
  std::vector<Matrix<T>> actions;      // H, one-hot [rows × groups·3]
  std::vector<Matrix<T>> log_probs;    // H, joint log π(a_t|s_t) [rows × 1]
  std::vector<Matrix<T>> rewards;      // H, [rows × 1]
  std::vector<Matrix<T>> continues;    // H, probabilities in (0,1)
  std::vector<Matrix<T>> values;       // H+1, critic estimates

  int horizon() const { return static_cast<int>(actions.size()); }
};

/// R_t = r_t + γ c_t [(1−λ) V_{t+1} + λ R_{t+1}], with R_H = V_H.
/// Returns R_0..R_{H-1}.
template <class T>
std::vector<Matrix<T>> lambda_returns(const std::vector<Matrix<T>>& rewards, const std::vector<Matrix<T>>& values,
                                      const std::vector<Matrix<T>>& continues, double gamma, double lambda) {
  const std::size_t h = rewards.size();
  if (values.size() != h + 1 || continues.size() != h) throw std::invalid_argument("lambda_returns: length mismatch");
  if (gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda_returns: γ and λ must be in [0, 1]");
  const T g = static_cast<T>(gamma), l = static_cast<T>(lambda);
  std::vector<Matrix<T>> out(h);
  Matrix<T> next = values[h];
  for (std::size_t i = h; i-- > 0;) {
    out[i] = rewards[i].array() + g * continues[i].array() * ((T(1) - l) * values[i + 1].array() + l * next.array());
    next = out[i];
  }
  return out;
}

/// Running 5th/95th percentile of λ-returns; scales advantages.
class ReturnNormalizer {
 public:
  explicit ReturnNormalizer(double decay = 0.99, double low = 0.05, double high = 0.95)
      : decay_(decay), low_q_(low), high_q_(high) {}

  static double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("percentile of empty sample");
    std::sort(v.begin(), v.end());
    double pos = q * static_cast<double>(v.size() - 1);
    auto i = static_cast<std::size_t>(pos);
    double frac = pos - static_cast<double>(i);
    if (i + 1 >= v.size()) return v.back();
    return v[i] + frac * (v[i + 1] - v[i]);
  }

  void update(const std::vector<double>& returns) {
    double lo = percentile(returns, low_q_), hi = percentile(returns, high_q_);
    if (!initialized_) {
      lo_ = lo;
      hi_ = hi;
      initialized_ = true;
    } else {
      lo_ = decay_ * lo_ + (1.0 - decay_) * lo;
      hi_ = decay_ * hi_ + (1.0 - decay_) * hi;
    }
  }

  double scale() const { return std::max(1.0, hi_ - lo_); }
  double low() const { return lo_; }
  double high() const { return hi_; }
  bool initialized() const { return initialized_; }
  void restore(double lo, double hi, bool initialized) {
    lo_ = lo;
    hi_ = hi;
    initialized_ = initialized;
  }

 private:
  double decay_, low_q_, high_q_;
  double lo_ = 0.0, hi_ = 0.0;
  bool initialized_ = false;
};

enum class ActMode { kExplore, kEval };

template <class T>
class Actor {
 public:
  Actor(const SizePreset& p, int groups, double unimix, std::uint64_t seed) : groups_(groups), unimix_(unimix) {
    Rng rng(seed);
    spec_ = {p.feature(), std::vector<int>(static_cast<std::size_t>(p.depth), p.hidden), groups * 3, Activation::kSiLU, true, false};
    init_mlp(params_, "actor", spec_, rng);
  }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  int groups() const { return groups_; }

  Var<T> logits(Tape<T>& tape, Var<T> feature) { return mlp(tape, params_, "actor", spec_, feature); }
  Var<T> probs(Tape<T>& tape, Var<T> feature) { return unimix_probs(logits(tape, feature), 3, static_cast<T>(unimix_)); }

  /// Joint log-probability of one-hot actions: Σ over intersections.
  static Var<T> log_prob(Var<T> probs, const Matrix<T>& onehot) {
    return ad::sum_cols(ad::mul(ad::log(probs), probs.tape->constant(onehot)));
  }
  static Var<T> entropy(Var<T> probs) { return ad::sum_cols(categorical_entropy(probs, 3)); }

  template <class R>
  Matrix<T> act(const Matrix<T>& feature, ActMode mode, R& rng) {
    Tape<T> tape(false);
    Var<T> f = tape.constant(feature);
    if (mode == ActMode::kEval) return mode_onehot(logits(tape, f).value(), 3);
    return sample_onehot(probs(tape, f).value(), 3, rng);
  }

 private:
  int groups_;
  double unimix_;
  MlpSpec spec_;
  ParamSet<T> params_;
};

template <class T>
class Critic {
 public:
  Critic(const SizePreset& p, const BinGrid& bins, std::uint64_t seed) : bins_(bins) {
    Rng rng(seed);
    spec_ = {p.feature(), std::vector<int>(static_cast<std::size_t>(p.depth), p.hidden), static_cast<int>(bins.count()),
             Activation::kSiLU, true, true};
    init_mlp(params_, "critic", spec_, rng);
    for (const auto& [name, prm] : params_) slow_.add(name, prm.value);
  }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  ParamSet<T>& slow() { return slow_; }
  const ParamSet<T>& slow() const { return slow_; }
  const BinGrid& bins() const { return bins_; }

  Var<T> logits(Tape<T>& tape, Var<T> feature) { return mlp(tape, params_, "critic", spec_, feature); }
  Var<T> slow_logits(Tape<T>& tape, Var<T> feature) { return mlp(tape, slow_, "critic", spec_, feature); }

  Matrix<T> value(const Matrix<T>& feature) {
    Tape<T> tape(false);
    Matrix<T> p = ad::group_softmax(logits(tape, tape.constant(feature)), static_cast<Eigen::Index>(bins_.count())).value();
    return twohot_decode_rows(p, bins_).template cast<T>();
  }

  /// slow ← (1 − rate)·slow + rate·critic
  void update_slow(double rate) {
    const T r = static_cast<T>(rate);
    for (auto& [name, prm] : slow_) prm.value = (T(1) - r) * prm.value + r * params_.at(name).value;
  }

 private:
  BinGrid bins_;
  MlpSpec spec_;
  ParamSet<T> params_;
  ParamSet<T> slow_;
};

/// Imagines `horizon` steps from every start state with actions from the actor.
template <class T, class R>
ImaginedTrajectory<T> rollout(WorldModel<T>& wm, Actor<T>& actor, Critic<T>& critic, const LatentState<T>& start,
                              int horizon, R& rng) {
  if (horizon < 0) throw std::invalid_argument("rollout: negative horizon");
  ImaginedTrajectory<T> traj;
  traj.states.push_back(start);
  traj.values.push_back(critic.value(start.feature()));
  for (int t = 0; t < horizon; ++t) {
    Tape<T> tape(false);
    LatentVars<T> s = wm.constant_state(tape, traj.states.back());
    Var<T> probs = actor.probs(tape, s.feature());
    Matrix<T> a = sample_onehot(probs.value(), 3, rng);
    traj.log_probs.push_back(Actor<T>::log_prob(probs, a).value());
    ImagineResult<T> next = wm.imagine_step(tape, s, tape.constant(a), rng);
    LatentState<T> ns = next.state.values();
    HeadOutputs<T> heads = wm.heads(ns, false);
    traj.actions.push_back(std::move(a));
    traj.rewards.push_back(heads.reward);
    traj.continues.push_back(heads.cont_prob);
    traj.values.push_back(critic.value(ns.feature()));
    traj.states.push_back(std::move(ns));
  }
  return traj;
}

/// Π_{i<t} c_i for t = 0..H−1 (t = 0 → 1).
template <class T>
std::vector<Matrix<T>> continue_weights(const ImaginedTrajectory<T>& traj) {
  std::vector<Matrix<T>> w;
  if (traj.horizon() == 0) return w;
  w.push_back(Matrix<T>::Ones(traj.states[0].batch(), 1));
  for (int t = 1; t < traj.horizon(); ++t) w.push_back(w.back().cwiseProduct(traj.continues[static_cast<std::size_t>(t - 1)]));
  return w;
}

template <class T>
Matrix<T> stack_rows(const std::vector<Matrix<T>>& parts, std::size_t count) {
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < count; ++i) n += parts[i].rows();
  Matrix<T> out(n, parts.empty() ? 0 : parts[0].cols());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < count; ++i) {
    out.middleRows(r, parts[i].rows()) = parts[i];
    r += parts[i].rows();
  }
  return out;
}

template <class T>
Matrix<T> stack_features(const ImaginedTrajectory<T>& traj, std::size_t count) {
  std::vector<Matrix<T>> f;
  for (std::size_t i = 0; i < count; ++i) f.push_back(traj.states[i].feature());
  return stack_rows(f, count);
}

/// REINFORCE with normalized, stop-gradient advantages plus an entropy bonus,
/// weighted by cumulative continue probabilities and averaged over steps.
template <class T>
Var<T> actor_loss(Tape<T>& tape, Actor<T>& actor, const ImaginedTrajectory<T>& traj, const std::vector<Matrix<T>>& returns,
                  double scale, double entropy_coef) {
  const auto h = static_cast<std::size_t>(traj.horizon());
  if (h == 0) throw std::invalid_argument("actor_loss: empty trajectory");
  if (returns.size() != h) throw std::invalid_argument("actor_loss: returns length mismatch");
  Matrix<T> feats = stack_features(traj, h);
  Matrix<T> actions = stack_rows(traj.actions, h);
  Matrix<T> adv = ((stack_rows(returns, h) - stack_rows(traj.values, h)).array() / static_cast<T>(scale)).matrix();
  Matrix<T> weight = stack_rows(continue_weights(traj), h);

  Var<T> probs = actor.probs(tape, tape.constant(feats));
  Var<T> logp = Actor<T>::log_prob(probs, actions);
  Var<T> ent = Actor<T>::entropy(probs);
  Var<T> objective = ad::add(ad::mul(logp, tape.constant(adv)), ad::scale(ent, static_cast<T>(entropy_coef)));
  return ad::scale(ad::mean_all(ad::mul(objective, tape.constant(weight))), T(-1));
}

/// Two-hot cross-entropy toward the λ-returns plus a cross-entropy pull toward
/// the slow critic's distribution.
template <class T>
Var<T> critic_loss(Tape<T>& tape, Critic<T>& critic, const ImaginedTrajectory<T>& traj, const std::vector<Matrix<T>>& returns,
                   double slow_reg) {
  const auto h = static_cast<std::size_t>(traj.horizon());
  if (h == 0) throw std::invalid_argument("critic_loss: empty trajectory");
  if (returns.size() != h) throw std::invalid_argument("critic_loss: returns length mismatch");
  const auto bins = static_cast<Eigen::Index>(critic.bins().count());
  Matrix<T> feats = stack_features(traj, h);
  Matrix<T> ret = stack_rows(returns, h);
  Matrix<T> weight = stack_rows(continue_weights(traj), h);
  Matrix<T> target = twohot_matrix<T>(ret.col(0).template cast<double>(), critic.bins());

  Var<T> f = tape.constant(feats);
  Var<T> logp = ad::group_log_softmax(critic.logits(tape, f), bins);
  Matrix<T> slow_probs;
  {
    Tape<T> frozen(false);
    slow_probs = ad::group_softmax(critic.slow_logits(frozen, frozen.constant(feats)), bins).value();
  }
  Matrix<T> mixed_target = target + static_cast<T>(slow_reg) * slow_probs;
  Var<T> ce = ad::scale(ad::sum_cols(ad::mul(logp, tape.constant(mixed_target))), T(-1));
  return ad::mean_all(ad::mul(ce, tape.constant(weight)));
}

struct BehaviorMetrics {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double mean_return = 0.0;
  double return_scale = 1.0;
  double policy_entropy = 0.0;
};

/// Actor, critic, slow critic and return normalizer, trained together.
template <class T>
class Behavior {
 public:
  Behavior(const SizePreset& preset, int groups, const BinGrid& bins, BehaviorConfig cfg, std::uint64_t seed)
      : cfg_(cfg),
        actor_(preset, groups, cfg.unimix, seed ^ 0xA5A5A5A5ULL),
        critic_(preset, bins, seed ^ 0x5A5A5A5AULL),
        normalizer_(cfg.normalizer_decay, cfg.normalizer_low, cfg.normalizer_high) {}

  const BehaviorConfig& config() const { return cfg_; }
  Actor<T>& actor() { return actor_; }
  Critic<T>& critic() { return critic_; }
  ReturnNormalizer& normalizer() { return normalizer_; }
  const Actor<T>& actor() const { return actor_; }
  const Critic<T>& critic() const { return critic_; }
  const ReturnNormalizer& normalizer() const { return normalizer_; }

  template <class R>
  BehaviorMetrics train_step(WorldModel<T>& wm, const LatentState<T>& start, R& rng) {
    ImaginedTrajectory<T> traj = rollout(wm, actor_, critic_, start, cfg_.horizon, rng);
    std::vector<Matrix<T>> returns = lambda_returns(traj.rewards, traj.values, traj.continues, cfg_.gamma, cfg_.lambda);

    std::vector<double> flat;
    for (const auto& r : returns)
      for (Eigen::Index i = 0; i < r.rows(); ++i) flat.push_back(static_cast<double>(r(i, 0)));
    normalizer_.update(flat);

    BehaviorMetrics m;
    {
      Tape<T> tape;
      Var<T> loss = actor_loss(tape, actor_, traj, returns, normalizer_.scale(), cfg_.entropy);
      m.actor_loss = loss.scalar();
      adam_step(actor_.params(), grad(loss, actor_.params()), cfg_.actor_optimizer);
    }
    {
      Tape<T> tape;
      Var<T> loss = critic_loss(tape, critic_, traj, returns, cfg_.slow_critic_reg);
      m.critic_loss = loss.scalar();
      adam_step(critic_.params(), grad(loss, critic_.params()), cfg_.critic_optimizer);
      critic_.update_slow(cfg_.slow_critic_rate);
    }
    double s = 0.0;
    for (double v : flat) s += v;
    m.mean_return = flat.empty() ? 0.0 : s / static_cast<double>(flat.size());
    m.return_scale = normalizer_.scale();
    double ent = 0.0;
    for (const auto& lp : traj.log_probs) ent -= lp.template cast<double>().mean();
    m.policy_entropy = traj.log_probs.empty() ? 0.0 : ent / static_cast<double>(traj.log_probs.size());
    return m;
  }

 private:
  BehaviorConfig cfg_;
  Actor<T> actor_;
  Critic<T> critic_;
  ReturnNormalizer normalizer_;
};

}  // namespace tscdreamer::agent
