#pragma once

#include "tscdreamer/agent/world_model.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace tscdreamer::train {

/// One stored step: obs_t, the action a_{t−1} that produced it, r_t, c_t.
/// Episode starts carry is_first and no action.
struct Transition {
  std::vector<float> obs;
  std::vector<std::uint8_t> action;  // trits; ignored when is_first
  float reward = 0.0f;
  float cont = 1.0f;
  bool is_first = false;
};

/// Ring buffer addressed by a global step index. Only indices in
/// [appended − size, appended) are live, so a window of consecutive live
/// indices never straddles an overwrite.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int obs_dim, int action_groups)
      : capacity_(capacity), obs_dim_(obs_dim), groups_(action_groups) {
    if (capacity == 0 || obs_dim <= 0 || action_groups <= 0) throw std::invalid_argument("invalid replay buffer geometry");
    obs_.assign(capacity * static_cast<std::size_t>(obs_dim), 0.0f);
    action_.assign(capacity * static_cast<std::size_t>(action_groups), 1);
    reward_.assign(capacity, 0.0f);
    cont_.assign(capacity, 1.0f);
    first_.assign(capacity, 0);
  }

  /// Environment steps count transitions produced by an action; the reset
  /// observation that opens an episode is stored but not counted.
  void append(const Transition& tr) {
    if (tr.obs.size() != static_cast<std::size_t>(obs_dim_)) throw std::invalid_argument("transition observation size mismatch");
    if (!tr.is_first && tr.action.size() != static_cast<std::size_t>(groups_))
      throw std::invalid_argument("transition action size mismatch");
    const std::size_t slot = static_cast<std::size_t>(appended_ % capacity_);
    std::copy(tr.obs.begin(), tr.obs.end(), obs_.begin() + static_cast<std::ptrdiff_t>(slot * obs_dim_));
    for (int g = 0; g < groups_; ++g)
      action_[slot * static_cast<std::size_t>(groups_) + static_cast<std::size_t>(g)] = tr.is_first ? 1 : tr.action[static_cast<std::size_t>(g)];
    reward_[slot] = tr.reward;
    cont_[slot] = tr.cont;
    first_[slot] = tr.is_first ? 1 : 0;
    ++appended_;
    if (!tr.is_first) ++env_steps_;
  }

  std::size_t size() const { return static_cast<std::size_t>(std::min<std::uint64_t>(appended_, capacity_)); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t appended() const { return appended_; }
  std::uint64_t oldest() const { return appended_ - size(); }
  std::uint64_t env_steps_total() const { return env_steps_; }
  std::uint64_t replayed_steps_total() const { return replayed_; }
  int obs_dim() const { return obs_dim_; }
  int action_groups() const { return groups_; }

  Transition at(std::uint64_t global) const {
    if (global < oldest() || global >= appended_) throw std::out_of_range("replay index not live");
    const std::size_t slot = static_cast<std::size_t>(global % capacity_);
    Transition tr;
    tr.obs.assign(obs_.begin() + static_cast<std::ptrdiff_t>(slot * obs_dim_), obs_.begin() + static_cast<std::ptrdiff_t>((slot + 1) * obs_dim_));
    tr.action.assign(action_.begin() + static_cast<std::ptrdiff_t>(slot * groups_), action_.begin() + static_cast<std::ptrdiff_t>((slot + 1) * groups_));
    tr.reward = reward_[slot];
    tr.cont = cont_[slot];
    tr.is_first = first_[slot] != 0;
    return tr;
  }

  /// Window start indices of the last sample_batch call (global indices).
  const std::vector<std::uint64_t>& last_starts() const { return last_starts_; }

  template <class Rng>
  agent::WorldModelBatch<float> sample_batch(int batch_size, int length, Rng& rng) {
    if (batch_size <= 0 || length <= 0) throw std::invalid_argument("batch size and length must be positive");
    if (size() < static_cast<std::size_t>(length)) throw std::runtime_error("replay buffer holds fewer steps than one window");
    std::uniform_int_distribution<std::uint64_t> pick(oldest(), appended_ - static_cast<std::uint64_t>(length));
    last_starts_.clear();
    agent::WorldModelBatch<float> b;
    const Eigen::Index bs = batch_size;
    for (int t = 0; t < length; ++t) {
      b.obs.push_back(Matrix<float>(bs, obs_dim_));
      b.action.push_back(Matrix<float>::Zero(bs, groups_ * 3));
      b.reward.push_back(Matrix<float>(bs, 1));
      b.cont.push_back(Matrix<float>(bs, 1));
      b.is_first.push_back(Matrix<float>(bs, 1));
    }
    for (int i = 0; i < batch_size; ++i) {
      const std::uint64_t start = pick(rng);
      last_starts_.push_back(start);
      for (int t = 0; t < length; ++t) {
        const std::size_t slot = static_cast<std::size_t>((start + static_cast<std::uint64_t>(t)) % capacity_);
        const auto ts = static_cast<std::size_t>(t);
        for (int d = 0; d < obs_dim_; ++d) b.obs[ts](i, d) = obs_[slot * static_cast<std::size_t>(obs_dim_) + static_cast<std::size_t>(d)];
        if (!first_[slot])
          for (int g = 0; g < groups_; ++g)
            b.action[ts](i, g * 3 + action_[slot * static_cast<std::size_t>(groups_) + static_cast<std::size_t>(g)]) = 1.0f;
        b.reward[ts](i, 0) = reward_[slot];
        b.cont[ts](i, 0) = cont_[slot];
        b.is_first[ts](i, 0) = first_[slot] ? 1.0f : 0.0f;
      }
    }
    replayed_ += static_cast<std::uint64_t>(batch_size) * static_cast<std::uint64_t>(length);
    return b;
  }

  /// Rebuilds the buffer from its live steps, which start at global index
  /// `oldest`. Slots and counters come back exactly as they were saved.
  void restore(std::uint64_t oldest, const std::vector<Transition>& live, std::uint64_t env_steps, std::uint64_t replayed) {
    if (live.size() > capacity_) throw std::invalid_argument("replay restore: more steps than capacity");
    if (oldest != 0 && live.size() != capacity_)
      throw std::invalid_argument("replay restore: a wrapped buffer must be full");
    appended_ = oldest;
    for (const auto& tr : live) append(tr);
    env_steps_ = env_steps;
    replayed_ = replayed;
  }

 private:
  std::size_t capacity_;
  int obs_dim_;
  int groups_;
  std::vector<float> obs_;
  std::vector<std::uint8_t> action_;
  std::vector<float> reward_;
  std::vector<float> cont_;
  std::vector<std::uint8_t> first_;
  std::uint64_t appended_ = 0;
  std::uint64_t env_steps_ = 0;
  std::uint64_t replayed_ = 0;
  std::vector<std::uint64_t> last_starts_;
};

/// Number of batch_size × length training steps needed so that replayed
/// steps catch up with ratio × environment steps.
inline std::uint64_t train_ops_due(std::uint64_t env_steps, std::uint64_t replayed_steps, double ratio, int batch_size,
                                   int length) {
  if (!(ratio > 0.0) || batch_size <= 0 || length <= 0) throw std::invalid_argument("train_ops_due: invalid arguments");
  const double owed = ratio * static_cast<double>(env_steps) - static_cast<double>(replayed_steps);
  if (owed <= 0.0) return 0;
  return static_cast<std::uint64_t>(std::floor(owed / (static_cast<double>(batch_size) * static_cast<double>(length))));
}

}  // namespace tscdreamer::train
