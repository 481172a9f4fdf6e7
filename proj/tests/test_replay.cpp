#include "tscdreamer/train/replay.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace tscdreamer;
using train::ReplayBuffer;
using train::Transition;
using train::train_ops_due;

namespace {

// obs[0] carries the global index so windows can be checked for continuity.
Transition step(std::uint64_t index, bool first = false) {
  Transition t;
  t.obs = {static_cast<float>(index), 0.5f};
  t.action = {static_cast<std::uint8_t>(index % 3)};
  t.reward = -static_cast<float>(index);
  t.cont = 1.0f;
  t.is_first = first;
  return t;
}

}  // namespace

TEST(Replay, AppendToEmptyGivesSizeOne) {
  ReplayBuffer b(8, 2, 1);
  b.append(step(0));
  EXPECT_EQ(b.size(), 1u);
  EXPECT_EQ(b.env_steps_total(), 1u);
}

TEST(Replay, RingDropsOldest) {
  const std::size_t c = 5;
  ReplayBuffer b(c, 2, 1);
  for (std::uint64_t i = 0; i <= c; ++i) b.append(step(i));
  EXPECT_EQ(b.size(), c);
  EXPECT_EQ(b.oldest(), 1u);
  EXPECT_THROW(b.at(0), std::out_of_range);
  EXPECT_FLOAT_EQ(b.at(1).obs[0], 1.0f);
  EXPECT_FLOAT_EQ(b.at(c).obs[0], static_cast<float>(c));
}

TEST(Replay, EnvStepCounterOutlivesEviction) {
  ReplayBuffer b(4, 2, 1);
  for (std::uint64_t i = 0; i < 37; ++i) b.append(step(i));
  EXPECT_EQ(b.env_steps_total(), 37u);
  EXPECT_EQ(b.size(), 4u);
}

TEST(Replay, ResetObservationIsStoredButNotCounted) {
  ReplayBuffer b(16, 2, 1);
  b.append(step(0, true));
  for (std::uint64_t i = 1; i <= 3; ++i) b.append(step(i));
  EXPECT_EQ(b.size(), 4u);
  EXPECT_EQ(b.env_steps_total(), 3u);
  EXPECT_TRUE(b.at(0).is_first);
}

TEST(Replay, ExactlyOneWindowIsSampledEveryTime) {
  const int T = 6;
  ReplayBuffer b(32, 2, 1);
  for (int i = 0; i < T; ++i) b.append(step(static_cast<std::uint64_t>(i)));
  std::mt19937_64 rng(3);
  auto batch = b.sample_batch(4, T, rng);
  for (auto s : b.last_starts()) EXPECT_EQ(s, 0u);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(batch.obs[static_cast<std::size_t>(t)](i, 0), static_cast<float>(t));
}

TEST(Replay, TooLittleDataThrows) {
  ReplayBuffer b(32, 2, 1);
  for (int i = 0; i < 3; ++i) b.append(step(static_cast<std::uint64_t>(i)));
  std::mt19937_64 rng(3);
  EXPECT_THROW(b.sample_batch(2, 4, rng), std::runtime_error);
  EXPECT_EQ(b.replayed_steps_total(), 0u);
}

TEST(Replay, ReplayedCounterGrowsByBatchTimesLength) {
  ReplayBuffer b(4096, 2, 1);
  for (std::uint64_t i = 0; i < 200; ++i) b.append(step(i));
  std::mt19937_64 rng(1);
  b.sample_batch(16, 64, rng);
  EXPECT_EQ(b.replayed_steps_total(), 1024u);
  b.sample_batch(16, 64, rng);
  EXPECT_EQ(b.replayed_steps_total(), 2048u);
}

TEST(Replay, WindowsNeverCrossTheOverwriteSeam) {
  // Small capacity and many evictions: every sampled window must read
  // consecutive global indices, i.e. one buffer generation.
  const std::size_t cap = 11;
  const int T = 4;
  ReplayBuffer b(cap, 2, 1);
  std::mt19937_64 rng(9);
  for (std::uint64_t i = 0; i < 300; ++i) {
    b.append(step(i));
    if (b.size() < static_cast<std::size_t>(T)) continue;
    auto batch = b.sample_batch(8, T, rng);
    for (int r = 0; r < 8; ++r) {
      const float s0 = batch.obs[0](r, 0);
      EXPECT_GE(s0, static_cast<float>(b.oldest()));
      for (int t = 1; t < T; ++t) EXPECT_FLOAT_EQ(batch.obs[static_cast<std::size_t>(t)](r, 0), s0 + static_cast<float>(t));
    }
  }
}

TEST(Replay, StartsCoverEveryLiveWindowUniformly) {
  const int T = 3;
  ReplayBuffer b(8, 2, 1);
  for (std::uint64_t i = 0; i < 20; ++i) b.append(step(i));
  // Live indices 12..19, so starts 12..17: six equally likely windows.
  std::mt19937_64 rng(5);
  std::vector<int> counts(6, 0);
  const int draws = 6000;
  for (int k = 0; k < draws / 10; ++k) {
    b.sample_batch(10, T, rng);
    for (auto s : b.last_starts()) {
      ASSERT_GE(s, 12u);
      ASSERT_LE(s, 17u);
      ++counts[s - 12];
    }
  }
  const double p = 1.0 / 6.0, sd = std::sqrt(draws * p * (1 - p));
  for (int c : counts) EXPECT_NEAR(c, draws * p, 4 * sd);
}

TEST(Replay, ActionsAreOneHotAndBlankAtEpisodeStart) {
  ReplayBuffer b(16, 2, 2);
  Transition f = step(0, true);
  f.action.clear();
  b.append(f);
  Transition t = step(1);
  t.action = {0, 2};
  b.append(t);
  std::mt19937_64 rng(0);
  auto batch = b.sample_batch(1, 2, rng);
  EXPECT_EQ(batch.action[0].sum(), 0.0f);
  EXPECT_EQ(batch.is_first[0](0, 0), 1.0f);
  EXPECT_EQ(batch.action[1](0, 0), 1.0f);
  EXPECT_EQ(batch.action[1](0, 5), 1.0f);
  EXPECT_EQ(batch.action[1].sum(), 2.0f);
  EXPECT_FLOAT_EQ(batch.reward[1](0, 0), -1.0f);
}

TEST(Replay, RejectsMalformedTransitions) {
  ReplayBuffer b(16, 2, 2);
  Transition t = step(0);
  EXPECT_THROW(b.append(t), std::invalid_argument);  // one action for two groups
  t.action = {1, 1};
  t.obs = {1.0f};
  EXPECT_THROW(b.append(t), std::invalid_argument);
  EXPECT_THROW(ReplayBuffer(0, 2, 2), std::invalid_argument);
}

TEST(Replay, RestoreReproducesSampling) {
  ReplayBuffer a(10, 2, 1);
  for (std::uint64_t i = 0; i < 27; ++i) a.append(step(i, i % 9 == 0));
  std::mt19937_64 warm(2);
  a.sample_batch(3, 4, warm);

  std::vector<Transition> live;
  for (std::uint64_t g = a.oldest(); g < a.appended(); ++g) live.push_back(a.at(g));
  ReplayBuffer b(10, 2, 1);
  b.restore(a.oldest(), live, a.env_steps_total(), a.replayed_steps_total());
  EXPECT_EQ(b.appended(), a.appended());
  EXPECT_EQ(b.env_steps_total(), a.env_steps_total());
  EXPECT_EQ(b.replayed_steps_total(), a.replayed_steps_total());

  std::mt19937_64 ra(7), rb(7);
  auto x = a.sample_batch(5, 4, ra);
  auto y = b.sample_batch(5, 4, rb);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(x.obs[t], y.obs[t]);
    EXPECT_EQ(x.action[t], y.action[t]);
    EXPECT_EQ(x.is_first[t], y.is_first[t]);
  }
}

TEST(Replay, PartialRestoreMustStartAtZero) {
  ReplayBuffer b(10, 2, 1);
  std::vector<Transition> live{step(3), step(4)};
  EXPECT_THROW(b.restore(3, live, 2, 0), std::invalid_argument);
}

TEST(TrainOpsDue, Examples) {
  EXPECT_EQ(train_ops_due(0, 0, 32.0, 16, 64), 0u);
  EXPECT_EQ(train_ops_due(8, 0, 128.0, 16, 64), 1u);
  EXPECT_EQ(train_ops_due(144, 0, 512.0, 16, 64), 72u);
  EXPECT_EQ(train_ops_due(7, 0, 128.0, 16, 64), 0u);  // 896 < 1024
  EXPECT_EQ(train_ops_due(10, 5000, 32.0, 16, 64), 0u);  // already ahead
  EXPECT_THROW(train_ops_due(1, 0, 0.0, 16, 64), std::invalid_argument);
}

TEST(TrainOpsDue, CatchUpNeverOvershootsByMoreThanOneOp) {
  std::mt19937_64 rng(11);
  for (double ratio : {0.5, 1.0, 7.3, 32.0, 64.0, 512.0}) {
    const int B = 4, T = 8;
    std::uint64_t env = 0, replayed = 0;
    for (int s = 0; s < 2000; ++s) {
      env += 1;
      const auto due = train_ops_due(env, replayed, ratio, B, T);
      replayed += due * B * T;
      EXPECT_LE(static_cast<double>(replayed), ratio * static_cast<double>(env) + B * T);
      EXPECT_EQ(train_ops_due(env, replayed, ratio, B, T), 0u);
      EXPECT_GT(static_cast<double>(replayed) + B * T, ratio * static_cast<double>(env));
    }
  }
}
