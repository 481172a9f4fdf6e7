#include "support/gradcheck.hpp"

#include "tscdreamer/agent/world_model.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace tscdreamer;
using namespace tscdreamer::agent;

namespace {

const SizePreset kTiny{"tiny", 8, 8, 2, 2, 1};

WorldModelConfig tiny_config(int obs_dim = 5, int groups = 2) {
  WorldModelConfig c;
  c.obs_dim = obs_dim;
  c.action_groups = groups;
  c.preset = kTiny;
  c.bins = 31;
  c.bin_limit = 6.0;
  return c;
}

template <class T>
WorldModelBatch<T> random_batch(int batch, int len, int obs_dim, int groups, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> q(0.0, 50.0);
  std::uniform_int_distribution<int> a(0, 2);
  std::normal_distribution<double> r(-20.0, 15.0);
  WorldModelBatch<T> b;
  for (int t = 0; t < len; ++t) {
    Matrix<T> o(batch, obs_dim), act = Matrix<T>::Zero(batch, groups * 3), rew(batch, 1), cont(batch, 1), first(batch, 1);
    for (int i = 0; i < batch; ++i) {
      for (int d = 0; d < obs_dim; ++d) o(i, d) = static_cast<T>(q(rng));
      for (int g = 0; g < groups; ++g) act(i, g * 3 + a(rng)) = T(1);
      rew(i, 0) = static_cast<T>(r(rng));
      cont(i, 0) = T(1);
      first(i, 0) = t == 0 ? T(1) : T(0);
    }
    b.obs.push_back(o);
    b.action.push_back(act);
    b.reward.push_back(rew);
    b.cont.push_back(cont);
    b.is_first.push_back(first);
  }
  return b;
}

// Makes the prior head compute exactly what the posterior head computes, by
// zeroing the posterior's embedding rows and copying its weights into the prior.
template <class T>
void tie_prior_to_posterior(WorldModel<T>& wm) {
  auto& p = wm.params();
  const int deter = wm.preset().deter;
  p["post.h0.w"].bottomRows(p["post.h0.w"].rows() - deter).setZero();
  p["prior.h0.w"] = p["post.h0.w"].topRows(deter);
  for (const char* n : {"h0.b", "h0.ln_g", "h0.ln_b", "out.w", "out.b"}) p[std::string("prior.") + n] = p[std::string("post.") + n];
}

}  // namespace

TEST(WorldModel, InitialStateShapeAndDeterminism) {
  WorldModel<float> wm(tiny_config(), 3);
  auto s = wm.initial_state(4);
  EXPECT_EQ(s.h.rows(), 4);
  EXPECT_EQ(s.h.cols(), 8);
  EXPECT_TRUE(s.h.isZero());
  EXPECT_EQ(s.z.rows(), 4);
  EXPECT_EQ(s.z.cols(), 4);
  EXPECT_EQ(wm.initial_state(4).z, s.z);
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index g = 0; g < 4; g += 2) EXPECT_EQ(s.z.row(r).segment(g, 2).sum(), 1.0f);
}

TEST(WorldModel, ObserveStepProbabilitiesAndOneHot) {
  WorldModelConfig cfg = tiny_config();
  WorldModel<double> wm(cfg, 4);
  auto b = random_batch<double>(3, 1, 5, 2, 1);
  std::mt19937_64 rng(1);
  Tape<double> t(false);
  auto r = wm.observe_step(t, wm.constant_state(t, wm.initial_state(3)), t.constant(b.action[0]), wm.embed(t, b.obs[0]),
                           b.is_first[0], rng);
  const Matrix<double>& p = r.post_probs.value();
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index g = 0; g < 4; g += 2) {
      EXPECT_NEAR(p.row(i).segment(g, 2).sum(), 1.0, 1e-6);
      EXPECT_EQ(r.state.z.value().row(i).segment(g, 2).sum(), 1.0);
    }
  EXPECT_EQ(r.state.h.cols(), 8);
}

TEST(WorldModel, IsFirstIgnoresPreviousState) {
  WorldModel<double> wm(tiny_config(), 5);
  auto b = random_batch<double>(2, 1, 5, 2, 2);
  Matrix<double> first = Matrix<double>::Ones(2, 1);
  auto run = [&](const LatentState<double>& prev, const Matrix<double>& act) {
    std::mt19937_64 rng(7);
    Tape<double> t(false);
    return wm.observe_step(t, wm.constant_state(t, prev), t.constant(act), wm.embed(t, b.obs[0]), first, rng).state.values();
  };
  LatentState<double> junk{Matrix<double>::Random(2, 8), wm.initial_state(2).z};
  junk.z.setZero();
  junk.z(0, 1) = junk.z(0, 3) = junk.z(1, 0) = junk.z(1, 3) = 1.0;
  auto a = run(wm.initial_state(2), Matrix<double>::Zero(2, 6));
  auto c = run(junk, b.action[0]);
  EXPECT_EQ(a.h, c.h);
  EXPECT_EQ(a.z, c.z);
}

TEST(WorldModel, ImagineMatchesObserveWhenPriorMirrorsPosterior) {
  WorldModel<double> wm(tiny_config(), 6);
  tie_prior_to_posterior(wm);
  auto b = random_batch<double>(3, 1, 5, 2, 3);
  LatentState<double> start = wm.initial_state(3);
  std::mt19937_64 r1(11), r2(11);
  Tape<double> t1(false), t2(false);
  auto obs = wm.observe_step(t1, wm.constant_state(t1, start), t1.constant(b.action[0]), wm.embed(t1, b.obs[0]),
                             Matrix<double>::Zero(3, 1), r1);
  auto img = wm.imagine_step(t2, wm.constant_state(t2, start), t2.constant(b.action[0]), r2);
  EXPECT_EQ(obs.state.h.value(), img.state.h.value());
  EXPECT_EQ(obs.state.z.value(), img.state.z.value());
  EXPECT_EQ(img.state.h.cols(), 8);
}

TEST(WorldModel, HeadsRangesAndShapes) {
  WorldModel<double> wm(tiny_config(7), 7);
  std::mt19937_64 rng(3);
  LatentState<double> s{Matrix<double>::Random(6, 8), Matrix<double>::Zero(6, 4)};
  for (Eigen::Index i = 0; i < 6; ++i) s.z(i, rng() % 2) = s.z(i, 2 + rng() % 2) = 1.0;
  wm.params()["rew.out.w"].setRandom();
  auto h = wm.heads(s);
  EXPECT_EQ(h.decoded.cols(), 7);
  for (Eigen::Index i = 0; i < 6; ++i) {
    EXPECT_NEAR(h.reward_probs.row(i).sum(), 1.0, 1e-6);
    EXPECT_GT(h.cont_prob(i, 0), 0.0);
    EXPECT_LT(h.cont_prob(i, 0), 1.0);
  }
}

TEST(WorldModel, ZeroInitRewardHeadPredictsZero) {
  WorldModel<float> wm(tiny_config(), 8);
  auto h = wm.heads(wm.initial_state(2));
  EXPECT_NEAR(h.reward(0, 0), 0.0f, 1e-6f);
}

TEST(WorldModel, IdenticalPriorAndPosteriorHitFreeBitsFloor) {
  WorldModel<double> wm(tiny_config(), 9);
  tie_prior_to_posterior(wm);
  auto b = random_batch<double>(4, 3, 5, 2, 4);
  std::mt19937_64 rng(1);
  Tape<double> t;
  auto f = wm.loss(t, b, rng);
  EXPECT_DOUBLE_EQ(f.parts.dyn, 1.0);
  EXPECT_DOUBLE_EQ(f.parts.rep, 1.0);
  for (const auto& k : f.kl_raw) EXPECT_NEAR(k.cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(WorldModel, TotalIsWeightedSum) {
  WorldModelConfig cfg = tiny_config();
  WorldModel<double> wm(cfg, 10);
  auto b = random_batch<double>(4, 3, 5, 2, 5);
  std::mt19937_64 rng(2);
  Tape<double> t;
  auto f = wm.loss(t, b, rng);
  EXPECT_NEAR(f.parts.total, cfg.beta_pred * f.parts.pred + cfg.beta_dyn * f.parts.dyn + cfg.beta_rep * f.parts.rep, 1e-9);
  EXPECT_NEAR(f.parts.pred, f.parts.decoder + f.parts.reward + f.parts.cont, 1e-9);
  EXPECT_GE(f.parts.dyn, 1.0);
  EXPECT_GE(f.parts.rep, 1.0);
  for (const auto& k : f.kl_raw) EXPECT_GE(k.minCoeff(), -1e-12);
}

TEST(WorldModel, TwoClassKlMatchesClosedForm) {
  Tape<double> t(false);
  Matrix<double> p(1, 2), q(1, 2);
  p << 0.3, 0.7;
  q << 0.6, 0.4;
  double expect = 0.3 * std::log(0.3 / 0.6) + 0.7 * std::log(0.7 / 0.4);
  EXPECT_NEAR(categorical_kl(t.constant(p), t.constant(q), 2).value()(0, 0), expect, 1e-6);
}

TEST(WorldModel, ResetInsideBatchEqualsTruncatedBatch) {
  WorldModel<double> wm(tiny_config(), 11);
  auto full = random_batch<double>(2, 5, 5, 2, 6);
  full.is_first[2].setOnes();
  WorldModelBatch<double> tail;
  for (int t = 2; t < 5; ++t) {
    tail.obs.push_back(full.obs[static_cast<std::size_t>(t)]);
    tail.action.push_back(full.action[static_cast<std::size_t>(t)]);
    tail.reward.push_back(full.reward[static_cast<std::size_t>(t)]);
    tail.cont.push_back(full.cont[static_cast<std::size_t>(t)]);
    tail.is_first.push_back(full.is_first[static_cast<std::size_t>(t)]);
  }
  std::mt19937_64 r1(1), r2(1);
  Tape<double> t1(false), t2(false);
  auto a = wm.loss(t1, full, r1, false);
  auto b = wm.loss(t2, tail, r2, false);
  EXPECT_TRUE(a.posterior.h.bottomRows(6).isApprox(b.posterior.h, 1e-12));
  EXPECT_EQ(a.posterior.z.bottomRows(6), b.posterior.z);
}

TEST(WorldModel, StopGradientsSeparatePriorAndPosterior) {
  auto grads_for = [](double dyn, double rep) {
    WorldModelConfig cfg = tiny_config();
    cfg.free_bits = 0.0;
    cfg.beta_pred = 0.0;
    cfg.beta_dyn = dyn;
    cfg.beta_rep = rep;
    WorldModel<double> wm(cfg, 12);
    auto b = random_batch<double>(3, 1, 5, 2, 7);
    std::mt19937_64 rng(3);
    Tape<double> t;
    auto f = wm.loss(t, b, rng);
    return grad(f.loss, wm.params());
  };
  auto dyn = grads_for(1.0, 0.0);
  auto rep = grads_for(0.0, 1.0);
  for (const auto& [name, g] : dyn) {
    if (name.rfind("post.", 0) == 0 || name.rfind("enc.", 0) == 0) {
      EXPECT_TRUE(g.isZero()) << name;
    }
  }
  for (const auto& [name, g] : rep) {
    if (name.rfind("prior.", 0) == 0) {
      EXPECT_TRUE(g.isZero()) << name;
    }
  }
  EXPECT_FALSE(dyn.at("prior.out.w").isZero());
  EXPECT_FALSE(rep.at("post.out.w").isZero());
}

TEST(WorldModel, GradientMatchesFiniteDifferences) {
  for (double free_bits : {0.0, 1.0}) {
    WorldModelConfig cfg = tiny_config();
    cfg.free_bits = free_bits;
    WorldModel<double> wm(cfg, 13);
    for (auto& [n, p] : wm.params()) p.value += 0.05 * Matrix<double>::Random(p.value.rows(), p.value.cols());
    auto b = random_batch<double>(2, 3, 5, 2, 8);
    b.is_first[2](1, 0) = 1.0;
    auto loss = [&](Tape<double>& t) {
      std::mt19937_64 rng(17);
      return wm.loss(t, b, rng).loss;
    };
    auto r = tscd_test::grad_check(wm.params(), loss, 1e-4, 10);
    EXPECT_LT(r.worst, 1e-3) << r.worst_name << " free_bits=" << free_bits;
  }
}

TEST(WorldModel, TrainingReducesLossOnFixedBatch) {
  WorldModelConfig cfg = tiny_config();
  cfg.optimizer.lr = 3e-3;
  WorldModel<float> wm(cfg, 14);
  auto b = random_batch<float>(8, 8, 5, 2, 9);
  std::mt19937_64 rng(5);
  const double first = wm.train_step(b, rng).parts.total;
  double last = first;
  for (int i = 0; i < 150; ++i) last = wm.train_step(b, rng).parts.total;
  EXPECT_LT(last, 0.7 * first);
}

TEST(WorldModel, BatchValidation) {
  WorldModel<float> wm(tiny_config(), 15);
  auto b = random_batch<float>(2, 3, 5, 2, 10);
  b.reward.pop_back();
  std::mt19937_64 rng(1);
  Tape<float> t;
  EXPECT_THROW(wm.loss(t, b, rng), std::invalid_argument);
  auto c = random_batch<float>(2, 3, 4, 2, 10);
  EXPECT_THROW(wm.loss(t, c, rng), std::invalid_argument);
}
