#include "support/gradcheck.hpp"

#include "tscdreamer/core/nn.hpp"
#include "tscdreamer/core/optim.hpp"
#include "tscdreamer/core/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace tscdreamer;

namespace {

// Plain scalar Adam recurrence, written out independently of adam_step.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double x, double g, double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mh = m / (1 - std::pow(b1, t));
    double vh = v / (1 - std::pow(b2, t));
    return x - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace

TEST(Adam, ZeroGradientLeavesParamsAndCountsStep) {
  ParamSet<double> ps;
  ps.add("w", Matrix<double>::Constant(2, 2, 0.25));
  AdamConfig cfg;
  adam_step(ps, ps.zeros_like(), cfg);
  EXPECT_EQ(ps["w"], Matrix<double>::Constant(2, 2, 0.25));
  EXPECT_EQ(ps.at("w").step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamSet<double> ps;
  ps.add("x", Matrix<double>::Constant(1, 1, 1.0));
  Gradients<double> g{{"x", Matrix<double>::Constant(1, 1, 1.0)}};
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8, 1000.0};
  adam_step(ps, g, cfg);
  EXPECT_NEAR(ps["x"](0, 0), 0.9, 1e-6);
}

TEST(Adam, MatchesScalarRecurrenceOverManySteps) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  ParamSet<double> ps;
  ps.add("x", Matrix<double>::Constant(1, 1, 0.3));
  ScalarAdam ref;
  double x = 0.3;
  AdamConfig cfg{0.01, 0.9, 0.999, 1e-8, 1e9};
  for (int i = 0; i < 200; ++i) {
    double gv = n(rng);
    adam_step(ps, Gradients<double>{{"x", Matrix<double>::Constant(1, 1, gv)}}, cfg);
    x = ref.step(x, gv, 0.01);
    ASSERT_NEAR(ps["x"](0, 0), x, 1e-12);
  }
}

TEST(Adam, GlobalNormClipScalesGradient) {
  // Gradient (6, 8) has norm 10; clip 1 scales it to (0.6, 0.8). Adam is
  // scale-invariant at step 1, so compare moments instead of parameters.
  ParamSet<double> ps;
  ps.add("a", Matrix<double>::Zero(1, 1));
  ps.add("b", Matrix<double>::Zero(1, 1));
  Gradients<double> g{{"a", Matrix<double>::Constant(1, 1, 6.0)}, {"b", Matrix<double>::Constant(1, 1, 8.0)}};
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8, 1.0};
  EXPECT_NEAR(global_norm(g), 10.0, 1e-12);
  double pre = adam_step(ps, g, cfg);
  EXPECT_NEAR(pre, 10.0, 1e-12);
  EXPECT_NEAR(ps.at("a").m(0, 0), 0.1 * 0.6, 1e-12);
  EXPECT_NEAR(ps.at("b").m(0, 0), 0.1 * 0.8, 1e-12);
}

TEST(Adam, MismatchedGradientsThrow) {
  ParamSet<double> ps;
  ps.add("w", Matrix<double>::Zero(2, 2));
  AdamConfig cfg;
  EXPECT_THROW(adam_step(ps, Gradients<double>{{"w", Matrix<double>::Zero(2, 3)}}, cfg), std::invalid_argument);
  EXPECT_THROW(adam_step(ps, Gradients<double>{{"v", Matrix<double>::Zero(2, 2)}}, cfg), std::invalid_argument);
  EXPECT_THROW(adam_step(ps, Gradients<double>{}, cfg), std::invalid_argument);
}

TEST(Adam, MomentsMatchParameterShape) {
  ParamSet<float> ps;
  std::mt19937_64 rng(1);
  init_mlp(ps, "m", MlpSpec{3, {4}, 2}, rng);
  for (const auto& [name, p] : ps) {
    EXPECT_EQ(p.m.rows(), p.value.rows()) << name;
    EXPECT_EQ(p.v.cols(), p.value.cols()) << name;
  }
}

TEST(Mlp, IdentityLinearLayerPassesInput) {
  ParamSet<double> ps;
  ps.add("l.out.w", Matrix<double>::Identity(3, 3));
  ps.add("l.out.b", Matrix<double>::Zero(1, 3));
  MlpSpec spec{3, {}, 3, Activation::kSiLU, false, false};
  Tape<double> t(false);
  Matrix<double> x(2, 3);
  x << 1, -2, 3, 0.5, 0, -1;
  EXPECT_EQ(mlp(t, ps, "l", spec, t.constant(x)).value(), x);
}

TEST(Mlp, ZeroWeightsOutputBias) {
  std::mt19937_64 rng(2);
  ParamSet<double> ps;
  MlpSpec spec{4, {5}, 2, Activation::kTanh, true, false};
  init_mlp(ps, "m", spec, rng);
  ps["m.out.w"].setZero();
  ps["m.out.b"] << 0.25, -1.5;
  Tape<double> t(false);
  Matrix<double> y = mlp(t, ps, "m", spec, t.constant(Matrix<double>::Random(3, 4))).value();
  for (Eigen::Index r = 0; r < 3; ++r) {
    EXPECT_EQ(y(r, 0), 0.25);
    EXPECT_EQ(y(r, 1), -1.5);
  }
}

TEST(Mlp, TwoLayerGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (bool ln : {false, true}) {
    ParamSet<double> ps;
    MlpSpec spec{5, {7}, 3, Activation::kSiLU, ln, false};
    init_mlp(ps, "m", spec, rng);
    for (auto& [n, p] : ps) p.value += 0.1 * Matrix<double>::Random(p.value.rows(), p.value.cols());
    Matrix<double> x = Matrix<double>::Random(4, 5);
    auto loss = [&](Tape<double>& t) { return ad::sum_all(ad::square(mlp(t, ps, "m", spec, t.constant(x)))); };
    auto r = tscd_test::grad_check(ps, loss, 1e-4, 40);
    EXPECT_LT(r.worst, 1e-4) << r.worst_name << " layer_norm=" << ln;
  }
}

TEST(Mlp, InputWidthMismatchThrows) {
  std::mt19937_64 rng(4);
  ParamSet<double> ps;
  MlpSpec spec{3, {4}, 2};
  init_mlp(ps, "m", spec, rng);
  Tape<double> t(false);
  EXPECT_THROW(mlp(t, ps, "m", spec, t.constant(Matrix<double>::Zero(1, 4))), std::invalid_argument);
}

TEST(Gru, ZeroStateZeroCandidateStaysZero) {
  std::mt19937_64 rng(5);
  ParamSet<double> ps;
  init_gru(ps, "g", 3, 4, rng);
  ps["g.wx"].rightCols(4).setZero();
  ps["g.b"].rightCols(4).setZero();
  Tape<double> t(false);
  Var<double> h = gru_step(t, ps, "g", t.constant(Matrix<double>::Zero(2, 4)), t.constant(Matrix<double>::Random(2, 3)));
  EXPECT_EQ(h.value(), Matrix<double>::Zero(2, 4));
}

TEST(Gru, GradientWrtStateAndInputMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  ParamSet<double> weights;
  init_gru(weights, "g", 3, 4, rng);
  ParamSet<double> ps;
  ps.add("h", Matrix<double>::Random(2, 4));
  ps.add("x", Matrix<double>::Random(2, 3));
  auto loss = [&](Tape<double>& t) {
    Var<double> h = gru_step(t, weights, "g", t.param(ps, "h"), t.param(ps, "x"));
    return ad::sum_all(ad::mul(h, ad::tanh(h)));
  };
  EXPECT_LT(tscd_test::grad_check(ps, loss, 1e-4, 20).worst, 1e-4);
}

TEST(Gru, DimensionMismatchThrows) {
  std::mt19937_64 rng(7);
  ParamSet<double> ps;
  init_gru(ps, "g", 3, 4, rng);
  Tape<double> t(false);
  EXPECT_THROW(gru_step(t, ps, "g", t.constant(Matrix<double>::Zero(1, 5)), t.constant(Matrix<double>::Zero(1, 3))),
               std::invalid_argument);
}

TEST(Tensor, ShapeMustMatchValues) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), std::invalid_argument);
  Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
  Matrix<float> m = t.to_matrix<float>();
  EXPECT_EQ(m(1, 0), 4.0f);
  EXPECT_EQ(Tensor<float>::from_matrix(m), t);
}

TEST(Tensor, NonFiniteValuesAreFlagged) {
  Matrix<double> m = Matrix<double>::Zero(2, 2);
  EXPECT_NO_THROW(require_finite(m, "m"));
  m(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(require_finite(m, "m"), std::domain_error);
}

TEST(ParamSet, NamesAreUnique) {
  ParamSet<float> ps;
  ps.add("a", Matrix<float>::Zero(1, 1));
  EXPECT_THROW(ps.add("a", Matrix<float>::Zero(1, 1)), std::invalid_argument);
  EXPECT_THROW(ps.at("missing"), std::out_of_range);
}

TEST(Init, FanInTruncatedNormalStaysWithinTwoSigma) {
  std::mt19937_64 rng(8);
  Matrix<double> w = fan_in_init<double>(64, 200, rng);
  const double sd = 1.0 / std::sqrt(64.0) / 0.87962566103423978;
  EXPECT_LE(w.cwiseAbs().maxCoeff(), 2.0 * sd + 1e-12);
  double var = w.array().square().mean();
  EXPECT_NEAR(std::sqrt(var), 1.0 / std::sqrt(64.0), 0.01);
}
