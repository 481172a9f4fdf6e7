#pragma once

// Recurrent state-space world model: encoder, GRU sequence model, categorical
// latents with a prior (dynamics) and posterior (representation) head, plus
// decoder, reward and continue heads.

#include "tscdreamer/agent/presets.hpp"
#include "tscdreamer/core/autodiff.hpp"
#include "tscdreamer/core/categorical.hpp"
#include "tscdreamer/core/nn.hpp"
#include "tscdreamer/core/optim.hpp"
#include "tscdreamer/core/transforms.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace tscdreamer::agent {

using Rng = std::mt19937_64;

struct WorldModelConfig {
  int obs_dim = 0;
  int action_groups = 0;  // one 3-way action per intersection
  int action_classes = 3;
  SizePreset preset = size_preset("XXS");
  double unimix = 0.01;
  double free_bits = 1.0;
  double beta_pred = 1.0;
  double beta_dyn = 0.5;
  double beta_rep = 0.1;
  int bins = 255;
  double bin_limit = 20.0;
  AdamConfig optimizer{1e-4, 0.9, 0.999, 1e-8, 1000.0};

  int action_dim() const { return action_groups * action_classes; }
};

template <class T>
struct LatentState {
  Matrix<T> h;  // [batch × deter]
  Matrix<T> z;  // [batch × groups·classes], one-hot per group

  Matrix<T> feature() const {
    Matrix<T> f(h.rows(), h.cols() + z.cols());
    f << h, z;
    return f;
  }
  Eigen::Index batch() const { return h.rows(); }
};

template <class T>
struct LatentVars {
  Var<T> h;
  Var<T> z;
  Var<T> feature() const { return ad::concat_cols({h, z}); }
  LatentState<T> values() const { return {h.value(), z.value()}; }
};

/// Time-major replay batch: element t of each vector is [batch × dims].
/// action[t] is the one-hot action that led to obs[t] (zero at resets).
template <class T>
struct WorldModelBatch {
  std::vector<Matrix<T>> obs;
  std::vector<Matrix<T>> action;
  std::vector<Matrix<T>> reward;
  std::vector<Matrix<T>> cont;
  std::vector<Matrix<T>> is_first;

  int length() const { return static_cast<int>(obs.size()); }
  int batch() const { return obs.empty() ? 0 : static_cast<int>(obs[0].rows()); }

  void validate(int obs_dim, int action_dim) const {
    const auto n = obs.size();
    if (n == 0) throw std::invalid_argument("empty world-model batch");
    if (action.size() != n || reward.size() != n || cont.size() != n || is_first.size() != n)
      throw std::invalid_argument("world-model batch time axes are not aligned");
    const auto b = obs[0].rows();
    for (std::size_t t = 0; t < n; ++t) {
      if (obs[t].rows() != b || obs[t].cols() != obs_dim) throw std::invalid_argument("observation shape mismatch");
      if (action[t].rows() != b || action[t].cols() != action_dim) throw std::invalid_argument("action shape mismatch");
      if (reward[t].rows() != b || reward[t].cols() != 1 || cont[t].rows() != b || cont[t].cols() != 1 ||
          is_first[t].rows() != b || is_first[t].cols() != 1)
        throw std::invalid_argument("reward/continue/is_first must be [batch × 1]");
    }
  }
};

struct LossBreakdown {
  double decoder = 0.0;
  double reward = 0.0;
  double cont = 0.0;
  double pred = 0.0;  // decoder + reward + cont
  double dyn = 0.0;
  double rep = 0.0;
  double total = 0.0;
};

template <class T>
struct ObserveResult {
  LatentVars<T> state;
  Var<T> prior_logits;
  Var<T> post_logits;
  Var<T> prior_probs;
  Var<T> post_probs;
};

template <class T>
struct ImagineResult {
  LatentVars<T> state;
  Var<T> prior_probs;
};

template <class T>
struct WorldModelForward {
  Var<T> loss;
  LossBreakdown parts;
  LatentState<T> posterior;  // stacked time-major: row t·batch + b
  std::vector<Matrix<T>> prior_logits;
  std::vector<Matrix<T>> post_logits;
  std::vector<Matrix<T>> kl_raw;  // per timestep [batch × 1] representation KL before the floor
};

template <class T>
struct HeadOutputs {
  Matrix<T> decoded;       // symlog-space observation
  Matrix<T> reward_probs;  // over the bin grid
  Matrix<T> reward;        // decoded expectation [batch × 1]
  Matrix<T> cont_prob;     // [batch × 1]
};

template <class T>
Matrix<T> symlog_matrix(const Matrix<T>& x) {
  return x.unaryExpr([](T v) { return symlog(v); });
}

template <class T>
class WorldModel {
 public:
  WorldModel(WorldModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), bins_(BinGrid::symexp_spaced(static_cast<std::size_t>(cfg_.bins), cfg_.bin_limit)) {
    if (cfg_.obs_dim <= 0 || cfg_.action_groups <= 0) throw std::invalid_argument("world model needs observation and action sizes");
    const SizePreset& p = cfg_.preset;
    Rng rng(seed);
    const std::vector<int> hidden(static_cast<std::size_t>(p.depth), p.hidden);
    encoder_ = {cfg_.obs_dim, hidden, p.hidden, Activation::kSiLU, true, false};
    prior_ = {p.deter, {p.hidden}, p.latent(), Activation::kSiLU, true, false};
    post_ = {p.deter + p.hidden, {p.hidden}, p.latent(), Activation::kSiLU, true, false};
    decoder_ = {p.feature(), hidden, cfg_.obs_dim, Activation::kSiLU, true, false};
    reward_ = {p.feature(), hidden, cfg_.bins, Activation::kSiLU, true, true};
    cont_ = {p.feature(), hidden, 1, Activation::kSiLU, true, false};
    init_mlp(params_, "enc", encoder_, rng);
    init_norm_dense(params_, "img_in", p.latent() + cfg_.action_dim(), p.hidden, true, rng);
    init_gru(params_, "gru", p.hidden, p.deter, rng);
    init_mlp(params_, "prior", prior_, rng);
    init_mlp(params_, "post", post_, rng);
    init_mlp(params_, "dec", decoder_, rng);
    init_mlp(params_, "rew", reward_, rng);
    init_mlp(params_, "cont", cont_, rng);
  }

  const WorldModelConfig& config() const { return cfg_; }
  const SizePreset& preset() const { return cfg_.preset; }
  const BinGrid& bins() const { return bins_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// h = 0 and z = the most likely prior latent at h = 0, for every row.
  LatentState<T> initial_state(Eigen::Index batch) {
    Tape<T> tape(false);
    Var<T> h0 = tape.constant(Matrix<T>::Zero(1, cfg_.preset.deter));
    Var<T> probs = unimix_probs(mlp(tape, params_, "prior", prior_, h0), classes(), mix());
    Matrix<T> z0 = mode_onehot(probs.value(), classes());
    LatentState<T> s;
    s.h = Matrix<T>::Zero(batch, cfg_.preset.deter);
    s.z = z0.replicate(batch, 1);
    return s;
  }

  LatentVars<T> constant_state(Tape<T>& tape, const LatentState<T>& s) const {
    return {tape.constant(s.h), tape.constant(s.z)};
  }

  Var<T> embed(Tape<T>& tape, const Matrix<T>& raw_obs) {
    return mlp(tape, params_, "enc", encoder_, tape.constant(symlog_matrix(raw_obs)));
  }

  /// Posterior update. Rows flagged in `is_first` restart from the initial
  /// state with a zero action.
  template <class R>
  ObserveResult<T> observe_step(Tape<T>& tape, LatentVars<T> prev, Var<T> action, Var<T> embedding,
                                const Matrix<T>& is_first, R& rng, bool sample = true) {
    reset_rows(tape, prev, action, is_first);
    Var<T> h = recurrent(tape, prev, action);
    ObserveResult<T> out;
    out.prior_logits = mlp(tape, params_, "prior", prior_, h);
    out.post_logits = mlp(tape, params_, "post", post_, ad::concat_cols({h, embedding}));
    out.prior_probs = unimix_probs(out.prior_logits, classes(), mix());
    out.post_probs = unimix_probs(out.post_logits, classes(), mix());
    out.state = {h, draw(out.post_probs, rng, sample)};
    return out;
  }

  /// Prior-only update used for imagination.
  template <class R>
  ImagineResult<T> imagine_step(Tape<T>& tape, LatentVars<T> prev, Var<T> action, R& rng, bool sample = true) {
    Var<T> h = recurrent(tape, prev, action);
    Var<T> probs = unimix_probs(mlp(tape, params_, "prior", prior_, h), classes(), mix());
    return {{h, draw(probs, rng, sample)}, probs};
  }

  Var<T> decode(Tape<T>& tape, Var<T> feature) { return mlp(tape, params_, "dec", decoder_, feature); }
  Var<T> reward_logits(Tape<T>& tape, Var<T> feature) { return mlp(tape, params_, "rew", reward_, feature); }
  Var<T> cont_logit(Tape<T>& tape, Var<T> feature) { return mlp(tape, params_, "cont", cont_, feature); }

  /// Decoder output is skipped when `decode_obs` is false (imagination only
  /// needs reward and continue).
  HeadOutputs<T> heads(const LatentState<T>& s, bool decode_obs = true) {
    Tape<T> tape(false);
    Var<T> f = tape.constant(s.feature());
    HeadOutputs<T> o;
    if (decode_obs) o.decoded = decode(tape, f).value();
    o.reward_probs = ad::group_softmax(reward_logits(tape, f), cfg_.bins).value();
    o.reward = twohot_decode_rows(o.reward_probs, bins_).template cast<T>();
    o.cont_prob = ad::sigmoid(cont_logit(tape, f)).value();
    return o;
  }

  /// World-model objective over a replay batch. The first step of every
  /// sequence starts from the initial state.
  template <class R>
  WorldModelForward<T> loss(Tape<T>& tape, const WorldModelBatch<T>& batch, R& rng, bool sample = true) {
    batch.validate(cfg_.obs_dim, cfg_.action_dim());
    const int len = batch.length();
    const Eigen::Index b = batch.batch();

    Matrix<T> all_obs = stack(batch.obs);
    Var<T> embeds = embed(tape, all_obs);

    LatentVars<T> state = constant_state(tape, initial_state(b));
    std::vector<Var<T>> feats, dyn_terms, rep_terms;
    WorldModelForward<T> out;
    const T free = static_cast<T>(cfg_.free_bits);
    for (int t = 0; t < len; ++t) {
      Matrix<T> first = batch.is_first[static_cast<std::size_t>(t)];
      if (t == 0) first.setOnes();
      Var<T> act = tape.constant(batch.action[static_cast<std::size_t>(t)]);
      ObserveResult<T> step =
          observe_step(tape, state, act, ad::slice_rows(embeds, t * b, b), first, rng, sample);
      state = step.state;
      feats.push_back(state.feature());
      Var<T> dyn = sum_kl(ad::stop_gradient(step.post_probs), step.prior_probs);
      Var<T> rep = sum_kl(step.post_probs, ad::stop_gradient(step.prior_probs));
      out.kl_raw.push_back(rep.value());
      dyn_terms.push_back(free > T(0) ? ad::clamp_min(dyn, free) : dyn);
      rep_terms.push_back(free > T(0) ? ad::clamp_min(rep, free) : rep);
      out.prior_logits.push_back(step.prior_logits.value());
      out.post_logits.push_back(step.post_logits.value());
    }

    Var<T> feat = ad::concat_rows(feats);
    Var<T> dec_err = ad::sum_cols(ad::square(ad::sub(decode(tape, feat), tape.constant(symlog_matrix(all_obs)))));
    Var<T> dec_loss = ad::mean_all(dec_err);

    Matrix<T> rewards = stack(batch.reward);
    Matrix<T> targets = twohot_matrix<T>(rewards.col(0).template cast<double>(), bins_);
    Var<T> rew_logp = ad::group_log_softmax(reward_logits(tape, feat), cfg_.bins);
    Var<T> rew_loss = ad::scale(ad::mean_all(ad::sum_cols(ad::mul(rew_logp, tape.constant(targets)))), T(-1));

    // Bernoulli NLL from the logit: softplus(l) − y·l.
    Var<T> logit = cont_logit(tape, feat);
    Var<T> cont_loss = ad::mean_all(ad::sub(ad::softplus(logit), ad::mul(logit, tape.constant(stack(batch.cont)))));

    Var<T> dyn_loss = ad::mean_all(ad::concat_rows(dyn_terms));
    Var<T> rep_loss = ad::mean_all(ad::concat_rows(rep_terms));
    Var<T> pred = ad::add(ad::add(dec_loss, rew_loss), cont_loss);
    out.loss = ad::add(ad::add(ad::scale(pred, static_cast<T>(cfg_.beta_pred)), ad::scale(dyn_loss, static_cast<T>(cfg_.beta_dyn))),
                       ad::scale(rep_loss, static_cast<T>(cfg_.beta_rep)));

    out.parts.decoder = dec_loss.scalar();
    out.parts.reward = rew_loss.scalar();
    out.parts.cont = cont_loss.scalar();
    out.parts.pred = pred.scalar();
    out.parts.dyn = dyn_loss.scalar();
    out.parts.rep = rep_loss.scalar();
    out.parts.total = out.loss.scalar();

    const Matrix<T>& fv = feat.value();
    out.posterior.h = fv.leftCols(cfg_.preset.deter);
    out.posterior.z = fv.rightCols(cfg_.preset.latent());
    return out;
  }

  /// One optimizer step on the world-model loss.
  template <class R>
  WorldModelForward<T> train_step(const WorldModelBatch<T>& batch, R& rng) {
    Tape<T> tape;
    WorldModelForward<T> fwd = loss(tape, batch, rng);
    if (!std::isfinite(fwd.parts.total)) throw std::domain_error("world-model loss is not finite");
    Gradients<T> g = grad(fwd.loss, params_);
    adam_step(params_, g, cfg_.optimizer);
    return fwd;
  }

  Eigen::Index classes() const { return cfg_.preset.classes; }
  T mix() const { return static_cast<T>(cfg_.unimix); }

 private:
  Var<T> sum_kl(Var<T> p, Var<T> q) { return ad::sum_cols(categorical_kl(p, q, classes())); }

  static Matrix<T> stack(const std::vector<Matrix<T>>& rows) {
    Eigen::Index n = 0;
    for (const auto& m : rows) n += m.rows();
    Matrix<T> out(n, rows.empty() ? 0 : rows[0].cols());
    Eigen::Index r = 0;
    for (const auto& m : rows) {
      out.middleRows(r, m.rows()) = m;
      r += m.rows();
    }
    return out;
  }

  void reset_rows(Tape<T>& tape, LatentVars<T>& prev, Var<T>& action, const Matrix<T>& is_first) {
    if (is_first.rows() != prev.h.rows() || is_first.cols() != 1) throw std::invalid_argument("is_first must be [batch × 1]");
    if (is_first.isZero()) return;
    const Eigen::Index b = prev.h.rows();
    LatentState<T> init = initial_state(b);
    Var<T> keep = tape.constant((Matrix<T>::Ones(b, 1) - is_first).eval());
    Var<T> first = tape.constant(is_first);
    prev.h = ad::mul_col(prev.h, keep);
    prev.z = ad::add(ad::mul_col(prev.z, keep), ad::mul_col(tape.constant(init.z), first));
    action = ad::mul_col(action, keep);
  }

  Var<T> recurrent(Tape<T>& tape, const LatentVars<T>& prev, Var<T> action) {
    if (action.cols() != cfg_.action_dim()) throw std::invalid_argument("action width mismatch");
    Var<T> x = norm_dense(tape, params_, "img_in", ad::concat_cols({prev.z, action}), true, Activation::kSiLU);
    return gru_step(tape, params_, "gru", prev.h, x);
  }

  template <class R>
  Var<T> draw(Var<T> probs, R& rng, bool sample) {
    return ad::straight_through_with(probs, [&](const Matrix<T>& p) {
      return sample ? sample_onehot(p, classes(), rng) : mode_onehot(p, classes());
    });
  }

  WorldModelConfig cfg_;
  BinGrid bins_;
  ParamSet<T> params_;
  MlpSpec encoder_, prior_, post_, decoder_, reward_, cont_;
};

}  // namespace tscdreamer::agent
