#pragma once

// Dense building blocks on top of the tape: MLPs and a gated recurrent unit.

#include "tscdreamer/core/autodiff.hpp"
#include "tscdreamer/core/params.hpp"

#include <string>
#include <vector>

namespace tscdreamer {

enum class Activation { kSiLU, kTanh, kNone };

struct MlpSpec {
  int input = 0;
  std::vector<int> hidden;  // widths of the hidden layers
  int output = 0;
  Activation activation = Activation::kSiLU;
  bool layer_norm = true;
  // Zero the output layer (heads whose initial prediction should be neutral).
  bool zero_output = false;
};

template <class T>
Var<T> activate(Var<T> x, Activation a) {
  switch (a) {
    case Activation::kSiLU:
      return ad::silu(x);
    case Activation::kTanh:
      return ad::tanh(x);
    case Activation::kNone:
      return x;
  }
  return x;
}

template <class T, class Rng>
void init_linear(ParamSet<T>& ps, const std::string& prefix, int in, int out, Rng& rng, bool zero = false) {
  ps.add(prefix + ".w", zero ? Matrix<T>(Matrix<T>::Zero(in, out)) : fan_in_init<T>(in, out, rng));
  ps.add(prefix + ".b", Matrix<T>::Zero(1, out));
}

/// Affine → optional layer norm (learned gain and offset) → activation.
template <class T, class Rng>
void init_norm_dense(ParamSet<T>& ps, const std::string& prefix, int in, int out, bool layer_norm, Rng& rng) {
  init_linear(ps, prefix, in, out, rng);
  if (layer_norm) {
    ps.add(prefix + ".ln_g", Matrix<T>::Ones(1, out));
    ps.add(prefix + ".ln_b", Matrix<T>::Zero(1, out));
  }
}

template <class T, class Rng>
void init_mlp(ParamSet<T>& ps, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
  int in = spec.input;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    init_norm_dense(ps, prefix + ".h" + std::to_string(i), in, spec.hidden[i], spec.layer_norm, rng);
    in = spec.hidden[i];
  }
  init_linear(ps, prefix + ".out", in, spec.output, rng, spec.zero_output);
}

template <class T>
Var<T> dense(Tape<T>& tape, ParamSet<T>& ps, const std::string& prefix, Var<T> x) {
  return ad::linear(x, tape.param(ps, prefix + ".w"), tape.param(ps, prefix + ".b"));
}

template <class T>
Var<T> norm_dense(Tape<T>& tape, ParamSet<T>& ps, const std::string& prefix, Var<T> x, bool layer_norm,
                  Activation act) {
  x = dense(tape, ps, prefix, x);
  if (layer_norm) {
    x = ad::layer_norm(x);
    x = ad::add_row(ad::mul_row(x, tape.param(ps, prefix + ".ln_g")), tape.param(ps, prefix + ".ln_b"));
  }
  return activate(x, act);
}

/// Hidden layers are affine → optional layer norm → activation; the output
/// layer is affine only.
template <class T>
Var<T> mlp(Tape<T>& tape, ParamSet<T>& ps, const std::string& prefix, const MlpSpec& spec, Var<T> x) {
  if (x.cols() != spec.input) throw std::invalid_argument("mlp " + prefix + ": input width mismatch");
  for (std::size_t i = 0; i < spec.hidden.size(); ++i)
    x = norm_dense(tape, ps, prefix + ".h" + std::to_string(i), x, spec.layer_norm, spec.activation);
  return dense(tape, ps, prefix + ".out", x);
}

// GRU with gate columns laid out [reset | update | candidate]:
//   r = σ(x·Wx_r + h·Wh_r + b_r)
//   u = σ(x·Wx_u + h·Wh_u + b_u)
//   n = tanh(x·Wx_n + b_n + r ⊙ (h·Wh_n))
//   h' = u ⊙ n + (1 − u) ⊙ h
template <class T, class Rng>
void init_gru(ParamSet<T>& ps, const std::string& prefix, int input, int width, Rng& rng, T update_bias = T(-1)) {
  ps.add(prefix + ".wx", fan_in_init<T>(input, 3 * width, rng));
  ps.add(prefix + ".wh", fan_in_init<T>(width, 3 * width, rng));
  Matrix<T> b = Matrix<T>::Zero(1, 3 * width);
  b.middleCols(width, width).setConstant(update_bias);
  ps.add(prefix + ".b", std::move(b));
}

template <class T>
Var<T> gru_step(Tape<T>& tape, ParamSet<T>& ps, const std::string& prefix, Var<T> h, Var<T> x) {
  Var<T> wx = tape.param(ps, prefix + ".wx");
  Var<T> wh = tape.param(ps, prefix + ".wh");
  Var<T> b = tape.param(ps, prefix + ".b");
  const Eigen::Index width = h.cols();
  if (wh.rows() != width || wx.rows() != x.cols() || h.rows() != x.rows())
    throw std::invalid_argument("gru_step " + prefix + ": dimension mismatch");
  Var<T> xs = ad::linear(x, wx, b);
  Var<T> hs = ad::matmul(h, wh);
  Var<T> r = ad::sigmoid(ad::add(ad::slice_cols(xs, 0, width), ad::slice_cols(hs, 0, width)));
  Var<T> u = ad::sigmoid(ad::add(ad::slice_cols(xs, width, width), ad::slice_cols(hs, width, width)));
  Var<T> n = ad::tanh(ad::add(ad::slice_cols(xs, 2 * width, width), ad::mul(r, ad::slice_cols(hs, 2 * width, width))));
  // h' = h + u ⊙ (n − h)
  return ad::add(h, ad::mul(u, ad::sub(n, h)));
}

}  // namespace tscdreamer
