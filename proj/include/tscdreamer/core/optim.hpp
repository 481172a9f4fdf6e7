#pragma once

#include "tscdreamer/core/params.hpp"

#include <cmath>
#include <stdexcept>

namespace tscdreamer {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global-norm clip applied before the update; non-positive disables it.
  double clip = 1000.0;
};

template <class T>
double global_norm(const Gradients<T>& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) sq += g.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

/// One bias-corrected Adam update. Returns the pre-clip gradient norm.
template <class T>
double adam_step(ParamSet<T>& params, const Gradients<T>& grads, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: gradient set does not match parameters");
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adam_step: missing gradient for " + name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw std::invalid_argument("adam_step: shape mismatch for " + name);
  }
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw std::domain_error("adam_step: non-finite gradient norm");
  const T clip_scale = static_cast<T>(cfg.clip > 0.0 && norm > cfg.clip ? cfg.clip / norm : 1.0);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (auto& [name, p] : params) {
    const Matrix<T>& g = grads.at(name);
    p.step += 1;
    p.m = b1 * p.m + (T(1) - b1) * clip_scale * g;
    p.v = b2 * p.v + (T(1) - b2) * (clip_scale * g).cwiseAbs2();
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(p.step)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(p.step)));
    p.value.array() -= static_cast<T>(cfg.lr) * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + static_cast<T>(cfg.eps));
  }
  return norm;
}

}  // namespace tscdreamer
