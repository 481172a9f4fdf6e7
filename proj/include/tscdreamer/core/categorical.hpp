#pragma once

// Grouped categorical distributions: unimix probabilities, straight-through
// one-hot samples and KL divergences. Logits are laid out [rows × groups·classes].

#include "tscdreamer/core/autodiff.hpp"

#include <random>
#include <stdexcept>

namespace tscdreamer {

/// softmax mixed with a uniform floor: (1 − mix)·softmax + mix/classes.
template <class T>
Var<T> unimix_probs(Var<T> logits, Eigen::Index classes, T mix) {
  Var<T> p = ad::group_softmax(logits, classes);
  if (mix <= T(0)) return p;
  return ad::add_scalar(ad::scale(p, T(1) - mix), mix / T(classes));
}

/// Inverse-CDF sample of one class per group, drawn in row-major group order.
template <class T, class Rng>
Matrix<T> sample_onehot(const Matrix<T>& probs, Eigen::Index classes, Rng& rng) {
  if (!all_finite(probs)) throw std::domain_error("sample_onehot: non-finite probabilities");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix<T> out = Matrix<T>::Zero(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r)
    for (Eigen::Index g = 0; g < probs.cols(); g += classes) {
      double u = unif(rng);
      double total = 0.0;
      for (Eigen::Index k = 0; k < classes; ++k) total += static_cast<double>(probs(r, g + k));
      u *= total;
      Eigen::Index pick = classes - 1;
      double acc = 0.0;
      for (Eigen::Index k = 0; k < classes; ++k) {
        acc += static_cast<double>(probs(r, g + k));
        if (u < acc) {
          pick = k;
          break;
        }
      }
      out(r, g + pick) = T(1);
    }
  return out;
}

/// One-hot at the most likely class of each group; ties go to the lowest index.
template <class T>
Matrix<T> mode_onehot(const Matrix<T>& probs, Eigen::Index classes) {
  Matrix<T> out = Matrix<T>::Zero(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r)
    for (Eigen::Index g = 0; g < probs.cols(); g += classes) {
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < classes; ++k)
        if (probs(r, g + k) > probs(r, g + best)) best = k;
      out(r, g + best) = T(1);
    }
  return out;
}

template <class T>
struct CategoricalSample {
  Var<T> sample;  // one-hot value, straight-through gradient
  Var<T> probs;
};

template <class T, class Rng>
CategoricalSample<T> categorical_sample_st(Var<T> logits, Eigen::Index classes, Rng& rng, T mix = T(0)) {
  if (!all_finite(logits.value())) throw std::domain_error("categorical_sample_st: non-finite logits");
  Var<T> probs = unimix_probs(logits, classes, mix);
  return {ad::straight_through_with(probs, [&](const Matrix<T>& p) { return sample_onehot(p, classes, rng); }), probs};
}

/// Σ_k p_k (ln p_k − ln q_k) per group: [rows × groups].
template <class T>
Var<T> categorical_kl(Var<T> p, Var<T> q, Eigen::Index classes) {
  Var<T> terms = ad::mul(p, ad::sub(ad::log(p), ad::log(q)));
  return ad::group_sum(terms, classes);
}

/// Σ_k p_k ln p_k negated, per group: [rows × groups].
template <class T>
Var<T> categorical_entropy(Var<T> p, Eigen::Index classes) {
  return ad::scale(ad::group_sum(ad::mul(p, ad::log(p)), classes), T(-1));
}

}  // namespace tscdreamer
