#pragma once

#include "tscdreamer/core/tensor.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

namespace tscdreamer {

template <class T>
struct Param {
  Matrix<T> value;
  // Adam moments, same shape as value.
  Matrix<T> m;
  Matrix<T> v;
  std::int64_t step = 0;
};

template <class T>
using Gradients = std::map<std::string, Matrix<T>>;

/// Named parameters with their optimizer state. Iteration order is the
/// lexicographic name order, which keeps every traversal deterministic.
template <class T>
class ParamSet {
 public:
  Param<T>& add(const std::string& name, Matrix<T> value) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    Param<T> p;
    p.m = Matrix<T>::Zero(value.rows(), value.cols());
    p.v = Matrix<T>::Zero(value.rows(), value.cols());
    p.value = std::move(value);
    return params_.emplace(name, std::move(p)).first->second;
  }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }

  Matrix<T>& operator[](const std::string& name) { return at(name).value; }
  const Matrix<T>& operator[](const std::string& name) const { return at(name).value; }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, p] : params_) {
      auto& q = out.add(name, p.value.template cast<U>());
      q.m = p.m.template cast<U>();
      q.v = p.v.template cast<U>();
      q.step = p.step;
    }
    return out;
  }

  Gradients<T> zeros_like() const {
    Gradients<T> g;
    for (const auto& [name, p] : params_) g[name] = Matrix<T>::Zero(p.value.rows(), p.value.cols());
    return g;
  }

 private:
  std::map<std::string, Param<T>> params_;
};

/// Truncated normal (cut at two standard deviations) scaled by 1/sqrt(fan_in).
template <class T, class Rng>
Matrix<T> fan_in_init(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix<T> w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    double z;
    do {
      z = normal(rng);
    } while (std::abs(z) > 2.0);
    w.data()[i] = static_cast<T>(z * scale / 0.87962566103423978);  // stddev of N(0,1) truncated at 2
  }
  return w;
}

}  // namespace tscdreamer
