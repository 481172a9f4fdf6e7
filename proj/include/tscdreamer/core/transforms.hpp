#pragma once

// Symmetric log squashing and two-hot discrete regression targets.

#include "tscdreamer/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace tscdreamer {

template <class T>
T symlog(T x) {
  return std::copysign(std::log1p(std::abs(x)), x);
}

template <class T>
T symexp(T y) {
  return std::copysign(std::expm1(std::abs(y)), y);
}

/// Ordered bin centers for two-hot regression.
class BinGrid {
 public:
  explicit BinGrid(std::vector<double> centers) : centers_(std::move(centers)) {
    if (centers_.size() < 2) throw std::invalid_argument("BinGrid needs at least two bins");
    for (std::size_t i = 1; i < centers_.size(); ++i)
      if (!(centers_[i] > centers_[i - 1])) throw std::invalid_argument("BinGrid centers must be strictly increasing");
  }

  /// symexp of `count` evenly spaced points on [-limit, limit].
  static BinGrid symexp_spaced(std::size_t count = 255, double limit = 20.0) {
    std::vector<double> c(count);
    for (std::size_t i = 0; i < count; ++i) {
      double u = -limit + 2.0 * limit * static_cast<double>(i) / static_cast<double>(count - 1);
      c[i] = symexp(u);
    }
    // Force exact antisymmetry so that uniform weights decode to exactly 0.
    for (std::size_t i = 0; i < count / 2; ++i) c[count - 1 - i] = -c[i];
    if (count % 2 == 1) c[count / 2] = 0.0;
    return BinGrid(std::move(c));
  }

  std::size_t count() const { return centers_.size(); }
  const std::vector<double>& centers() const { return centers_; }
  double front() const { return centers_.front(); }
  double back() const { return centers_.back(); }

 private:
  std::vector<double> centers_;
};

/// Two adjacent nonzero weights, linear interpolation, summing to one.
/// Values outside the grid are clamped to the end bins.
inline std::vector<double> twohot_encode(double value, const BinGrid& bins) {
  const auto& c = bins.centers();
  std::vector<double> w(c.size(), 0.0);
  if (!std::isfinite(value)) throw std::domain_error("twohot_encode: non-finite value");
  if (value <= c.front()) {
    w.front() = 1.0;
    return w;
  }
  if (value >= c.back()) {
    w.back() = 1.0;
    return w;
  }
  std::size_t hi = static_cast<std::size_t>(std::upper_bound(c.begin(), c.end(), value) - c.begin());
  std::size_t lo = hi - 1;
  double span = c[hi] - c[lo];
  double t = (value - c[lo]) / span;
  w[lo] = 1.0 - t;
  w[hi] = t;
  return w;
}

template <class T>
double twohot_decode(std::span<const T> weights, const BinGrid& bins) {
  if (weights.size() != bins.count()) throw std::invalid_argument("twohot_decode: weight count mismatch");
  const auto& c = bins.centers();
  // Pair mirrored bins (c[j] == -c[i]) so mass in the huge outer bins cancels
  // exactly instead of accumulating rounding error.
  const std::size_t n = c.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n / 2; ++i) {
    std::size_t j = n - 1 - i;
    if (c[j] == -c[i])
      total += (static_cast<double>(weights[i]) - static_cast<double>(weights[j])) * c[i];
    else
      total += static_cast<double>(weights[i]) * c[i] + static_cast<double>(weights[j]) * c[j];
  }
  if (n % 2 == 1) total += static_cast<double>(weights[n / 2]) * c[n / 2];
  return total;
}

/// Encodes a column of values into a [rows × bins] target matrix.
template <class T>
Matrix<T> twohot_matrix(const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, 1>>& values, const BinGrid& bins) {
  Matrix<T> out = Matrix<T>::Zero(values.size(), static_cast<Eigen::Index>(bins.count()));
  for (Eigen::Index r = 0; r < values.size(); ++r) {
    auto w = twohot_encode(values(r), bins);
    for (std::size_t i = 0; i < w.size(); ++i)
      if (w[i] != 0.0) out(r, static_cast<Eigen::Index>(i)) = static_cast<T>(w[i]);
  }
  return out;
}

/// Decodes each row of a probability matrix.
template <class T>
Eigen::Matrix<double, Eigen::Dynamic, 1> twohot_decode_rows(const Matrix<T>& probs, const BinGrid& bins) {
  Eigen::Matrix<double, Eigen::Dynamic, 1> out(probs.rows());
  for (Eigen::Index r = 0; r < probs.rows(); ++r)
    out(r) = twohot_decode(std::span<const T>(probs.row(r).data(), static_cast<std::size_t>(probs.cols())), bins);
  return out;
}

}  // namespace tscdreamer
