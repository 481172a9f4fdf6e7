#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tscdreamer {

// Row-major dense matrix; rows are batch entries, columns are features.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
bool all_finite(const Matrix<T>& m) {
  return m.array().isFinite().all();
}

template <class T>
void require_finite(const Matrix<T>& m, const std::string& what) {
  if (!all_finite(m)) throw std::domain_error("non-finite values in " + what);
}

/// Shape-tagged flat buffer. Used where the layout must survive outside the
/// process (checkpoints, replay dumps); compute happens on Matrix.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (element_count(shape_) != values_.size())
      throw std::invalid_argument("tensor shape does not match value count");
  }

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), values_(element_count(shape_), T(0)) {}

  template <class U>
  static Tensor from_matrix(const Matrix<U>& m) {
    std::vector<T> v(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<T>(m.data()[i]);
    return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
  }

  // Leading dimensions are folded into rows.
  template <class U>
  Matrix<U> to_matrix() const {
    std::size_t cols = shape_.empty() ? 1 : shape_.back();
    std::size_t rows = cols == 0 ? 0 : values_.size() / cols;
    Matrix<U> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < values_.size(); ++i) m.data()[i] = static_cast<U>(values_[i]);
    return m;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  const std::vector<T>& values() const { return values_; }
  std::vector<T>& values() { return values_; }
  std::size_t size() const { return values_.size(); }

  bool finite() const {
    for (T v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> values_;
};

}  // namespace tscdreamer
