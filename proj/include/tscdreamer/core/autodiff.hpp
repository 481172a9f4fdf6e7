#pragma once

// Reverse-mode automatic differentiation over a dynamically recorded tape of
// 2-D row-major matrices.

#include "tscdreamer/core/params.hpp"
#include "tscdreamer/core/tensor.hpp"

#include <cassert>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace tscdreamer {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Matrix<T>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool needs_grad() const { return tape->needs_grad(id); }
  T scalar() const { return value()(0, 0); }
};

template <class T>
class Tape {
 public:
  using Mat = Matrix<T>;
  using Backward = std::function<void(Tape&, int)>;

  /// With grad disabled, parameters enter as constants and nothing records a
  /// backward closure (inference and imagination rollouts).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Mat value) { return push(std::move(value), false, nullptr); }

  /// Leaf bound to a named parameter. Repeated requests return the same node,
  /// so a weight shared across timesteps accumulates one gradient.
  Var<T> param(ParamSet<T>& set, const std::string& name) {
    Param<T>* p = &set.at(name);
    auto it = param_nodes_.find(p);
    if (it != param_nodes_.end()) return Var<T>{this, it->second};
    Var<T> v = push(p->value, grad_enabled_, nullptr);
    param_nodes_.emplace(p, v.id);
    return v;
  }

  Var<T> push(Mat value, bool needs_grad, Backward backward) {
    if (!needs_grad) backward = nullptr;
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Gradient buffer of a node, zero-initialized on first touch.
  Mat& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool grad_enabled() const { return grad_enabled_; }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() != 0; }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw std::invalid_argument("loss belongs to another tape");
    if (loss.value().size() != 1) throw std::invalid_argument("backward requires a scalar loss");
    grad(loss.id).setOnes();
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
  }

  /// d(loss)/d(param) for every parameter in `set`; zeros for parameters not
  /// reachable from the loss. Call after backward().
  Gradients<T> gradients(const ParamSet<T>& set) const {
    Gradients<T> out;
    for (const auto& [name, p] : set) {
      auto it = param_nodes_.find(const_cast<Param<T>*>(&p));
      if (it != param_nodes_.end() && has_grad(it->second)) {
        const Mat& g = nodes_[static_cast<std::size_t>(it->second)].grad;
        if (!all_finite(g)) throw std::domain_error("NaN or Inf in gradient of " + name);
        out[name] = g;
      } else {
        out[name] = Mat::Zero(p.value.rows(), p.value.cols());
      }
    }
    return out;
  }

  // Stop-gradient values can be recorded on one tape and replayed on another.
  // Finite-difference checks replay them so that the perturbed forward passes
  // evaluate the same surrogate objective whose gradient backward() computes.
  const std::vector<Mat>& stop_gradient_record() const { return sg_record_; }
  void replay_stop_gradients(const std::vector<Mat>* values) { sg_replay_ = values; }

  Mat next_stop_gradient(const Mat& live) {
    if (sg_replay_) {
      if (sg_cursor_ >= sg_replay_->size()) throw std::logic_error("stop-gradient replay exhausted");
      return (*sg_replay_)[sg_cursor_++];
    }
    sg_record_.push_back(live);
    return live;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward backward;
  };

  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
  std::unordered_map<Param<T>*, int> param_nodes_;
  std::vector<Mat> sg_record_;
  const std::vector<Mat>* sg_replay_ = nullptr;
  std::size_t sg_cursor_ = 0;
};

/// Runs backward from a scalar loss and returns the gradients for `params`.
template <class T>
Gradients<T> grad(Var<T> loss, const ParamSet<T>& params) {
  loss.tape->backward(loss);
  return loss.tape->gradients(params);
}

namespace ad {

namespace detail {
template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace detail

template <class T>
Var<T> stop_gradient(Var<T> a) {
  return a.tape->constant(a.tape->next_stop_gradient(a.value()));
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value() * b.value();
  bool ng = a.needs_grad() || b.needs_grad();
  return t.push(std::move(out), ng, [a, b](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (a.needs_grad()) t.grad(a.id).noalias() += g * t.value(b.id).transpose();
    if (b.needs_grad()) t.grad(b.id).noalias() += t.value(a.id).transpose() * g;
  });
}

/// x·W + b with b broadcast over rows.
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  if (x.cols() != w.rows()) throw std::invalid_argument("linear: input width mismatch");
  if (b.rows() != 1 || b.cols() != w.cols()) throw std::invalid_argument("linear: bias shape mismatch");
  Tape<T>& t = *x.tape;
  Matrix<T> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  bool ng = x.needs_grad() || w.needs_grad() || b.needs_grad();
  return t.push(std::move(out), ng, [x, w, b](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (x.needs_grad()) t.grad(x.id).noalias() += g * t.value(w.id).transpose();
    if (w.needs_grad()) t.grad(w.id).noalias() += t.value(x.id).transpose() * g;
    if (b.needs_grad()) t.grad(b.id) += g.colwise().sum();
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  Tape<T>& t = *a.tape;
  return t.push(a.value() + b.value(), a.needs_grad() || b.needs_grad(), [a, b](Tape<T>& t, int self) {
    if (a.needs_grad()) t.grad(a.id) += t.grad(self);
    if (b.needs_grad()) t.grad(b.id) += t.grad(self);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "sub");
  Tape<T>& t = *a.tape;
  return t.push(a.value() - b.value(), a.needs_grad() || b.needs_grad(), [a, b](Tape<T>& t, int self) {
    if (a.needs_grad()) t.grad(a.id) += t.grad(self);
    if (b.needs_grad()) t.grad(b.id) -= t.grad(self);
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mul");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), a.needs_grad() || b.needs_grad(), [a, b](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (a.needs_grad()) t.grad(a.id) += g.cwiseProduct(t.value(b.id));
    if (b.needs_grad()) t.grad(b.id) += g.cwiseProduct(t.value(a.id));
  });
}

/// a + row, row is 1×cols broadcast over the rows of a.
template <class T>
Var<T> add_row(Var<T> a, Var<T> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value();
  out.rowwise() += row.value().row(0);
  return t.push(std::move(out), a.needs_grad() || row.needs_grad(), [a, row](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (a.needs_grad()) t.grad(a.id) += g;
    if (row.needs_grad()) t.grad(row.id) += g.colwise().sum();
  });
}

/// a ⊙ row, row is 1×cols broadcast over the rows of a.
template <class T>
Var<T> mul_row(Var<T> a, Var<T> row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("mul_row: shape mismatch");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().array().rowwise() * row.value().array().row(0);
  return t.push(std::move(out), a.needs_grad() || row.needs_grad(), [a, row](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (a.needs_grad()) t.grad(a.id).array() += g.array().rowwise() * t.value(row.id).array().row(0);
    if (row.needs_grad()) t.grad(row.id) += g.cwiseProduct(t.value(a.id)).colwise().sum();
  });
}

/// a ⊙ col, col is rows×1 broadcast over the columns of a.
template <class T>
Var<T> mul_col(Var<T> a, Var<T> col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("mul_col: shape mismatch");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().array().colwise() * col.value().array().col(0);
  return t.push(std::move(out), a.needs_grad() || col.needs_grad(), [a, col](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    if (a.needs_grad()) t.grad(a.id).array() += g.array().colwise() * t.value(col.id).array().col(0);
    if (col.needs_grad()) t.grad(col.id) += g.cwiseProduct(t.value(a.id)).rowwise().sum();
  });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  Tape<T>& t = *a.tape;
  return t.push(a.value() * c, a.needs_grad(), [a, c](Tape<T>& t, int self) { t.grad(a.id) += t.grad(self) * c; });
}

template <class T>
Var<T> add_scalar(Var<T> a, T c) {
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().array() + c;
  return t.push(std::move(out), a.needs_grad(), [a](Tape<T>& t, int self) { t.grad(a.id) += t.grad(self); });
}

template <class T>
Var<T> concat_cols(std::initializer_list<Var<T>> parts_list) {
  std::vector<Var<T>> parts(parts_list);
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape<T>& t = *parts[0].tape;
  Eigen::Index rows = parts[0].rows(), cols = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
    ng = ng || p.needs_grad();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.push(std::move(out), ng, [parts](Tape<T>& t, int self) {
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      if (p.needs_grad()) t.grad(p.id) += t.grad(self).middleCols(c, p.cols());
      c += p.cols();
    }
  });
}

template <class T>
Var<T> slice_cols(Var<T> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols: range");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().middleCols(start, count);
  return t.push(std::move(out), a.needs_grad(), [a, start, count](Tape<T>& t, int self) {
    t.grad(a.id).middleCols(start, count) += t.grad(self);
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape<T>& t = *parts[0].tape;
  Eigen::Index cols = parts[0].cols(), rows = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
    ng = ng || p.needs_grad();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.push(std::move(out), ng, [parts](Tape<T>& t, int self) {
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      if (p.needs_grad()) t.grad(p.id) += t.grad(self).middleRows(r, p.rows());
      r += p.rows();
    }
  });
}

template <class T>
Var<T> slice_rows(Var<T> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows: range");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().middleRows(start, count);
  return t.push(std::move(out), a.needs_grad(), [a, start, count](Tape<T>& t, int self) {
    t.grad(a.id).middleRows(start, count) += t.grad(self);
  });
}

// Elementwise unary ops. `deriv` receives (input, output) arrays.
template <class T, class F, class D>
Var<T> unary(Var<T> a, F forward, D deriv) {
  Tape<T>& t = *a.tape;
  Matrix<T> out = forward(a.value().array()).matrix();
  return t.push(std::move(out), a.needs_grad(), [a, deriv](Tape<T>& t, int self) {
    t.grad(a.id).array() += t.grad(self).array() * deriv(t.value(a.id).array(), t.value(self).array());
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return unary(
      a, [](const auto& x) { return (T(1) + (-x).exp()).inverse(); },
      [](const auto&, const auto& y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh(Var<T> a) {
  return unary(
      a, [](const auto& x) { return x.tanh(); }, [](const auto&, const auto& y) { return T(1) - y.square(); });
}

/// x·sigmoid(x)
template <class T>
Var<T> silu(Var<T> a) {
  return unary(
      a, [](const auto& x) { return x * (T(1) + (-x).exp()).inverse(); },
      [](const auto& x, const auto&) {
        auto s = (T(1) + (-x).exp()).inverse();
        return s * (T(1) + x * (T(1) - s));
      });
}

template <class T>
Var<T> exp(Var<T> a) {
  return unary(
      a, [](const auto& x) { return x.exp(); }, [](const auto&, const auto& y) { return y; });
}

template <class T>
Var<T> log(Var<T> a) {
  return unary(
      a, [](const auto& x) { return x.log(); }, [](const auto& x, const auto&) { return x.inverse(); });
}

template <class T>
Var<T> square(Var<T> a) {
  return unary(
      a, [](const auto& x) { return x.square(); }, [](const auto& x, const auto&) { return T(2) * x; });
}

/// ln(1 + e^x), computed stably.
template <class T>
Var<T> softplus(Var<T> a) {
  return unary(
      a, [](const auto& x) { return x.max(T(0)) + (-(x.abs())).exp().log1p(); },
      [](const auto& x, const auto&) { return (T(1) + (-x).exp()).inverse(); });
}

/// max(a, c); gradient is zero where the floor is active.
template <class T>
Var<T> clamp_min(Var<T> a, T c) {
  return unary(
      a, [c](const auto& x) { return x.max(c); },
      [c](const auto& x, const auto&) { return (x > c).template cast<T>(); });
}

/// Per-row normalization to zero mean and unit variance (no affine part).
template <class T>
Var<T> layer_norm(Var<T> a, T eps = T(1e-3)) {
  Tape<T>& t = *a.tape;
  const Matrix<T>& x = a.value();
  const Eigen::Index n = x.cols();
  Matrix<T> out(x.rows(), n);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T mean = x.row(r).mean();
    auto centered = x.row(r).array() - mean;
    T var = centered.square().sum() / T(n);
    inv_std(r) = T(1) / std::sqrt(var + eps);
    out.row(r) = (centered * inv_std(r)).matrix();
  }
  return t.push(std::move(out), a.needs_grad(), [a, inv_std](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    const Matrix<T>& y = t.value(self);
    Matrix<T>& ga = t.grad(a.id);
    const T n = T(g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      T gm = g.row(r).sum() / n;
      T gy = g.row(r).dot(y.row(r)) / n;
      ga.row(r).array() += inv_std(r) * (g.row(r).array() - gm - y.row(r).array() * gy);
    }
  });
}

/// Softmax within consecutive column groups of width k.
template <class T>
Var<T> group_softmax(Var<T> a, Eigen::Index k) {
  if (k <= 0 || a.cols() % k != 0) throw std::invalid_argument("group_softmax: width not divisible");
  Tape<T>& t = *a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index g = 0; g < x.cols(); g += k) {
      auto seg = x.row(r).segment(g, k).array();
      auto e = (seg - seg.maxCoeff()).exp();
      out.row(r).segment(g, k) = (e / e.sum()).matrix();
    }
  return t.push(std::move(out), a.needs_grad(), [a, k](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    const Matrix<T>& y = t.value(self);
    Matrix<T>& ga = t.grad(a.id);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); c += k) {
        T dot = g.row(r).segment(c, k).dot(y.row(r).segment(c, k));
        ga.row(r).segment(c, k).array() += y.row(r).segment(c, k).array() * (g.row(r).segment(c, k).array() - dot);
      }
  });
}

template <class T>
Var<T> group_log_softmax(Var<T> a, Eigen::Index k) {
  if (k <= 0 || a.cols() % k != 0) throw std::invalid_argument("group_log_softmax: width not divisible");
  Tape<T>& t = *a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index g = 0; g < x.cols(); g += k) {
      auto seg = x.row(r).segment(g, k).array();
      T m = seg.maxCoeff();
      T lse = m + std::log((seg - m).exp().sum());
      out.row(r).segment(g, k) = (seg - lse).matrix();
    }
  return t.push(std::move(out), a.needs_grad(), [a, k](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    const Matrix<T>& y = t.value(self);
    Matrix<T>& ga = t.grad(a.id);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); c += k) {
        T gs = g.row(r).segment(c, k).sum();
        ga.row(r).segment(c, k).array() += g.row(r).segment(c, k).array() - y.row(r).segment(c, k).array().exp() * gs;
      }
  });
}

/// Sums consecutive column groups of width k: [B × G·k] → [B × G].
template <class T>
Var<T> group_sum(Var<T> a, Eigen::Index k) {
  if (k <= 0 || a.cols() % k != 0) throw std::invalid_argument("group_sum: width not divisible");
  Tape<T>& t = *a.tape;
  const Matrix<T>& x = a.value();
  const Eigen::Index groups = x.cols() / k;
  Matrix<T> out(x.rows(), groups);
  for (Eigen::Index gi = 0; gi < groups; ++gi) out.col(gi) = x.middleCols(gi * k, k).rowwise().sum();
  return t.push(std::move(out), a.needs_grad(), [a, k, groups](Tape<T>& t, int self) {
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ga = t.grad(a.id);
    for (Eigen::Index gi = 0; gi < groups; ++gi) ga.middleCols(gi * k, k).colwise() += g.col(gi);
  });
}

/// Row sums: [B × n] → [B × 1].
template <class T>
Var<T> sum_cols(Var<T> a) {
  return group_sum(a, a.cols());
}

template <class T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& t = *a.tape;
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), a.needs_grad(), [a](Tape<T>& t, int self) {
    t.grad(a.id).array() += t.grad(self)(0, 0);
  });
}

template <class T>
Var<T> mean_all(Var<T> a) {
  return scale(sum_all(a), T(1) / T(a.value().size()));
}

/// Forward value is the one-hot drawn by `make_sample(probs)`; backward routes
/// the incoming gradient to `probs` unchanged. Under stop-gradient replay the
/// sample is drawn from the frozen probabilities and the value becomes
/// sample + probs − frozen(probs), the surrogate whose exact derivative this is.
template <class T, class F>
Var<T> straight_through_with(Var<T> probs, F&& make_sample) {
  Tape<T>& t = *probs.tape;
  Matrix<T> frozen = t.next_stop_gradient(probs.value());
  Matrix<T> out = make_sample(static_cast<const Matrix<T>&>(frozen));
  if (probs.rows() != out.rows() || probs.cols() != out.cols())
    throw std::invalid_argument("straight_through: shape mismatch");
  if (frozen != probs.value()) out += probs.value() - frozen;
  return t.push(std::move(out), probs.needs_grad(), [probs](Tape<T>& t, int self) {
    t.grad(probs.id) += t.grad(self);
  });
}

template <class T>
Var<T> straight_through(Var<T> probs, const Matrix<T>& sample) {
  return straight_through_with(probs, [&](const Matrix<T>&) { return sample; });
}

}  // namespace ad
}  // namespace tscdreamer
