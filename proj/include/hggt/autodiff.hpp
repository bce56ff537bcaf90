// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation as a node holding its value and a closure
// that propagates the node's gradient to its inputs. Nodes are stored in
// creation order, so a reverse sweep is a valid topological order.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hggt::ad {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

// A trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  [[nodiscard]] bool valid() const { return tape_ != nullptr; }
  [[nodiscard]] Tape<T>* tape() const { return tape_; }
  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] const Mat<T>& value() const { return tape_->value(id_); }
  [[nodiscard]] const Mat<T>& grad() const { return tape_->grad(id_); }
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
  [[nodiscard]] T item() const { return value()(0, 0); }
  [[nodiscard]] bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  // A tape built with record = false evaluates values only; no closures are
  // stored and backward() is unavailable.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] bool recording() const { return record_; }

  Var<T> constant(Mat<T> value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  // Leaf whose gradient is kept on the tape after backward().
  Var<T> leaf(Mat<T> value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = record_;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  // Leaf bound to a parameter: the value is referenced, gradients accumulate
  // straight into Parameter::grad.
  Var<T> param(Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    if (record_) {
      n.requires_grad = true;
      n.external_grad = &p.grad;
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> push(Mat<T> value, std::initializer_list<Var<T>> inputs, Backward bw) {
    bool rg = false;
    if (record_) {
      for (const auto& v : inputs) rg = rg || requires_grad(v.id());
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    if (rg) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> push(Mat<T> value, std::span<const Var<T>> inputs, Backward bw) {
    bool rg = false;
    if (record_) {
      for (const auto& v : inputs) rg = rg || requires_grad(v.id());
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    if (rg) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  [[nodiscard]] const Mat<T>& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }

  [[nodiscard]] bool requires_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

  // Gradient of a node; an all-zero matrix of the value's shape if nothing
  // reached it.
  [[nodiscard]] const Mat<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.external_grad) return *n.external_grad;
    if (n.grad.size() == 0) {
      const Mat<T>& v = value(id);
      n.grad.setZero(v.rows(), v.cols());
    }
    return n.grad;
  }

  // Mutable gradient buffer, zero-initialized on first touch.
  Mat<T>& grad_ref(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    Mat<T>& g = n.external_grad ? *n.external_grad : n.grad;
    if (g.size() == 0) {
      const Mat<T>& v = value(id);
      g.setZero(v.rows(), v.cols());
    }
    return g;
  }

  [[nodiscard]] bool has_grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external_grad ? true : n.grad.size() != 0;
  }

  void backward(const Var<T>& root) {
    if (!record_) throw std::logic_error("backward() on a non-recording tape");
    if (root.tape() != this) throw std::invalid_argument("root belongs to another tape");
    const Mat<T>& v = value(root.id());
    if (v.rows() != 1 || v.cols() != 1) throw std::invalid_argument("backward() needs a scalar root");
    if (!requires_grad(root.id())) return;
    grad_ref(root.id())(0, 0) += T(1);
    for (int i = root.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    const Mat<T>* external = nullptr;
    Mat<T>* external_grad = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
inline void check_same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands live on different tapes");
}

template <typename T>
inline void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Mat<T> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_ref(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_ref(ib).noalias() += t.value(ia).transpose() * g;
  });
}

// a * b^T
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Mat<T> out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_ref(ia).noalias() += g * t.value(ib);
    if (t.requires_grad(ib)) t.grad_ref(ib).noalias() += g.transpose() * t.value(ia);
  });
}

// x * w + b, with b a 1 x out row broadcast over rows.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::check_same_tape(x, w);
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw std::invalid_argument("linear: shape mismatch");
  }
  Mat<T> out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  const int ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape()->push(std::move(out), {x, w, b}, [ix, iw, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ix)) t.grad_ref(ix).noalias() += g * t.value(iw).transpose();
    if (t.requires_grad(iw)) t.grad_ref(iw).noalias() += t.value(ix).transpose() * g;
    if (t.requires_grad(ib)) t.grad_ref(ib) += g.colwise().sum();
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  Mat<T> out = a.value().transpose();
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    t.grad_ref(ia) += t.grad(self).transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "add");
  Mat<T> out = a.value() + b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_ref(ia) += g;
    if (t.requires_grad(ib)) t.grad_ref(ib) += g;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "sub");
  Mat<T> out = a.value() - b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_ref(ia) += g;
    if (t.requires_grad(ib)) t.grad_ref(ib) -= g;
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "mul");
  Mat<T> out = a.value().cwiseProduct(b.value());
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_ref(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad_ref(ib) += g.cwiseProduct(t.value(ia));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Mat<T> out = a.value() * s;
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, s](Tape<T>& t, int self) {
    t.grad_ref(ia) += t.grad(self) * s;
  });
}

// a + 1 * row, with row of shape 1 x a.cols().
template <typename T>
Var<T> add_rowvec(const Var<T>& a, const Var<T>& row) {
  detail::check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_rowvec: shape mismatch");
  Mat<T> out = a.value();
  out.rowwise() += row.value().row(0);
  const int ia = a.id(), ir = row.id();
  return a.tape()->push(std::move(out), {a, row}, [ia, ir](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_ref(ia) += g;
    if (t.requires_grad(ir)) t.grad_ref(ir) += g.colwise().sum();
  });
}

// Adds `tile` to every consecutive block of tile.rows() rows of `a`.
template <typename T>
Var<T> add_tiled(const Var<T>& a, const Var<T>& tile) {
  detail::check_same_tape(a, tile);
  const Index tr = tile.rows();
  if (tile.cols() != a.cols() || tr == 0 || a.rows() % tr != 0) {
    throw std::invalid_argument("add_tiled: shape mismatch");
  }
  Mat<T> out = a.value();
  for (Index r = 0; r < out.rows(); r += tr) out.middleRows(r, tr) += tile.value();
  const int ia = a.id(), it = tile.id();
  return a.tape()->push(std::move(out), {a, tile}, [ia, it, tr](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_ref(ia) += g;
    if (t.requires_grad(it)) {
      Mat<T>& gt = t.grad_ref(it);
      for (Index r = 0; r < g.rows(); r += tr) gt += g.middleRows(r, tr);
    }
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Mat<T> out = a.value().array().square().matrix();
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    t.grad_ref(ia).array() += T(2) * t.grad(self).array() * t.value(ia).array();
  });
}

// (max(0, -a))^2 elementwise.
template <typename T>
Var<T> neg_part_sq(const Var<T>& a) {
  Mat<T> out = a.value().unaryExpr([](T x) { return x < T(0) ? x * x : T(0); });
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    const Mat<T>& x = t.value(ia);
    t.grad_ref(ia).array() +=
        t.grad(self).array() * x.unaryExpr([](T v) { return v < T(0) ? T(2) * v : T(0); }).array();
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Mat<T> out = a.value().unaryExpr([](T x) { return T(1) / (T(1) + std::exp(-x)); });
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    const Mat<T>& y = t.value(self);
    t.grad_ref(ia).array() += t.grad(self).array() * y.array() * (T(1) - y.array());
  });
}

// Tanh approximation of the Gaussian error linear unit.
template <typename T>
Var<T> gelu(const Var<T>& a) {
  static constexpr T kC = T(0.7978845608028654);  // sqrt(2 / pi)
  static constexpr T kA = T(0.044715);
  const Mat<T>& x = a.value();
  Mat<T> th = ((x.array() + kA * x.array().cube()) * kC).tanh().matrix();
  Mat<T> out = (T(0.5) * x.array() * (T(1) + th.array())).matrix();
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, th = std::move(th)](Tape<T>& t, int self) {
    const auto xa = t.value(ia).array();
    const auto ta = th.array();
    auto d = T(0.5) * (T(1) + ta) + T(0.5) * xa * (T(1) - ta.square()) * kC * (T(1) + T(3) * kA * xa.square());
    t.grad_ref(ia).array() += t.grad(self).array() * d;
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
  Mat<T> out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    t.grad_ref(ia).array() += t.grad(self)(0, 0);
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.value().size());
  if (n == T(0)) throw std::invalid_argument("mean of an empty tensor");
  return scale(sum(a), T(1) / n);
}

// Row sums: N x M -> N x 1.
template <typename T>
Var<T> row_sum(const Var<T>& a) {
  Mat<T> out = a.value().rowwise().sum();
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    Mat<T>& ga = t.grad_ref(ia);
    for (Index c = 0; c < ga.cols(); ++c) ga.col(c) += g.col(0);
  });
}

// Sum of a list of equally shaped tensors.
template <typename T>
Var<T> add_n(std::span<const Var<T>> xs) {
  if (xs.empty()) throw std::invalid_argument("add_n of an empty list");
  Mat<T> out = xs[0].value();
  std::vector<int> ids{xs[0].id()};
  for (std::size_t i = 1; i < xs.size(); ++i) {
    detail::check_same_shape(xs[0], xs[i], "add_n");
    out += xs[i].value();
    ids.push_back(xs[i].id());
  }
  return xs[0].tape()->push(std::move(out), xs, [ids = std::move(ids)](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    for (int id : ids) {
      if (t.requires_grad(id)) t.grad_ref(id) += g;
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var<T> slice(const Var<T>& a, Index r0, Index nr, Index c0, Index nc) {
  if (r0 < 0 || c0 < 0 || nr < 0 || nc < 0 || r0 + nr > a.rows() || c0 + nc > a.cols()) {
    throw std::out_of_range("slice out of range");
  }
  Mat<T> out = a.value().block(r0, c0, nr, nc);
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, r0, nr, c0, nc](Tape<T>& t, int self) {
    t.grad_ref(ia).block(r0, c0, nr, nc) += t.grad(self);
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Index r0, Index nr) {
  return slice(a, r0, nr, Index(0), a.cols());
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Index c0, Index nc) {
  return slice(a, Index(0), a.rows(), c0, nc);
}

template <typename T>
Var<T> reshape(const Var<T>& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape: size mismatch");
  Mat<T> out = Eigen::Map<const Mat<T>>(a.value().data(), rows, cols);
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    Mat<T>& ga = t.grad_ref(ia);
    const Mat<T>& g = t.grad(self);
    Eigen::Map<Mat<T>>(ga.data(), g.rows(), g.cols()) += g;
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows of an empty list");
  const Index cols = xs[0].cols();
  Index rows = 0;
  for (const auto& x : xs) {
    if (x.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += x.rows();
  }
  Mat<T> out(rows, cols);
  std::vector<std::pair<int, Index>> parts;
  Index r = 0;
  for (const auto& x : xs) {
    out.middleRows(r, x.rows()) = x.value();
    parts.emplace_back(x.id(), r);
    r += x.rows();
  }
  return xs[0].tape()->push(std::move(out), xs, [parts = std::move(parts)](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    for (const auto& [id, r0] : parts) {
      if (!t.requires_grad(id)) continue;
      Mat<T>& gi = t.grad_ref(id);
      gi += g.middleRows(r0, gi.rows());
    }
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols of an empty list");
  const Index rows = xs[0].rows();
  Index cols = 0;
  for (const auto& x : xs) {
    if (x.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += x.cols();
  }
  Mat<T> out(rows, cols);
  std::vector<std::pair<int, Index>> parts;
  Index c = 0;
  for (const auto& x : xs) {
    out.middleCols(c, x.cols()) = x.value();
    parts.emplace_back(x.id(), c);
    c += x.cols();
  }
  return xs[0].tape()->push(std::move(out), xs, [parts = std::move(parts)](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    for (const auto& [id, c0] : parts) {
      if (!t.requires_grad(id)) continue;
      Mat<T>& gi = t.grad_ref(id);
      gi += g.middleCols(c0, gi.cols());
    }
  });
}

template <typename T>
Var<T> concat_rows(std::initializer_list<Var<T>> xs) {
  return concat_rows(std::span<const Var<T>>(xs.begin(), xs.size()));
}

template <typename T>
Var<T> concat_cols(std::initializer_list<Var<T>> xs) {
  return concat_cols(std::span<const Var<T>>(xs.begin(), xs.size()));
}

// out.row(r) = a.row(index[r]); gradients scatter-add back.
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::vector<Index> index) {
  Mat<T> out(static_cast<Index>(index.size()), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= a.rows()) throw std::out_of_range("gather_rows index");
    out.row(static_cast<Index>(r)) = a.value().row(index[r]);
  }
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, index = std::move(index)](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    Mat<T>& ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < index.size(); ++r) ga.row(index[r]) += g.row(static_cast<Index>(r));
  });
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const Index n = x.rows(), d = x.cols();
  if (gamma.cols() != d || beta.cols() != d) throw std::invalid_argument("layer_norm: shape mismatch");
  const Mat<T>& xv = x.value();
  Mat<T> xhat(n, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
  for (Index r = 0; r < n; ++r) {
    const T mu = xv.row(r).mean();
    const T var = (xv.row(r).array() - mu).square().mean();
    rstd(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * rstd(r);
  }
  Mat<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->push(std::move(out), {x, gamma, beta},
                        [ix, ig, ib, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, int self) {
                          const Mat<T>& g = t.grad(self);
                          if (t.requires_grad(ig)) t.grad_ref(ig) += g.cwiseProduct(xhat).colwise().sum();
                          if (t.requires_grad(ib)) t.grad_ref(ib) += g.colwise().sum();
                          if (!t.requires_grad(ix)) return;
                          Mat<T> dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
                          Mat<T>& gx = t.grad_ref(ix);
                          for (Index r = 0; r < dxhat.rows(); ++r) {
                            const T m1 = dxhat.row(r).mean();
                            const T m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<T>(dxhat.cols());
                            gx.row(r).array() += rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                          }
                        });
}

// Scales every row to unit Euclidean norm.
template <typename T>
Var<T> normalize_rows(const Var<T>& a, T min_norm = T(1e-12)) {
  const Mat<T>& v = a.value();
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = v.rowwise().norm().cwiseMax(min_norm);
  Mat<T> out = (v.array().colwise() / norms.array()).matrix();
  const int ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, norms = std::move(norms)](Tape<T>& t, int self) {
    const Mat<T>& y = t.value(self);
    const Mat<T>& g = t.grad(self);
    Mat<T>& ga = t.grad_ref(ia);
    for (Index r = 0; r < y.rows(); ++r) {
      const T proj = y.row(r).dot(g.row(r));
      ga.row(r) += (g.row(r) - proj * y.row(r)) / norms(r);
    }
  });
}

// ---------------------------------------------------------------------------
// Attention

struct Segment {
  Index start = 0;
  Index length = 0;
};

// Multi-head scaled dot-product attention. Query rows in q_segments[i] attend
// to key/value rows in k_segments[i]; heads split the columns evenly.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                 std::vector<Segment> q_segments, std::vector<Segment> k_segments) {
  detail::check_same_tape(q, k);
  detail::check_same_tape(q, v);
  const Index d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) throw std::invalid_argument("attention: shape mismatch");
  if (heads <= 0 || d % heads != 0) throw std::invalid_argument("attention: heads must divide width");
  if (q_segments.size() != k_segments.size()) throw std::invalid_argument("attention: segment count mismatch");
  for (std::size_t i = 0; i < q_segments.size(); ++i) {
    const auto& qs = q_segments[i];
    const auto& ks = k_segments[i];
    if (qs.start < 0 || qs.start + qs.length > q.rows() || ks.start < 0 || ks.start + ks.length > k.rows() ||
        ks.length <= 0) {
      throw std::out_of_range("attention: segment out of range");
    }
  }
  const Index dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  const Mat<T>& Q = q.value();
  const Mat<T>& K = k.value();
  const Mat<T>& V = v.value();
  Mat<T> out = Mat<T>::Zero(q.rows(), d);
  auto probs = std::make_shared<std::vector<Mat<T>>>();
  const bool keep = q.tape()->recording();
  if (keep) probs->reserve(q_segments.size() * static_cast<std::size_t>(heads));
  Mat<T> p;
  for (std::size_t i = 0; i < q_segments.size(); ++i) {
    const auto [q0, ql] = q_segments[i];
    const auto [k0, kl] = k_segments[i];
    if (ql == 0) continue;
    for (int h = 0; h < heads; ++h) {
      const Index c0 = h * dh;
      p.resize(ql, kl);
      p.noalias() = Q.block(q0, c0, ql, dh) * K.block(k0, c0, kl, dh).transpose();
      p *= sc;
      for (Index r = 0; r < ql; ++r) {
        const T m = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - m).exp();
        p.row(r) /= p.row(r).sum();
      }
      out.block(q0, c0, ql, dh).noalias() = p * V.block(k0, c0, kl, dh);
      if (keep) probs->push_back(p);
    }
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->push(
      std::move(out), {q, k, v},
      [iq, ik, iv, heads, dh, sc, probs, qsegs = std::move(q_segments), ksegs = std::move(k_segments)](Tape<T>& t,
                                                                                                       int self) {
        const Mat<T>& G = t.grad(self);
        const Mat<T>& Qv = t.value(iq);
        const Mat<T>& Kv = t.value(ik);
        const Mat<T>& Vv = t.value(iv);
        const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik), gv = t.requires_grad(iv);
        Mat<T>* dQ = gq ? &t.grad_ref(iq) : nullptr;
        Mat<T>* dK = gk ? &t.grad_ref(ik) : nullptr;
        Mat<T>* dV = gv ? &t.grad_ref(iv) : nullptr;
        Mat<T> dp;
        std::size_t pi = 0;
        for (std::size_t i = 0; i < qsegs.size(); ++i) {
          const auto [q0, ql] = qsegs[i];
          const auto [k0, kl] = ksegs[i];
          if (ql == 0) continue;
          for (int h = 0; h < heads; ++h, ++pi) {
            const Index c0 = h * dh;
            const Mat<T>& P = (*probs)[pi];
            const auto dO = G.block(q0, c0, ql, dh);
            if (dV) dV->block(k0, c0, kl, dh).noalias() += P.transpose() * dO;
            if (!dQ && !dK) continue;
            dp.resize(ql, kl);
            dp.noalias() = dO * Vv.block(k0, c0, kl, dh).transpose();
            for (Index r = 0; r < ql; ++r) {
              const T s = dp.row(r).dot(P.row(r));
              dp.row(r) = (P.row(r).array() * (dp.row(r).array() - s)) * sc;
            }
            if (dQ) dQ->block(q0, c0, ql, dh).noalias() += dp * Kv.block(k0, c0, kl, dh);
            if (dK) dK->block(k0, c0, kl, dh).noalias() += dp.transpose() * Qv.block(q0, c0, ql, dh);
          }
        }
      });
}

}  // namespace hggt::ad
