// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with reverse-mode autodiff on an explicit tape.
// Precision is a tape-level setting via the Real template parameter:
// instantiate with double for finite-difference verification, float for
// training. Tensors are immutable values; a tape is single-writer.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "pcfuse/common.hpp"

namespace pcfuse {

template <typename Real>
class Tape;

template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<Real>>(std::move(data))) {
    require_shape(numel(shape_) == data_->size(),
                  "tensor data length " + std::to_string(data_->size()) +
                      " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) {
    std::vector<Real> d(numel(shape), Real(0));
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor full(Shape shape, Real v) {
    std::vector<Real> d(numel(shape), v);
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor scalar_value(Real v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_ ? data_->size() : 0; }

  const std::vector<Real>& data() const { return *data_; }
  std::shared_ptr<const std::vector<Real>> storage() const { return data_; }

  Real scalar() const {
    if (size() != 1) throw ContractError("scalar() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool tracked() const { return node_ >= 0; }
  bool requires_grad() const { return tracked(); }
  int node() const { return node_; }
  Tape<Real>* tape() const { return tape_; }

 private:
  friend class Tape<Real>;

  Tensor(Shape shape, std::shared_ptr<std::vector<Real>> data, Tape<Real>* tape, int node)
      : shape_(std::move(shape)), data_(std::move(data)), tape_(tape), node_(node) {}

  Shape shape_;
  std::shared_ptr<std::vector<Real>> data_;
  Tape<Real>* tape_ = nullptr;
  int node_ = -1;
};

// Append-only differentiation tape. Parent ids precede child ids by
// construction, so reverse iteration is a valid reverse-topological order.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<Real>& grad_out, Tape<Real>& tape)>;

  Tensor<Real> leaf(Shape shape, std::vector<Real> data, bool requires_grad = true) {
    if (!requires_grad) return Tensor<Real>(std::move(shape), std::move(data));
    auto storage = std::make_shared<std::vector<Real>>(std::move(data));
    require_shape(numel(shape) == storage->size(),
                  "leaf data length does not match shape " + shape_str(shape));
    return append("leaf", std::move(shape), std::move(storage), {}, nullptr, 0);
  }

  Tensor<Real> record(const char* op, Shape shape, std::shared_ptr<std::vector<Real>> data,
                      std::vector<int> parents, BackwardFn backward, std::uint64_t flop_count) {
#ifndef NDEBUG
    for (Real v : *data) {
      if (!std::isfinite(static_cast<double>(v)))
        throw ContractError(std::string("non-finite value in output of op '") + op + "'");
    }
#endif
    return append(op, std::move(shape), std::move(data), std::move(parents),
                  std::move(backward), flop_count);
  }

  void backward(const Tensor<Real>& loss) {
    if (!loss.tracked() || loss.tape() != this)
      throw ContractError("backward: loss is not recorded on this tape");
    if (loss.size() != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    grads_.assign(nodes_.size(), {});
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      grads_[i].assign(numel(nodes_[i].shape), Real(0));
    grads_[static_cast<std::size_t>(loss.node())][0] = Real(1);
    for (int i = loss.node(); i >= 0; --i) {
      const auto& node = nodes_[static_cast<std::size_t>(i)];
      if (node.backward) node.backward(grads_[static_cast<std::size_t>(i)], *this);
    }
    backward_done_ = true;
  }

  const std::vector<Real>& grad(int node) const {
    if (!backward_done_) throw ContractError("grad() before backward()");
    return grads_.at(static_cast<std::size_t>(node));
  }

  std::vector<Real>& grad_slot(int node) { return grads_.at(static_cast<std::size_t>(node)); }

  std::size_t node_count() const { return nodes_.size(); }
  std::uint64_t flops() const { return flops_; }

 private:
  struct Node {
    const char* op;
    Shape shape;
    std::vector<int> parents;
    BackwardFn backward;
  };

  Tensor<Real> append(const char* op, Shape shape, std::shared_ptr<std::vector<Real>> data,
                      std::vector<int> parents, BackwardFn backward, std::uint64_t flop_count) {
    const int id = static_cast<int>(nodes_.size());
    for (int p : parents) {
      if (p < 0 || p >= id) throw ContractError("tape parent id out of order");
    }
    nodes_.push_back(Node{op, shape, std::move(parents), std::move(backward)});
    flops_ += flop_count;
    return Tensor<Real>(std::move(shape), std::move(data), this, id);
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<Real>> grads_;
  std::uint64_t flops_ = 0;
  bool backward_done_ = false;
};

namespace detail {

template <typename Real>
Tape<Real>* common_tape(std::initializer_list<const Tensor<Real>*> ts) {
  Tape<Real>* tape = nullptr;
  for (const Tensor<Real>* t : ts) {
    if (!t->tracked()) continue;
    if (!tape)
      tape = t->tape();
    else if (tape != t->tape())
      throw ContractError("operands belong to different tapes");
  }
  return tape;
}

template <typename Real>
std::shared_ptr<std::vector<Real>> make_data(std::size_t n) {
  return std::make_shared<std::vector<Real>>(n, Real(0));
}

// Emits either a recorded node or a constant, depending on whether any
// input was tracked.
template <typename Real>
Tensor<Real> emit(Tape<Real>* tape, const char* op, Shape shape,
                  std::shared_ptr<std::vector<Real>> data, std::vector<int> parents,
                  typename Tape<Real>::BackwardFn backward, std::uint64_t flop_count) {
  if (!tape) return Tensor<Real>(std::move(shape), std::move(*data));
  return tape->record(op, std::move(shape), std::move(data), std::move(parents),
                      std::move(backward), flop_count);
}

inline void transpose2d(const auto* src, auto* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C(m x n) += A(m x k) * B(k x n). i-k-j order: the j loop vectorizes and
// each C element is accumulated in a fixed k order, so results are bitwise
// reproducible for any thread count.
template <typename Real>
void mm_acc(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t row_flops = 2 * k * n;
  const std::size_t grain = std::max<std::size_t>(1, 2'000'000 / std::max<std::size_t>(1, row_flops));
  parallel_for(0, m, grain, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Real* crow = c + i * n;
      const Real* arow = a + i * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const Real av = arow[kk];
        const Real* brow = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// C(k x n) += A^T(k x m) * G(m x n) with A stored (m x k). Outer-product
// form: the i loop stays outermost so the C block assigned to a thread
// remains cache-resident, and each C element still accumulates in
// ascending i order.
template <typename Real>
void mm_acc_tn(const Real* a, const Real* g, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t row_flops = 2 * m * n;
  const std::size_t grain = std::max<std::size_t>(1, 2'000'000 / std::max<std::size_t>(1, row_flops));
  parallel_for(0, k, grain, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = 0; i < m; ++i) {
      const Real* arow = a + i * k;
      const Real* grow = g + i * n;
      for (std::size_t p = lo; p < hi; ++p) {
        const Real av = arow[p];
        Real* crow = c + p * n;
        for (std::size_t q = 0; q < n; ++q) crow[q] += av * grow[q];
      }
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise ops
// ---------------------------------------------------------------------------

// add(a, b): same shape, or b's shape is a trailing suffix of a's shape
// (leading-batch broadcast; used for bias terms).
template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  const bool same = a.shape() == b.shape();
  bool suffix = false;
  if (!same && b.ndim() <= a.ndim()) {
    suffix = std::equal(b.shape().begin(), b.shape().end(),
                        a.shape().end() - static_cast<std::ptrdiff_t>(b.ndim()));
  }
  require_shape(same || suffix, "add: shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " are not compatible");
  const std::size_t n = a.size();
  const std::size_t nb = b.size();
  auto out = detail::make_data<Real>(n);
  const auto& av = a.data();
  const auto& bv = b.data();
  if (nb == n) {
    for (std::size_t i = 0; i < n; ++i) (*out)[i] = av[i] + bv[i];
  } else {
    for (std::size_t o = 0; o < n; o += nb)
      for (std::size_t i = 0; i < nb; ++i) (*out)[o + i] = av[o + i] + bv[i];
  }

  Tape<Real>* tape = detail::common_tape<Real>({&a, &b});
  const int an = a.node(), bn = b.node();
  std::vector<int> parents;
  if (an >= 0) parents.push_back(an);
  if (bn >= 0) parents.push_back(bn);
  return detail::emit<Real>(
      tape, "add", a.shape(), std::move(out), std::move(parents),
      [an, bn, n, nb](const std::vector<Real>& g, Tape<Real>& t) {
        if (an >= 0) {
          auto& ga = t.grad_slot(an);
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (bn >= 0) {
          auto& gb = t.grad_slot(bn);
          if (nb == n) {
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
          } else {
            for (std::size_t o = 0; o < n; o += nb)
              for (std::size_t i = 0; i < nb; ++i) gb[i] += g[o + i];
          }
        }
      },
      n);
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_shape(a.shape() == b.shape(), "sub: shapes " + shape_str(a.shape()) + " and " +
                                            shape_str(b.shape()) + " differ");
  const std::size_t n = a.size();
  auto out = detail::make_data<Real>(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = a.data()[i] - b.data()[i];

  Tape<Real>* tape = detail::common_tape<Real>({&a, &b});
  const int an = a.node(), bn = b.node();
  std::vector<int> parents;
  if (an >= 0) parents.push_back(an);
  if (bn >= 0) parents.push_back(bn);
  return detail::emit<Real>(
      tape, "sub", a.shape(), std::move(out), std::move(parents),
      [an, bn, n](const std::vector<Real>& g, Tape<Real>& t) {
        if (an >= 0) {
          auto& ga = t.grad_slot(an);
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (bn >= 0) {
          auto& gb = t.grad_slot(bn);
          for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
        }
      },
      n);
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_shape(a.shape() == b.shape(), "mul: shapes " + shape_str(a.shape()) + " and " +
                                            shape_str(b.shape()) + " differ");
  const std::size_t n = a.size();
  auto out = detail::make_data<Real>(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = a.data()[i] * b.data()[i];

  Tape<Real>* tape = detail::common_tape<Real>({&a, &b});
  const int an = a.node(), bn = b.node();
  std::vector<int> parents;
  if (an >= 0) parents.push_back(an);
  if (bn >= 0) parents.push_back(bn);
  return detail::emit<Real>(
      tape, "mul", a.shape(), std::move(out), std::move(parents),
      [an, bn, n, sa = a.storage(), sb = b.storage()](const std::vector<Real>& g, Tape<Real>& t) {
        if (an >= 0) {
          auto& ga = t.grad_slot(an);
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (*sb)[i];
        }
        if (bn >= 0) {
          auto& gb = t.grad_slot(bn);
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * (*sa)[i];
        }
      },
      n);
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  const std::size_t n = a.size();
  auto out = detail::make_data<Real>(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = a.data()[i] * s;
  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "scale", a.shape(), std::move(out), an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, n, s](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * s;
      },
      n);
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& a) {
  return scale(a, Real(-1));
}

// relu'(0) = 0.
template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  const std::size_t n = a.size();
  auto out = detail::make_data<Real>(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = a.data()[i] > Real(0) ? a.data()[i] : Real(0);
  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "relu", a.shape(), std::move(out), an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, n, sa = a.storage()](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t i = 0; i < n; ++i)
          if ((*sa)[i] > Real(0)) ga[i] += g[i];
      },
      n);
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  require_shape(numel(shape) == a.size(), "reshape: " + shape_str(a.shape()) + " to " +
                                              shape_str(shape) + " changes element count");
  auto data = std::make_shared<std::vector<Real>>(a.data());
  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "reshape", std::move(shape), std::move(data),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      },
      0);
}

template <typename Real>
Tensor<Real> transpose_last2(const Tensor<Real>& a) {
  require_shape(a.ndim() >= 2, "transpose_last2: need >= 2 dims, got " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  const std::size_t r = out_shape[out_shape.size() - 2];
  const std::size_t c = out_shape[out_shape.size() - 1];
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  const std::size_t batch = a.size() / (r * c);
  auto out = detail::make_data<Real>(a.size());
  for (std::size_t bi = 0; bi < batch; ++bi)
    detail::transpose2d(a.data().data() + bi * r * c, out->data() + bi * r * c, r, c);

  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "transpose", std::move(out_shape), std::move(out),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, batch, r, c](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const Real* gb = g.data() + bi * r * c;
          Real* gab = ga.data() + bi * r * c;
          for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < r; ++j) gab[j * c + i] += gb[i * r + j];
        }
      },
      0);
}

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& xs, std::size_t axis) {
  if (xs.empty()) throw ArgumentError("concat: empty input list");
  const Shape& s0 = xs[0].shape();
  require_shape(axis < s0.size(), "concat: axis " + std::to_string(axis) + " out of range for " +
                                      shape_str(s0));
  std::size_t axis_total = 0;
  for (const auto& x : xs) {
    require_shape(x.ndim() == s0.size(), "concat: rank mismatch " + shape_str(x.shape()));
    for (std::size_t d = 0; d < s0.size(); ++d)
      if (d != axis)
        require_shape(x.shape()[d] == s0[d], "concat: shapes " + shape_str(s0) + " and " +
                                                 shape_str(x.shape()) + " differ off-axis");
    axis_total += x.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

  auto out = detail::make_data<Real>(numel(out_shape));
  std::size_t axis_off = 0;
  for (const auto& x : xs) {
    const std::size_t ax = x.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.data().data() + o * ax * inner, ax * inner,
                  out->data() + (o * axis_total + axis_off) * inner);
    }
    axis_off += ax;
  }

  std::vector<const Tensor<Real>*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);
  Tape<Real>* tape = nullptr;
  for (const auto& x : xs) {
    if (x.tracked()) {
      if (!tape)
        tape = x.tape();
      else if (tape != x.tape())
        throw ContractError("concat: operands belong to different tapes");
    }
  }
  std::vector<int> nodes;
  std::vector<std::size_t> axis_extents;
  std::vector<int> parents;
  for (const auto& x : xs) {
    nodes.push_back(x.node());
    axis_extents.push_back(x.shape()[axis]);
    if (x.node() >= 0) parents.push_back(x.node());
  }
  return detail::emit<Real>(
      tape, "concat", std::move(out_shape), std::move(out), std::move(parents),
      [nodes, axis_extents, outer, inner, axis_total](const std::vector<Real>& g, Tape<Real>& t) {
        std::size_t axis_off = 0;
        for (std::size_t xi = 0; xi < nodes.size(); ++xi) {
          const std::size_t ax = axis_extents[xi];
          if (nodes[xi] >= 0) {
            auto& gx = t.grad_slot(nodes[xi]);
            for (std::size_t o = 0; o < outer; ++o) {
              const Real* src = g.data() + (o * axis_total + axis_off) * inner;
              Real* dst = gx.data() + o * ax * inner;
              for (std::size_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
            }
          }
          axis_off += ax;
        }
      },
      0);
}

template <typename Real>
Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::size_t offset, std::size_t len) {
  require_shape(axis < a.ndim(), "slice: axis " + std::to_string(axis) + " out of range for " +
                                     shape_str(a.shape()));
  require_shape(offset + len <= a.shape()[axis], "slice: [" + std::to_string(offset) + ", " +
                                                     std::to_string(offset + len) +
                                                     ") exceeds axis extent in " +
                                                     shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (std::size_t d = axis + 1; d < a.ndim(); ++d) inner *= a.shape()[d];
  const std::size_t ax = a.shape()[axis];

  auto out = detail::make_data<Real>(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data().data() + (o * ax + offset) * inner, len * inner,
                out->data() + o * len * inner);

  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "slice", std::move(out_shape), std::move(out),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, outer, inner, ax, offset, len](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t o = 0; o < outer; ++o) {
          const Real* src = g.data() + o * len * inner;
          Real* dst = ga.data() + (o * ax + offset) * inner;
          for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      },
      0);
}

// [M, C] -> [H, M, C/H]
template <typename Real>
Tensor<Real> split_heads(const Tensor<Real>& a, std::size_t heads) {
  require_shape(a.ndim() == 2, "split_heads: need [M, C], got " + shape_str(a.shape()));
  const std::size_t m = a.shape()[0], c = a.shape()[1];
  if (heads == 0 || c % heads != 0)
    throw ConfigError("split_heads: head count " + std::to_string(heads) +
                      " does not divide channel width " + std::to_string(c));
  const std::size_t d = c / heads;
  auto out = detail::make_data<Real>(a.size());
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(a.data().data() + i * c + h * d, d, out->data() + (h * m + i) * d);

  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "split_heads", Shape{heads, m, d}, std::move(out),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, heads, m, c, d](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j)
              ga[i * c + h * d + j] += g[(h * m + i) * d + j];
      },
      0);
}

// [H, M, d] -> [M, H*d]
template <typename Real>
Tensor<Real> merge_heads(const Tensor<Real>& a) {
  require_shape(a.ndim() == 3, "merge_heads: need [H, M, d], got " + shape_str(a.shape()));
  const std::size_t heads = a.shape()[0], m = a.shape()[1], d = a.shape()[2];
  const std::size_t c = heads * d;
  auto out = detail::make_data<Real>(a.size());
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(a.data().data() + (h * m + i) * d, d, out->data() + i * c + h * d);

  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "merge_heads", Shape{m, c}, std::move(out),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, heads, m, c, d](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j)
              ga[(h * m + i) * d + j] += g[i * c + h * d + j];
      },
      0);
}

// Row gather from a [R, C] matrix; gradient scatters back additively.
// idx is flattened; out shape = prefix_shape + [C] with numel(prefix_shape)
// == idx.size().
template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& a, const std::vector<std::size_t>& idx,
                         Shape prefix_shape) {
  require_shape(a.ndim() == 2, "gather_rows: need [R, C], got " + shape_str(a.shape()));
  const std::size_t rows = a.shape()[0], c = a.shape()[1];
  if (numel(prefix_shape) != idx.size())
    throw ArgumentError("gather_rows: index count does not match output shape");
  for (std::size_t i : idx)
    if (i >= rows)
      throw ArgumentError("gather_rows: index " + std::to_string(i) + " out of range for " +
                          std::to_string(rows) + " rows");
  Shape out_shape = std::move(prefix_shape);
  out_shape.push_back(c);
  auto out = detail::make_data<Real>(idx.size() * c);
  for (std::size_t q = 0; q < idx.size(); ++q)
    std::copy_n(a.data().data() + idx[q] * c, c, out->data() + q * c);

  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "gather_rows", std::move(out_shape), std::move(out),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, idx, c](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t q = 0; q < idx.size(); ++q) {
          Real* dst = ga.data() + idx[q] * c;
          const Real* src = g.data() + q * c;
          for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
      },
      0);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

// Removes the axis. Ties route the gradient to the lowest index.
template <typename Real>
Tensor<Real> reduce_max(const Tensor<Real>& a, std::size_t axis) {
  require_shape(axis < a.ndim(), "reduce_max: axis " + std::to_string(axis) +
                                     " out of range for " + shape_str(a.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t ax = a.shape()[axis];
  for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (std::size_t d = axis + 1; d < a.ndim(); ++d) inner *= a.shape()[d];
  Shape out_shape;
  for (std::size_t d = 0; d < a.ndim(); ++d)
    if (d != axis) out_shape.push_back(a.shape()[d]);
  if (out_shape.empty()) out_shape.push_back(1);

  auto out = detail::make_data<Real>(outer * inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>(outer * inner, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      Real best = a.data()[(o * ax + 0) * inner + i];
      std::size_t best_l = 0;
      for (std::size_t l = 1; l < ax; ++l) {
        const Real v = a.data()[(o * ax + l) * inner + i];
        if (v > best) {
          best = v;
          best_l = l;
        }
      }
      (*out)[o * inner + i] = best;
      (*argmax)[o * inner + i] = best_l;
    }
  }

  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "reduce_max", std::move(out_shape), std::move(out),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, argmax, outer, inner, ax](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i)
            ga[(o * ax + (*argmax)[o * inner + i]) * inner + i] += g[o * inner + i];
      },
      a.size());
}

template <typename Real>
Tensor<Real> reduce_sum(const Tensor<Real>& a, std::size_t axis) {
  require_shape(axis < a.ndim(), "reduce_sum: axis " + std::to_string(axis) +
                                     " out of range for " + shape_str(a.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t ax = a.shape()[axis];
  for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (std::size_t d = axis + 1; d < a.ndim(); ++d) inner *= a.shape()[d];
  Shape out_shape;
  for (std::size_t d = 0; d < a.ndim(); ++d)
    if (d != axis) out_shape.push_back(a.shape()[d]);
  if (out_shape.empty()) out_shape.push_back(1);

  auto out = detail::make_data<Real>(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < ax; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        (*out)[o * inner + i] += a.data()[(o * ax + l) * inner + i];

  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "reduce_sum", std::move(out_shape), std::move(out),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, outer, inner, ax](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t l = 0; l < ax; ++l)
            for (std::size_t i = 0; i < inner; ++i)
              ga[(o * ax + l) * inner + i] += g[o * inner + i];
      },
      a.size());
}

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& a) {
  Real s = 0;
  for (Real v : a.data()) s += v;
  auto out = std::make_shared<std::vector<Real>>(1, s);
  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  const std::size_t n = a.size();
  return detail::emit<Real>(
      tape, "sum_all", Shape{1}, std::move(out),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, n](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
      },
      a.size());
}

template <typename Real>
Tensor<Real> mean_all(const Tensor<Real>& a) {
  return scale(sum_all(a), Real(1) / static_cast<Real>(a.size()));
}

// ---------------------------------------------------------------------------
// matmul: [.., m, k] x [.., k, n] -> [.., m, n]. Leading batch dims must be
// equal, or absent on one side (shared operand). No other broadcasting.
// ---------------------------------------------------------------------------
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_shape(a.ndim() >= 2 && b.ndim() >= 2,
                "matmul: need >= 2 dims, got " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
  const std::size_t m = a.shape()[a.ndim() - 2];
  const std::size_t k = a.shape()[a.ndim() - 1];
  const std::size_t kb = b.shape()[b.ndim() - 2];
  const std::size_t n = b.shape()[b.ndim() - 1];
  require_shape(k == kb, "matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  require_shape(a_batch == b_batch || a_batch.empty() || b_batch.empty(),
                "matmul: batch extents not broadcastable, " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
  const Shape& batch_shape = a_batch.empty() ? b_batch : a_batch;
  const std::size_t batch = numel(batch_shape);
  const bool a_shared = a_batch.empty() && !b_batch.empty();
  const bool b_shared = b_batch.empty() && !a_batch.empty();

  Shape out_shape = batch_shape;
  out_shape.push_back(m);
  out_shape.push_back(n);

  auto out = detail::make_data<Real>(batch * m * n);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const Real* pa = a.data().data() + (a_shared ? 0 : bi * m * k);
    const Real* pb = b.data().data() + (b_shared ? 0 : bi * k * n);
    detail::mm_acc(pa, pb, out->data() + bi * m * n, m, k, n);
  }

  Tape<Real>* tape = detail::common_tape<Real>({&a, &b});
  const int an = a.node(), bn = b.node();
  std::vector<int> parents;
  if (an >= 0) parents.push_back(an);
  if (bn >= 0) parents.push_back(bn);
  const std::uint64_t flops = 2ull * batch * m * k * n;
  return detail::emit<Real>(
      tape, "matmul", std::move(out_shape), std::move(out), std::move(parents),
      [an, bn, m, k, n, batch, a_shared, b_shared, sa = a.storage(),
       sb = b.storage()](const std::vector<Real>& g, Tape<Real>& t) {
        if (an >= 0) {
          // dA = G * B^T
          auto& ga = t.grad_slot(an);
          std::vector<Real> bt(k * n);
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const Real* pb = sb->data() + (b_shared ? 0 : bi * k * n);
            if (bi == 0 || !b_shared) detail::transpose2d(pb, bt.data(), k, n);
            detail::mm_acc(g.data() + bi * m * n, bt.data(),
                           ga.data() + (a_shared ? 0 : bi * m * k), m, n, k);
          }
        }
        if (bn >= 0) {
          // dB = A^T * G
          auto& gb = t.grad_slot(bn);
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const Real* pa = sa->data() + (a_shared ? 0 : bi * m * k);
            detail::mm_acc_tn(pa, g.data() + bi * m * n,
                              gb.data() + (b_shared ? 0 : bi * k * n), m, k, n);
          }
        }
      },
      flops);
}

// ---------------------------------------------------------------------------
// softmax over the last axis, max-subtracted for stability.
// ---------------------------------------------------------------------------
template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a) {
  require_shape(a.ndim() >= 1 && a.shape().back() >= 1,
                "softmax_rows: bad shape " + shape_str(a.shape()));
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  auto out = detail::make_data<Real>(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = a.data().data() + r * n;
    Real* y = out->data() + r * n;
    Real mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    Real denom = 0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      denom += y[i];
    }
    const Real inv = Real(1) / denom;
    for (std::size_t i = 0; i < n; ++i) y[i] *= inv;
  }

  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  auto saved = out;  // softmax backward needs the outputs
  return detail::emit<Real>(
      tape, "softmax", a.shape(), std::move(out),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, saved, rows, n](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* y = saved->data() + r * n;
          const Real* gr = g.data() + r * n;
          Real dot = 0;
          for (std::size_t i = 0; i < n; ++i) dot += gr[i] * y[i];
          Real* gar = ga.data() + r * n;
          for (std::size_t i = 0; i < n; ++i) gar[i] += y[i] * (gr[i] - dot);
        }
      },
      5ull * a.size());
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis (population variance + eps), then
// gamma/beta affine.
// ---------------------------------------------------------------------------
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Real eps) {
  if (!(eps > Real(0))) throw ArgumentError("layer_norm: eps must be positive");
  require_shape(x.ndim() >= 1, "layer_norm: bad shape " + shape_str(x.shape()));
  const std::size_t c = x.shape().back();
  require_shape(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
                "layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                    shape_str(beta.shape()) + " do not match channel width of " +
                    shape_str(x.shape()));
  const std::size_t rows = x.size() / c;
  auto out = detail::make_data<Real>(x.size());
  auto xhat = std::make_shared<std::vector<Real>>(x.size());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.data().data() + r * c;
    Real mu = 0;
    for (std::size_t i = 0; i < c; ++i) mu += xr[i];
    mu /= static_cast<Real>(c);
    Real var = 0;
    for (std::size_t i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<Real>(c);
    const Real inv = Real(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t i = 0; i < c; ++i) {
      const Real xh = (xr[i] - mu) * inv;
      (*xhat)[r * c + i] = xh;
      (*out)[r * c + i] = gamma.data()[i] * xh + beta.data()[i];
    }
  }

  Tape<Real>* tape = detail::common_tape<Real>({&x, &gamma, &beta});
  const int xn = x.node(), gn = gamma.node(), bn = beta.node();
  std::vector<int> parents;
  for (int p : {xn, gn, bn})
    if (p >= 0) parents.push_back(p);
  return detail::emit<Real>(
      tape, "layer_norm", x.shape(), std::move(out), std::move(parents),
      [xn, gn, bn, xhat, inv_std, rows, c, sg = gamma.storage()](const std::vector<Real>& g,
                                                                 Tape<Real>& t) {
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* gr = g.data() + r * c;
          const Real* xh = xhat->data() + r * c;
          if (xn >= 0) {
            auto& gx = t.grad_slot(xn);
            const Real inv = (*inv_std)[r];
            Real sum_gh = 0, sum_gh_xh = 0;
            for (std::size_t i = 0; i < c; ++i) {
              const Real gh = gr[i] * (*sg)[i];
              sum_gh += gh;
              sum_gh_xh += gh * xh[i];
            }
            const Real invc = Real(1) / static_cast<Real>(c);
            Real* gxr = gx.data() + r * c;
            for (std::size_t i = 0; i < c; ++i) {
              const Real gh = gr[i] * (*sg)[i];
              gxr[i] += inv * (gh - sum_gh * invc - xh[i] * sum_gh_xh * invc);
            }
          }
          if (gn >= 0) {
            auto& gg = t.grad_slot(gn);
            for (std::size_t i = 0; i < c; ++i) gg[i] += gr[i] * xh[i];
          }
          if (bn >= 0) {
            auto& gb = t.grad_slot(bn);
            for (std::size_t i = 0; i < c; ++i) gb[i] += gr[i];
          }
        }
      },
      5ull * x.size());
}

}  // namespace pcfuse
