// Copyright 2026 The crica Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <vector>

#include "crica/error.hpp"
#include "crica/kernels.hpp"
#include "crica/tensor.hpp"

// Minimal reverse-mode automatic differentiation.
//
// A Tape records every op of one forward pass in execution order. Each node
// owns its output value (or references external parameter storage) and, if
// any input needs a gradient, a closure that pushes the node's gradient into
// its inputs. Tapes are single-use: build, backward once, discard.
namespace crica {

template <typename T>
class Tape;

/// Handle to a node on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf owning its value.
  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }
  Var<T> variable(Tensor<T> value) { return leaf(std::move(value), true); }

  /// Leaf referencing storage that must outlive the tape (model parameters).
  Var<T> bind(const Tensor<T>& storage, bool requires_grad) {
    Node n;
    n.external = &storage;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Records an op output. The backward closure is dropped when no input
  /// requires a gradient.
  Var<T> record(Tensor<T> value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient accumulator of a node, zero-initialized on first touch.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }

  /// dL/d(var) after backward; zeros when nothing flowed into it.
  Tensor<T> grad(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) return Tensor<T>(value(v.id()).shape());
    return n.grad;
  }

  void backward(const Var<T>& out, const Tensor<T>& seed) {
    CRICA_CHECK(!nodes_.empty(), ErrorCode::EmptyTape, "backward on an empty tape");
    CRICA_CHECK(out.id() < nodes_.size(), ErrorCode::InvalidArgument, "var not on this tape");
    CRICA_CHECK(seed.shape() == value(out.id()).shape(), ErrorCode::ShapeMismatch, "seed shape ",
                seed.shape(), " vs output ", value(out.id()).shape());
    if (!nodes_[out.id()].requires_grad) return;
    Tensor<T>& g = grad_buffer(out.id());
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
    for (std::size_t id = out.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      // Inputs always have smaller ids, so the closure never touches n.grad.
      n.backward(*this, n.grad);
      n.grad = Tensor<T>();
    }
  }

  void backward(const Var<T>& scalar_out) {
    CRICA_CHECK(!nodes_.empty(), ErrorCode::EmptyTape, "backward on an empty tape");
    CRICA_CHECK(value(scalar_out.id()).numel() == 1, ErrorCode::NonScalarOutput,
                "seedless backward needs a scalar output, got ", value(scalar_out.id()).shape());
    backward(scalar_out, Tensor<T>::scalar(T{1}));
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  CRICA_CHECK(&a.tape() == &b.tape(), ErrorCode::InvalidArgument, "vars live on different tapes");
  return a.tape();
}

template <typename T>
void accumulate(Tape<T>& tape, std::size_t id, const Tensor<T>& delta) {
  Tensor<T>& g = tape.grad_buffer(id);
  T* gp = g.ptr();
  const T* dp = delta.ptr();
  for (std::size_t i = 0; i < g.numel(); ++i) gp[i] += dp[i];
}

template <typename T>
bool is_integer(T p) {
  return std::floor(p) == p;
}

#ifdef CRICA_INJECT_GRAD_FAULT
inline constexpr int kReluGradSign = -1;
#else
inline constexpr int kReluGradSign = 1;
#endif

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[m x k] * b[k x n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  CRICA_CHECK(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
              ErrorCode::ShapeMismatch, "matmul ", av.shape(), " x ", bv.shape());
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  kernels::gemm_nn(m, n, k, av.ptr(), bv.ptr(), out.ptr());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib, m, n, k](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) {
                         kernels::gemm_nt(m, k, n, g.ptr(), t.value(ib).ptr(),
                                          t.grad_buffer(ia).ptr());
                       }
                       if (t.requires_grad(ib)) {
                         kernels::gemm_tn(k, n, m, t.value(ia).ptr(), g.ptr(),
                                          t.grad_buffer(ib).ptr());
                       }
                     });
}

/// a[m x k] * b[n x k]^T
template <typename T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  CRICA_CHECK(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1),
              ErrorCode::ShapeMismatch, "matmul_bt ", av.shape(), " x ", bv.shape(), "^T");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor<T> out({m, n});
  kernels::gemm_nt(m, n, k, av.ptr(), bv.ptr(), out.ptr());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib, m, n, k](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) {
                         kernels::gemm_nn(m, k, n, g.ptr(), t.value(ib).ptr(),
                                          t.grad_buffer(ia).ptr());
                       }
                       if (t.requires_grad(ib)) {
                         kernels::gemm_tn(n, k, m, g.ptr(), t.value(ia).ptr(),
                                          t.grad_buffer(ib).ptr());
                       }
                     });
}

/// x[m x k] * w[k x n] + bias[n], fused.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  Tape<T>& tape = detail::same_tape(x, w);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = bias.value();
  CRICA_CHECK(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0),
              ErrorCode::ShapeMismatch, "linear ", xv.shape(), " x ", wv.shape());
  const std::size_t m = xv.dim(0), k = xv.dim(1), n = wv.dim(1);
  CRICA_CHECK(bv.numel() == n, ErrorCode::ShapeMismatch, "bias ", bv.shape(), " for width ", n);
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(bv.ptr(), n, out.ptr() + i * n);
  kernels::gemm_nn(m, n, k, xv.ptr(), wv.ptr(), out.ptr());
  const std::size_t ix = x.id(), iw = w.id(), ibias = bias.id();
  const bool rg = x.requires_grad() || w.requires_grad() || bias.requires_grad();
  return tape.record(std::move(out), rg, [ix, iw, ibias, m, n, k](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ix))
      kernels::gemm_nt(m, k, n, g.ptr(), t.value(iw).ptr(), t.grad_buffer(ix).ptr());
    if (t.requires_grad(iw))
      kernels::gemm_tn(k, n, m, t.value(ix).ptr(), g.ptr(), t.grad_buffer(iw).ptr());
    if (t.requires_grad(ibias)) {
      T* gb = t.grad_buffer(ibias).ptr();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  CRICA_CHECK(xv.rank() == 2, ErrorCode::ShapeMismatch, "transpose needs rank 2, got ", xv.shape());
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor<T> out({c, r});
  kernels::transpose(r, c, xv.ptr(), out.ptr());
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, r, c](Tape<T>& t, const Tensor<T>& g) {
                           Tensor<T>& gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
                         });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  CRICA_CHECK(a.shape() == b.shape(), ErrorCode::ShapeMismatch, "add ", a.shape(), " + ",
              b.shape());
  Tensor<T> out = a.value();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bp[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) detail::accumulate(t, ia, g);
                       if (t.requires_grad(ib)) detail::accumulate(t, ib, g);
                     });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  CRICA_CHECK(a.shape() == b.shape(), ErrorCode::ShapeMismatch, "sub ", a.shape(), " - ",
              b.shape());
  Tensor<T> out = a.value();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bp[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) detail::accumulate(t, ia, g);
                       if (t.requires_grad(ib)) {
                         T* gb = t.grad_buffer(ib).ptr();
                         for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
                       }
                     });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  CRICA_CHECK(a.shape() == b.shape(), ErrorCode::ShapeMismatch, "mul ", a.shape(), " * ",
              b.shape());
  Tensor<T> out = a.value();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bp[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) {
                         T* ga = t.grad_buffer(ia).ptr();
                         const T* bv = t.value(ib).ptr();
                         for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
                       }
                       if (t.requires_grad(ib)) {
                         T* gb = t.grad_buffer(ib).ptr();
                         const T* av = t.value(ia).ptr();
                         for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
                       }
                     });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, factor](Tape<T>& t, const Tensor<T>& g) {
                           T* gx = t.grad_buffer(ix).ptr();
                           for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += factor * g[i];
                         });
}

/// x[m x n] + row[n] broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& row) {
  Tape<T>& tape = detail::same_tape(x, row);
  const Tensor<T>& xv = x.value();
  CRICA_CHECK(xv.rank() == 2 && row.numel() == xv.dim(1), ErrorCode::ShapeMismatch, "add_row ",
              xv.shape(), " + ", row.shape());
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out = xv;
  const T* rp = row.value().ptr();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rp[j];
  const std::size_t ix = x.id(), ir = row.id();
  return tape.record(std::move(out), x.requires_grad() || row.requires_grad(),
                     [ix, ir, m, n](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ix)) detail::accumulate(t, ix, g);
                       if (t.requires_grad(ir)) {
                         T* gr = t.grad_buffer(ir).ptr();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
                       }
                     });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix](Tape<T>& t, const Tensor<T>& g) {
    const T* xv = t.value(ix).ptr();
    T* gx = t.grad_buffer(ix).ptr();
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (xv[i] > T{0}) gx[i] += static_cast<T>(detail::kReluGradSign) * g[i];
  });
}

/// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, inv_sqrt2](Tape<T>& t, const Tensor<T>& g) {
                           const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
                           const T* xv = t.value(ix).ptr();
                           T* gx = t.grad_buffer(ix).ptr();
                           for (std::size_t i = 0; i < g.numel(); ++i) {
                             const T v = xv[i];
                             const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                             const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                             gx[i] += g[i] * (cdf + v * pdf);
                           }
                         });
}

/// max(x, lo); gradient passes only where x > lo.
template <typename T>
Var<T> clamp_min(const Var<T>& x, T lo) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > lo ? v : lo;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, lo](Tape<T>& t, const Tensor<T>& g) {
                           const T* xv = t.value(ix).ptr();
                           T* gx = t.grad_buffer(ix).ptr();
                           for (std::size_t i = 0; i < g.numel(); ++i)
                             if (xv[i] > lo) gx[i] += g[i];
                         });
}

template <typename T>
Var<T> reciprocal(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) {
    CRICA_CHECK(v != T{0}, ErrorCode::InvalidArgument, "reciprocal of zero");
    v = T(1) / v;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix](Tape<T>& t, const Tensor<T>& g) {
    const T* xv = t.value(ix).ptr();
    T* gx = t.grad_buffer(ix).ptr();
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] -= g[i] / (xv[i] * xv[i]);
  });
}

/// x^p with a constant exponent.
template <typename T>
Var<T> power(const Var<T>& x, T p) {
  const bool integral = detail::is_integer(p);
  Tensor<T> out = x.value();
  for (auto& v : out.data()) {
    CRICA_CHECK(integral || v > T{0}, ErrorCode::NonPositiveBase, "non-integer power ", p,
                " of ", v);
    v = std::pow(v, p);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix, p](Tape<T>& t, const Tensor<T>& g) {
    const T* xv = t.value(ix).ptr();
    T* gx = t.grad_buffer(ix).ptr();
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * p * std::pow(xv[i], p - T(1));
  });
}

/// x^p with a scalar exponent that may itself require a gradient.
template <typename T>
Var<T> power(const Var<T>& x, const Var<T>& p) {
  Tape<T>& tape = detail::same_tape(x, p);
  CRICA_CHECK(p.numel() == 1, ErrorCode::ShapeMismatch, "exponent must be a scalar, got ",
              p.shape());
  const T pv = p.value()[0];
  const bool integral = detail::is_integer(pv);
  Tensor<T> out = x.value();
  for (auto& v : out.data()) {
    CRICA_CHECK(integral || v > T{0}, ErrorCode::NonPositiveBase, "non-integer power ", pv,
                " of ", v);
    v = std::pow(v, pv);
  }
  const std::size_t ix = x.id(), ip = p.id();
  const std::size_t iy = tape.size();  // id this node is about to receive
  return tape.record(std::move(out), x.requires_grad() || p.requires_grad(),
                     [ix, ip, iy, pv](Tape<T>& t, const Tensor<T>& g) {
                       const T* xv = t.value(ix).ptr();
                       if (t.requires_grad(ix)) {
                         T* gx = t.grad_buffer(ix).ptr();
                         for (std::size_t i = 0; i < g.numel(); ++i)
                           gx[i] += g[i] * pv * std::pow(xv[i], pv - T(1));
                       }
                       if (t.requires_grad(ip)) {
                         const T* yv = t.value(iy).ptr();
                         T acc{0};
                         for (std::size_t i = 0; i < g.numel(); ++i)
                           if (xv[i] > T{0}) acc += g[i] * yv[i] * std::log(xv[i]);
                         t.grad_buffer(ip)[0] += acc;
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor<T>::scalar(acc), x.requires_grad(),
                         [ix](Tape<T>& t, const Tensor<T>& g) {
                           Tensor<T>& gx = t.grad_buffer(ix);
                           for (auto& v : gx.data()) v += g[0];
                         });
}

namespace detail {

inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

template <typename T>
Var<T> reduce_axis(const Var<T>& x, std::size_t axis, T divisor) {
  const AxisSplit s = split_at_axis(x.shape(), axis);
  const Tensor<T>& xv = x.value();
  Tensor<T> out(drop_axis(x.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t a = 0; a < s.extent; ++a)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xv[(o * s.extent + a) * s.inner + i];
  if (divisor != T(1))
    for (auto& v : out.data()) v /= divisor;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, s, divisor](Tape<T>& t, const Tensor<T>& g) {
                           Tensor<T>& gx = t.grad_buffer(ix);
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t a = 0; a < s.extent; ++a)
                               for (std::size_t i = 0; i < s.inner; ++i)
                                 gx[(o * s.extent + a) * s.inner + i] +=
                                     g[o * s.inner + i] / divisor;
                         });
}

}  // namespace detail

/// Sum along `axis`; the axis is removed from the shape.
template <typename T>
Var<T> sum(const Var<T>& x, std::size_t axis) {
  return detail::reduce_axis(x, axis, T(1));
}

/// Mean along `axis`; the axis is removed from the shape.
template <typename T>
Var<T> mean(const Var<T>& x, std::size_t axis) {
  const AxisSplit s = split_at_axis(x.shape(), axis);
  return detail::reduce_axis(x, axis, static_cast<T>(s.extent));
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Normalization

/// Max-subtracted softmax along `axis`.
template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  CRICA_CHECK(axis < x.shape().size(), ErrorCode::InvalidAxis, "softmax axis ", axis, " on ",
              x.shape());
  const AxisSplit s = split_at_axis(x.shape(), axis);
  Tensor<T> out = x.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      T* base = out.ptr() + o * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t a = 0; a < s.extent; ++a) mx = std::max(mx, base[a * s.inner]);
      T total{0};
      for (std::size_t a = 0; a < s.extent; ++a) {
        base[a * s.inner] = std::exp(base[a * s.inner] - mx);
        total += base[a * s.inner];
      }
      for (std::size_t a = 0; a < s.extent; ++a) base[a * s.inner] /= total;
    }
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape().size();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, iy, s](Tape<T>& t, const Tensor<T>& g) {
                           const T* y = t.value(iy).ptr();
                           T* gx = t.grad_buffer(ix).ptr();
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             for (std::size_t i = 0; i < s.inner; ++i) {
                               const std::size_t off = o * s.extent * s.inner + i;
                               T dot{0};
                               for (std::size_t a = 0; a < s.extent; ++a)
                                 dot += g[off + a * s.inner] * y[off + a * s.inner];
                               for (std::size_t a = 0; a < s.extent; ++a) {
                                 const std::size_t k = off + a * s.inner;
                                 gx[k] += y[k] * (g[k] - dot);
                               }
                             }
                           }
                         });
}

/// Layer norm over the last axis. A row whose variance (plus eps) is zero
/// normalizes to zeros.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  Tape<T>& tape = detail::same_tape(x, gamma);
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.shape().back();
  CRICA_CHECK(gamma.numel() == n && beta.numel() == n, ErrorCode::ShapeMismatch,
              "layer_norm affine ", gamma.shape(), "/", beta.shape(), " for width ", n);
  const std::size_t rows = xv.numel() / n;
  Tensor<T> out(xv.shape());
  // Cache normalized values and inverse std for the backward pass.
  auto xhat = std::make_shared<std::vector<T>>(xv.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.ptr() + r * n;
    T mu{0};
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T denom = var + eps;
    const T inv = denom > T{0} ? T(1) / std::sqrt(denom) : T{0};
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mu) * inv;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gp[j] + bp[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return tape.record(std::move(out), rg,
                     [ix, ig, ib, rows, n, xhat, inv_std](Tape<T>& t, const Tensor<T>& g) {
                       const T* gam = t.value(ig).ptr();
                       if (t.requires_grad(ig)) {
                         T* gg = t.grad_buffer(ig).ptr();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < n; ++j)
                             gg[j] += g[r * n + j] * (*xhat)[r * n + j];
                       }
                       if (t.requires_grad(ib)) {
                         T* gb = t.grad_buffer(ib).ptr();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                       }
                       if (t.requires_grad(ix)) {
                         T* gx = t.grad_buffer(ix).ptr();
                         for (std::size_t r = 0; r < rows; ++r) {
                           T mean_d{0}, mean_dh{0};
                           for (std::size_t j = 0; j < n; ++j) {
                             const T d = g[r * n + j] * gam[j];
                             mean_d += d;
                             mean_dh += d * (*xhat)[r * n + j];
                           }
                           mean_d /= static_cast<T>(n);
                           mean_dh /= static_cast<T>(n);
                           const T inv = (*inv_std)[r];
                           for (std::size_t j = 0; j < n; ++j) {
                             const T d = g[r * n + j] * gam[j];
                             gx[r * n + j] += inv * (d - mean_d - (*xhat)[r * n + j] * mean_dh);
                           }
                         }
                       }
                     });
}

inline constexpr double kL2NormEps = 1e-12;

/// x / max(||x||_2, eps) along `axis`.
template <typename T>
Var<T> l2_normalize(const Var<T>& x, std::size_t axis, T eps = static_cast<T>(kL2NormEps)) {
  const AxisSplit s = split_at_axis(x.shape(), axis);
  Tensor<T> out = x.value();
  auto norms = std::make_shared<std::vector<T>>(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      T* base = out.ptr() + o * s.extent * s.inner + i;
      double ss = 0.0;
      for (std::size_t a = 0; a < s.extent; ++a)
        ss += static_cast<double>(base[a * s.inner]) * static_cast<double>(base[a * s.inner]);
      const T norm = static_cast<T>(std::sqrt(ss));
      (*norms)[o * s.inner + i] = norm;
      const T d = std::max(norm, eps);
      for (std::size_t a = 0; a < s.extent; ++a) base[a * s.inner] /= d;
    }
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape().size();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, iy, s, eps, norms](Tape<T>& t, const Tensor<T>& g) {
                           const T* y = t.value(iy).ptr();
                           T* gx = t.grad_buffer(ix).ptr();
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             for (std::size_t i = 0; i < s.inner; ++i) {
                               const std::size_t off = o * s.extent * s.inner + i;
                               const T norm = (*norms)[o * s.inner + i];
                               if (norm > eps) {
                                 T dot{0};
                                 for (std::size_t a = 0; a < s.extent; ++a)
                                   dot += g[off + a * s.inner] * y[off + a * s.inner];
                                 for (std::size_t a = 0; a < s.extent; ++a) {
                                   const std::size_t k = off + a * s.inner;
                                   gx[k] += (g[k] - y[k] * dot) / norm;
                                 }
                               } else {
                                 for (std::size_t a = 0; a < s.extent; ++a)
                                   gx[off + a * s.inner] += g[off + a * s.inner] / eps;
                               }
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// Convolution

/// Stride-1 "same" convolution of x[C_in x H x W] with k[C_out x C_in x kh x kw]
/// plus bias[C_out]. Kernel extents must be odd.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias) {
  Tape<T>& tape = detail::same_tape(x, kernel);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& kv = kernel.value();
  CRICA_CHECK(xv.rank() == 3 && kv.rank() == 4, ErrorCode::ShapeMismatch, "conv2d ", xv.shape(),
              " with kernel ", kv.shape());
  const std::size_t cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const std::size_t cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  CRICA_CHECK(kv.dim(1) == cin, ErrorCode::ShapeMismatch, "kernel expects ", kv.dim(1),
              " input channels, got ", cin);
  CRICA_CHECK(kh % 2 == 1 && kw % 2 == 1, ErrorCode::EvenKernel, "kernel ", kh, "x", kw);
  CRICA_CHECK(bias.numel() == cout, ErrorCode::ShapeMismatch, "bias ", bias.shape(), " for ",
              cout, " channels");
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const long H = static_cast<long>(h), W = static_cast<long>(w);

  // Visits every (output pixel, input pixel) pair the kernel tap connects.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long dy = static_cast<long>(ky) - ph, dx = static_cast<long>(kx) - pw;
            const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
            const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
            if (y0 >= y1 || x0 >= x1) continue;
            const std::size_t kidx = ((co * cin + ci) * kh + ky) * kw + kx;
            fn(co, ci, kidx, dy, dx, y0, y1, x0, x1);
          }
  };

  Tensor<T> out({cout, h, w});
  const T* bp = bias.value().ptr();
  for (std::size_t co = 0; co < cout; ++co)
    std::fill_n(out.ptr() + co * h * w, h * w, bp[co]);
  const T* xp = xv.ptr();
  const T* kp = kv.ptr();
  T* op = out.ptr();
  for_each_tap([&](std::size_t co, std::size_t ci, std::size_t kidx, long dy, long dx, long y0,
                   long y1, long x0, long x1) {
    const T wv = kp[kidx];
    for (long yy = y0; yy < y1; ++yy) {
      T* orow = op + (co * h + yy) * w;
      const T* irow = xp + (ci * h + (yy + dy)) * w + dx;
      for (long xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
    }
  });

  const std::size_t ix = x.id(), ik = kernel.id(), ib = bias.id();
  const bool rg = x.requires_grad() || kernel.requires_grad() || bias.requires_grad();
  return tape.record(
      std::move(out), rg, [ix, ik, ib, cout, h, w, for_each_tap](Tape<T>& t, const Tensor<T>& g) {
        const T* gp = g.ptr();
        const bool need_x = t.requires_grad(ix), need_k = t.requires_grad(ik);
        if (t.requires_grad(ib)) {
          T* gb = t.grad_buffer(ib).ptr();
          for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t i = 0; i < h * w; ++i) gb[co] += gp[co * h * w + i];
        }
        if (!need_x && !need_k) return;
        const T* xp = t.value(ix).ptr();
        const T* kp = t.value(ik).ptr();
        T* gx = need_x ? t.grad_buffer(ix).ptr() : nullptr;
        T* gk = need_k ? t.grad_buffer(ik).ptr() : nullptr;
        for_each_tap([&](std::size_t co, std::size_t ci, std::size_t kidx, long dy, long dx,
                         long y0, long y1, long x0, long x1) {
          const T wv = kp[kidx];
          T acc{0};
          for (long yy = y0; yy < y1; ++yy) {
            const T* grow = gp + (co * h + yy) * w;
            const std::size_t in_off = (ci * h + (yy + dy)) * w + dx;
            if (need_x) {
              T* gxrow = gx + in_off;
              for (long xx = x0; xx < x1; ++xx) gxrow[xx] += wv * grow[xx];
            }
            if (need_k) {
              const T* irow = xp + in_off;
              for (long xx = x0; xx < x1; ++xx) acc += grow[xx] * irow[xx];
            }
          }
          if (need_k) gk[kidx] += acc;
        });
      });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel) {
  const std::size_t cout = kernel.value().dim(0);
  return conv2d(x, kernel, x.tape().constant(Tensor<T>({cout})));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  CRICA_CHECK(shape_numel(shape) == x.numel(), ErrorCode::ShapeMismatch, "reshape ", x.shape(),
              " to ", shape);
  Tensor<T> out(std::move(shape), x.value().storage());
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(), [ix](Tape<T>& t, const Tensor<T>& g) {
    detail::accumulate(t, ix, g);
  });
}

/// Concatenation along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  CRICA_CHECK(!parts.empty(), ErrorCode::InvalidArgument, "concat of nothing");
  const Shape& first = parts.front().shape();
  CRICA_CHECK(axis < first.size(), ErrorCode::InvalidAxis, "concat axis ", axis, " on ", first);
  Shape out_shape = first;
  out_shape[axis] = 0;
  bool rg = false;
  for (const auto& p : parts) {
    CRICA_CHECK(&p.tape() == &parts.front().tape(), ErrorCode::InvalidArgument,
                "concat across tapes");
    const Shape& s = p.shape();
    CRICA_CHECK(s.size() == first.size(), ErrorCode::ShapeMismatch, "concat rank mismatch ", s,
                " vs ", first);
    for (std::size_t i = 0; i < s.size(); ++i)
      CRICA_CHECK(i == axis || s[i] == first[i], ErrorCode::ShapeMismatch, "concat ", s, " vs ",
                  first, " on axis ", axis);
    out_shape[axis] += s[axis];
    rg = rg || p.requires_grad();
  }
  const AxisSplit os = split_at_axis(out_shape, axis);
  Tensor<T> out(out_shape);
  std::vector<std::size_t> ids, extents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t e = p.shape()[axis];
    const T* src = p.value().ptr();
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(src + o * e * os.inner, e * os.inner,
                  out.ptr() + (o * os.extent + offset) * os.inner);
    ids.push_back(p.id());
    extents.push_back(e);
    offset += e;
  }
  return parts.front().tape().record(
      std::move(out), rg, [ids, extents, os](Tape<T>& t, const Tensor<T>& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t e = extents[k];
          if (t.requires_grad(ids[k])) {
            T* gp = t.grad_buffer(ids[k]).ptr();
            for (std::size_t o = 0; o < os.outer; ++o) {
              const T* src = g.ptr() + (o * os.extent + off) * os.inner;
              T* dst = gp + o * e * os.inner;
              for (std::size_t i = 0; i < e * os.inner; ++i) dst[i] += src[i];
            }
          }
          off += e;
        }
      });
}

/// Half-open range [begin, end) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_at_axis(x.shape(), axis);
  CRICA_CHECK(begin < end && end <= s.extent, ErrorCode::ShapeMismatch, "slice [", begin, ",",
              end, ") of extent ", s.extent);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t e = end - begin;
  Tensor<T> out(out_shape);
  const T* src = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(src + (o * s.extent + begin) * s.inner, e * s.inner, out.ptr() + o * e * s.inner);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, s, begin, e](Tape<T>& t, const Tensor<T>& g) {
                           T* gx = t.grad_buffer(ix).ptr();
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             T* dst = gx + (o * s.extent + begin) * s.inner;
                             const T* src = g.ptr() + o * e * s.inner;
                             for (std::size_t i = 0; i < e * s.inner; ++i) dst[i] += src[i];
                           }
                         });
}

/// Rows of a rank-2 tensor picked by index (repeats allowed).
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<std::size_t> rows) {
  const Tensor<T>& xv = x.value();
  CRICA_CHECK(xv.rank() == 2, ErrorCode::ShapeMismatch, "gather_rows needs rank 2, got ",
              xv.shape());
  CRICA_CHECK(!rows.empty(), ErrorCode::InvalidArgument, "gather_rows with no rows");
  const std::size_t n = xv.dim(1);
  Tensor<T> out({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    CRICA_CHECK(rows[r] < xv.dim(0), ErrorCode::ShapeMismatch, "row ", rows[r], " of ",
                xv.dim(0));
    std::copy_n(xv.ptr() + rows[r] * n, n, out.ptr() + r * n);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [ix, n, rows = std::move(rows)](Tape<T>& t, const Tensor<T>& g) {
                           T* gx = t.grad_buffer(ix).ptr();
                           for (std::size_t r = 0; r < rows.size(); ++r) {
                             T* dst = gx + rows[r] * n;
                             const T* src = g.ptr() + r * n;
                             for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                           }
                         });
}

}  // namespace crica
