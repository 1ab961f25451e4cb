// Copyright 2026 The lidkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lid/errors.hpp"

namespace lid {

namespace detail {

template <typename S>
using EigenMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<EigenMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const EigenMat<S>>;

template <typename S>
struct TensorStorage {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty means "all zeros, not yet materialized"
  bool requires_grad = false;
  std::string name;
};

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: dimensions must be positive");
    n *= d;
  }
  return n;
}

}  // namespace detail

/// N-dimensional real array (row-major) with optional gradient buffer.
/// Copying a Tensor copies the handle; two copies share storage and grad.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(std::vector<int> shape, S v, bool requires_grad = false) {
    Tensor t;
    t.st_ = std::make_shared<detail::TensorStorage<S>>();
    const int64_t n = detail::shape_numel(shape);
    t.st_->shape = std::move(shape);
    t.st_->value.assign(static_cast<size_t>(n), v);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<S> values,
                     bool requires_grad = false) {
    if (detail::shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("Tensor: value count does not match shape");
    Tensor t;
    t.st_ = std::make_shared<detail::TensorStorage<S>>();
    t.st_->shape = std::move(shape);
    t.st_->value = std::move(values);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return st_ != nullptr; }
  const std::vector<int>& shape() const { return st_->shape; }
  int ndim() const { return static_cast<int>(st_->shape.size()); }
  int dim(int i) const { return st_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(st_->value.size()); }

  std::vector<S>& value() { return st_->value; }
  const std::vector<S>& value() const { return st_->value; }

  bool requires_grad() const { return st_->requires_grad; }
  void set_requires_grad(bool rg) { st_->requires_grad = rg; }

  /// Gradient buffer, materialized on first access (zeros).
  std::vector<S>& grad() {
    if (st_->grad.empty()) st_->grad.assign(st_->value.size(), S(0));
    return st_->grad;
  }
  bool has_grad() const { return !st_->grad.empty(); }
  void zero_grad() {
    if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), S(0));
  }

  S item() const {
    if (size() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
    return st_->value[0];
  }

  const std::string& name() const { return st_->name; }
  void set_name(std::string n) { st_->name = std::move(n); }

  /// Deep copy of values (no grad, no name).
  Tensor clone_values() const { return Tensor::from(st_->shape, st_->value); }

  bool same_storage(const Tensor& o) const { return st_ == o.st_; }

 private:
  std::shared_ptr<detail::TensorStorage<S>> st_;
};

/// Per-forward-pass record of executed ops. Ops are recorded only when some
/// input requires a gradient; backward() replays them in exact reverse order
/// and then frees the record. A Graph and its tensors belong to one thread
/// for the duration of a pass.
template <typename S>
class Graph {
 public:
  Graph() = default;
  /// A non-recording graph runs forward math only; nothing is taped and
  /// outputs never require grad. Use for inference/validation passes.
  explicit Graph(bool recording) : recording_(recording) {}

  bool recording() const { return recording_; }

  // ---- primitive set ------------------------------------------------------

  Tensor<S> matmul(Tensor<S> a, Tensor<S> b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
      throw std::invalid_argument("matmul: need [m,k]x[k,n], got " +
                                  shape_str(a) + " x " + shape_str(b));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    detail::MatMap<S>(out.value().data(), m, n).noalias() =
        detail::ConstMatMap<S>(a.value().data(), m, k) *
        detail::ConstMatMap<S>(b.value().data(), k, n);
    return finish("matmul", out, {a, b}, [a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      detail::ConstMatMap<S> go(out.grad().data(), m, n);
      if (a.requires_grad())
        detail::MatMap<S>(a.grad().data(), m, k).noalias() +=
            go * detail::ConstMatMap<S>(b.value().data(), k, n).transpose();
      if (b.requires_grad())
        detail::MatMap<S>(b.grad().data(), k, n).noalias() +=
            detail::ConstMatMap<S>(a.value().data(), m, k).transpose() * go;
    });
  }

  Tensor<S> add(Tensor<S> a, Tensor<S> b) {
    require_same_shape("add", a, b);
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.size();
    const S* av = a.value().data();
    const S* bv = b.value().data();
    S* ov = out.value().data();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
    return finish("add", out, {a, b}, [a, b, out, n]() mutable {
      if (!out.has_grad()) return;
      const S* og = out.grad().data();
      if (a.requires_grad()) {
        S* ag = a.grad().data();
        for (int64_t i = 0; i < n; ++i) ag[i] += og[i];
      }
      if (b.requires_grad()) {
        S* bg = b.grad().data();
        for (int64_t i = 0; i < n; ++i) bg[i] += og[i];
      }
    });
  }

  Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
    require_same_shape("mul", a, b);
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.size();
    const S* av = a.value().data();
    const S* bv = b.value().data();
    S* ov = out.value().data();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
    return finish("mul", out, {a, b}, [a, b, out, n]() mutable {
      if (!out.has_grad()) return;
      const S* og = out.grad().data();
      if (a.requires_grad()) {
        S* ag = a.grad().data();
        const S* bv2 = b.value().data();
        for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * bv2[i];
      }
      if (b.requires_grad()) {
        S* bg = b.grad().data();
        const S* av2 = a.value().data();
        for (int64_t i = 0; i < n; ++i) bg[i] += og[i] * av2[i];
      }
    });
  }

  Tensor<S> tanh(Tensor<S> a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.size();
    const S* av = a.value().data();
    S* ov = out.value().data();
    for (int64_t i = 0; i < n; ++i) ov[i] = std::tanh(av[i]);
    return finish("tanh", out, {a}, [a, out, n]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const S* ov2 = out.value().data();
      const S* og = out.grad().data();
      S* ag = a.grad().data();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * (S(1) - ov2[i] * ov2[i]);
    });
  }

  Tensor<S> sigmoid(Tensor<S> a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.size();
    const S* av = a.value().data();
    S* ov = out.value().data();
    for (int64_t i = 0; i < n; ++i) ov[i] = S(1) / (S(1) + std::exp(-av[i]));
    return finish("sigmoid", out, {a}, [a, out, n]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const S* ov2 = out.value().data();
      const S* og = out.grad().data();
      S* ag = a.grad().data();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * ov2[i] * (S(1) - ov2[i]);
    });
  }

  Tensor<S> relu(Tensor<S> a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.size();
    const S* av = a.value().data();
    S* ov = out.value().data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] > S(0) ? av[i] : S(0);
    return finish("relu", out, {a}, [a, out, n]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const S* ov2 = out.value().data();
      const S* og = out.grad().data();
      S* ag = a.grad().data();
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < n; ++i) ag[i] += ov2[i] > S(0) ? og[i] : S(0);
    });
  }

  Tensor<S> exp(Tensor<S> a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.size();
    const S* av = a.value().data();
    S* ov = out.value().data();
    for (int64_t i = 0; i < n; ++i) ov[i] = std::exp(av[i]);
    return finish("exp", out, {a}, [a, out, n]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const S* ov2 = out.value().data();
      const S* og = out.grad().data();
      S* ag = a.grad().data();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * ov2[i];
    });
  }

  Tensor<S> log(Tensor<S> a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.size();
    const S* av = a.value().data();
    S* ov = out.value().data();
    for (int64_t i = 0; i < n; ++i) ov[i] = std::log(av[i]);
    return finish("log", out, {a}, [a, out, n]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const S* av2 = a.value().data();
      const S* og = out.grad().data();
      S* ag = a.grad().data();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i] / av2[i];
    });
  }

  Tensor<S> concat(std::vector<Tensor<S>> parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const auto& s0 = parts[0].shape();
    check_axis("concat", parts[0], axis);
    int total = 0;
    for (const auto& p : parts) {
      if (p.ndim() != parts[0].ndim())
        throw std::invalid_argument("concat: rank mismatch");
      for (int d = 0; d < p.ndim(); ++d)
        if (d != axis && p.dim(d) != s0[static_cast<size_t>(d)])
          throw std::invalid_argument("concat: shape mismatch off the axis");
      total += p.dim(axis);
    }
    std::vector<int> oshape = s0;
    oshape[static_cast<size_t>(axis)] = total;
    Tensor<S> out = Tensor<S>::zeros(oshape);

    // outer x axis x inner layout
    const int64_t inner = inner_stride(s0, axis);
    const int64_t outer = parts[0].size() / (inner * s0[static_cast<size_t>(axis)]);
    std::vector<int64_t> blocks;  // per-part axis*inner extent
    int64_t off = 0;
    for (const auto& p : parts) {
      const int64_t block = p.dim(axis) * inner;
      blocks.push_back(block);
      for (int64_t o = 0; o < outer; ++o)
        std::copy_n(p.value().data() + o * block, block,
                    out.value().data() + o * total * inner + off);
      off += block;
    }
    bool needs = false;
    for (const auto& p : parts) needs = needs || p.requires_grad();
    return finish_multi(
        "concat", out, needs, [parts, out, blocks, inner, outer, total]() mutable {
          if (!out.has_grad()) return;
          const S* og = out.grad().data();
          int64_t off = 0;
          for (size_t pi = 0; pi < parts.size(); ++pi) {
            const int64_t block = blocks[pi];
            if (parts[pi].requires_grad()) {
              S* pg = parts[pi].grad().data();
              for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < block; ++i)
                  pg[o * block + i] += og[o * total * inner + off + i];
            }
            off += block;
          }
        });
  }

  Tensor<S> slice(Tensor<S> a, int axis, int start, int len) {
    check_axis("slice", a, axis);
    if (start < 0 || len < 1 || start + len > a.dim(axis))
      throw std::invalid_argument("slice: range out of bounds");
    std::vector<int> oshape = a.shape();
    oshape[static_cast<size_t>(axis)] = len;
    Tensor<S> out = Tensor<S>::zeros(oshape);

    const int64_t inner = inner_stride(a.shape(), axis);
    const int64_t outer = a.size() / (inner * a.dim(axis));
    const int64_t in_block = a.dim(axis) * inner;
    const int64_t out_block = len * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(a.value().data() + o * in_block + start * inner, out_block,
                  out.value().data() + o * out_block);
    return finish("slice", out, {a},
                  [a, out, inner, outer, in_block, out_block, start]() mutable {
                    if (!out.has_grad() || !a.requires_grad()) return;
                    const S* og = out.grad().data();
                    S* ag = a.grad().data();
                    for (int64_t o = 0; o < outer; ++o)
                      for (int64_t i = 0; i < out_block; ++i)
                        ag[o * in_block + start * inner + i] += og[o * out_block + i];
                  });
  }

  Tensor<S> reduce_sum(Tensor<S> a) {
    S acc = 0;
    const int64_t n = a.size();
    const S* av = a.value().data();
    for (int64_t i = 0; i < n; ++i) acc += av[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    return finish("reduce_sum", out, {a}, [a, out, n]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const S g = out.grad()[0];
      S* ag = a.grad().data();
      for (int64_t i = 0; i < n; ++i) ag[i] += g;
    });
  }

  /// Subgradient at ties: the first maximal element takes the gradient.
  Tensor<S> reduce_max(Tensor<S> a) {
    int64_t arg = 0;
    for (int64_t i = 1; i < a.size(); ++i)
      if (a.value()[i] > a.value()[arg]) arg = i;
    Tensor<S> out = Tensor<S>::scalar(a.value()[arg]);
    return finish("reduce_max", out, {a}, [a, out, arg]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      a.grad()[arg] += out.grad()[0];
    });
  }

  Tensor<S> transpose(Tensor<S> a) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose: need a 2-D tensor");
    const int r = a.dim(0), c = a.dim(1);
    Tensor<S> out = Tensor<S>::zeros({c, r});
    detail::MatMap<S>(out.value().data(), c, r) =
        detail::ConstMatMap<S>(a.value().data(), r, c).transpose();
    return finish("transpose", out, {a}, [a, out, r, c]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      detail::MatMap<S>(a.grad().data(), r, c) +=
          detail::ConstMatMap<S>(out.grad().data(), c, r).transpose();
    });
  }

  // ---- explicit-shape conveniences the layers are built from --------------

  Tensor<S> scale(Tensor<S> a, S c) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.size();
    const S* av = a.value().data();
    S* ov = out.value().data();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * c;
    return finish("scale", out, {a}, [a, out, c, n]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const S* og = out.grad().data();
      S* ag = a.grad().data();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * c;
    });
  }

  Tensor<S> add_scalar(Tensor<S> a, S c) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.size();
    const S* av = a.value().data();
    S* ov = out.value().data();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + c;
    return finish("add_scalar", out, {a}, [a, out, n]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const S* og = out.grad().data();
      S* ag = a.grad().data();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i];
    });
  }

  Tensor<S> reciprocal(Tensor<S> a) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.size();
    const S* av = a.value().data();
    S* ov = out.value().data();
    for (int64_t i = 0; i < n; ++i) ov[i] = S(1) / av[i];
    return finish("reciprocal", out, {a}, [a, out, n]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const S* ov2 = out.value().data();
      const S* og = out.grad().data();
      S* ag = a.grad().data();
      for (int64_t i = 0; i < n; ++i) ag[i] -= og[i] * ov2[i] * ov2[i];
    });
  }

  /// [r,c] matrix plus a length-c vector added to every row.
  Tensor<S> add_rowvec(Tensor<S> m, Tensor<S> v) {
    if (m.ndim() != 2 || v.ndim() != 1 || v.dim(0) != m.dim(1))
      throw std::invalid_argument("add_rowvec: need [r,c] + [c], got " +
                                  shape_str(m) + " + " + shape_str(v));
    const int r = m.dim(0), c = m.dim(1);
    Tensor<S> out = Tensor<S>::zeros({r, c});
    const S* mv = m.value().data();
    const S* vv = v.value().data();
    S* ov = out.value().data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        ov[static_cast<size_t>(i) * c + j] = mv[static_cast<size_t>(i) * c + j] + vv[j];
    return finish("add_rowvec", out, {m, v}, [m, v, out, r, c]() mutable {
      if (!out.has_grad()) return;
      const S* og = out.grad().data();
      if (m.requires_grad()) {
        S* mg = m.grad().data();
        const int64_t n = m.size();
        for (int64_t i = 0; i < n; ++i) mg[i] += og[i];
      }
      if (v.requires_grad()) {
        S* vg = v.grad().data();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) vg[j] += og[static_cast<size_t>(i) * c + j];
      }
    });
  }

  Tensor<S> reshape(Tensor<S> a, std::vector<int> shape) {
    if (detail::shape_numel(shape) != a.size())
      throw std::invalid_argument("reshape: element count mismatch");
    Tensor<S> out = Tensor<S>::from(std::move(shape), a.value());
    return finish("reshape", out, {a}, [a, out]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const S* og = out.grad().data();
      S* ag = a.grad().data();
      const int64_t n = a.size();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i];
    });
  }

  // ---- extension point for fused layer ops --------------------------------

  /// Registers a fused op: marks the output as gradient-carrying when
  /// needs_grad, records the backward closure, and checks finiteness.
  Tensor<S> adopt(const char* opname, Tensor<S> out, bool needs_grad,
                  std::function<void()> backward_fn) {
    return finish_multi(opname, std::move(out), needs_grad, std::move(backward_fn));
  }

  static bool wants_grad(std::initializer_list<Tensor<S>> inputs) {
    for (const auto& t : inputs)
      if (t.requires_grad()) return true;
    return false;
  }

  // ---- backward ------------------------------------------------------------

  /// Populates gradients of everything reachable from a scalar loss.
  /// Gradients accumulate additively across fan-out. The op record is
  /// consumed; calling backward twice on one graph is an error.
  void backward(Tensor<S> loss) {
    if (!loss.defined() || loss.size() != 1)
      throw std::invalid_argument("Graph::backward: loss must be a scalar");
    if (!loss.requires_grad())
      throw std::invalid_argument("Graph::backward: loss does not require grad");
    if (consumed_)
      throw std::logic_error("Graph::backward: graph already consumed; "
                             "build a new graph for another pass");
    consumed_ = true;
    loss.grad()[0] += S(1);
    while (!nodes_.empty()) {
      nodes_.back()();
      nodes_.pop_back();  // free saved intermediates as we go
    }
    nodes_.shrink_to_fit();
  }

  size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  static std::string shape_str(const Tensor<S>& t) {
    std::string s = "[";
    for (int i = 0; i < t.ndim(); ++i)
      s += (i ? "," : "") + std::to_string(t.dim(i));
    return s + "]";
  }

  static void require_same_shape(const char* op, const Tensor<S>& a,
                                 const Tensor<S>& b) {
    if (a.shape() != b.shape())
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  shape_str(a) + " vs " + shape_str(b));
  }

  static void check_axis(const char* op, const Tensor<S>& t, int axis) {
    if (axis < 0 || axis >= t.ndim())
      throw std::invalid_argument(std::string(op) + ": axis out of range");
  }

  static int64_t inner_stride(const std::vector<int>& shape, int axis) {
    int64_t inner = 1;
    for (size_t d = static_cast<size_t>(axis) + 1; d < shape.size(); ++d)
      inner *= shape[d];
    return inner;
  }

  static void check_finite(const char* op, const Tensor<S>& t) {
    Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> m(t.value().data(),
                                                           t.size());
    if (!m.allFinite())
      throw NumericError(std::string(op) + ": non-finite result");
  }

  Tensor<S> finish(const char* op, Tensor<S> out,
                   std::initializer_list<Tensor<S>> inputs,
                   std::function<void()> bw) {
    return finish_multi(op, std::move(out), wants_grad(inputs), std::move(bw));
  }

  Tensor<S> finish_multi(const char* op, Tensor<S> out, bool needs_grad,
                         std::function<void()> bw) {
    check_finite(op, out);
    if (needs_grad && recording_) {
      out.set_requires_grad(true);
      nodes_.push_back(std::move(bw));
    }
    return out;
  }

  std::vector<std::function<void()>> nodes_;
  bool recording_ = true;
  bool consumed_ = false;
};

}  // namespace lid
