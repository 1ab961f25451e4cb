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

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lid/tensor.hpp"

namespace lid::nn {

/// Index of the row maximum; ties break toward the lowest class index.
template <typename S>
int argmax_lowest(const S* row, int n) {
  int best = 0;
  for (int c = 1; c < n; ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

template <typename S>
void glorot_uniform(Tensor<S>& t, int fan_in, int fan_out, std::mt19937& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> d(-limit, limit);
  for (auto& v : t.value()) v = static_cast<S>(d(rng));
}

enum class Padding { kValid, kSame };

// ---------------------------------------------------------------------------
// 1-D convolution over the time axis (cross-correlation, stride 1)
// ---------------------------------------------------------------------------

template <typename S>
struct Conv1d {
  int kernel_size = 0;
  int in_channels = 0;
  int out_channels = 0;
  Padding padding = Padding::kValid;
  Tensor<S> weights;  // {out, in, kernel}
  Tensor<S> bias;     // {out}

  Conv1d() = default;
  Conv1d(int kernel, int in_ch, int out_ch, Padding pad = Padding::kValid)
      : kernel_size(kernel), in_channels(in_ch), out_channels(out_ch), padding(pad) {
    if (kernel < 1) throw std::invalid_argument("Conv1d: kernel_size must be >= 1");
    weights = Tensor<S>::zeros({out_ch, in_ch, kernel}, true);
    bias = Tensor<S>::zeros({out_ch}, true);
  }

  void init(std::mt19937& rng) {
    glorot_uniform(weights, in_channels * kernel_size, out_channels * kernel_size, rng);
  }

  int out_time(int time) const {
    return padding == Padding::kValid ? time - kernel_size + 1 : time;
  }
};

/// Valid (or explicitly padded) cross-correlation along time, computed as k
/// shifted GEMMs per sample so no im2col buffer is ever materialized.
/// x: {batch, time, in_channels} -> {batch, time', out_channels}.
/// With fuse_relu the ReLU that follows every conv layer is applied in place
/// and its mask folded into the backward pass.
template <typename S>
Tensor<S> conv1d(Graph<S>& g, Tensor<S> x, Conv1d<S>& layer, bool fuse_relu = false) {
  if (x.ndim() != 3 || x.dim(2) != layer.in_channels)
    throw std::invalid_argument("conv1d: expected {batch, time, " +
                                std::to_string(layer.in_channels) + "} input");
  const int batch = x.dim(0), time = x.dim(1);
  const int k = layer.kernel_size, cin = layer.in_channels, cout = layer.out_channels;
  if (layer.padding == Padding::kValid && time < k)
    throw std::invalid_argument("conv1d: input shorter than kernel (" +
                                std::to_string(time) + " < " + std::to_string(k) + ")");

  const int pad_left = layer.padding == Padding::kSame ? (k - 1) / 2 : 0;
  const int pad_total = layer.padding == Padding::kSame ? k - 1 : 0;
  const int tp = time + pad_total;
  const int t_out = tp - k + 1;  // == layer.out_time(time)

  // padded copy only when needed
  Tensor<S> xp = x;
  if (pad_total > 0) {
    xp = Tensor<S>::zeros({batch, tp, cin});
    for (int b = 0; b < batch; ++b)
      std::copy_n(x.value().data() + static_cast<size_t>(b) * time * cin,
                  static_cast<size_t>(time) * cin,
                  xp.value().data() +
                      (static_cast<size_t>(b) * tp + pad_left) * cin);
  }

  // kernel tap j as a {cin, cout} matrix: wk[j][(i, o)] = w[o][i][j]
  Tensor<S> wk = Tensor<S>::zeros({k, cin, cout});
  {
    const S* wv = layer.weights.value().data();
    S* kv = wk.value().data();
    for (int o = 0; o < cout; ++o)
      for (int i = 0; i < cin; ++i)
        for (int j = 0; j < k; ++j)
          kv[(static_cast<size_t>(j) * cin + i) * cout + o] =
              wv[(static_cast<size_t>(o) * cin + i) * k + j];
  }

  Tensor<S> out = Tensor<S>::zeros({batch, t_out, cout});
  for (int b = 0; b < batch; ++b) {
    detail::MatMap<S> out_b(
        out.value().data() + static_cast<size_t>(b) * t_out * cout, t_out, cout);
    for (int j = 0; j < k; ++j) {
      detail::ConstMatMap<S> x_bj(
          xp.value().data() + (static_cast<size_t>(b) * tp + j) * cin, t_out, cin);
      detail::ConstMatMap<S> w_j(
          wk.value().data() + static_cast<size_t>(j) * cin * cout, cin, cout);
      if (j == 0) out_b.noalias() = x_bj * w_j;
      else out_b.noalias() += x_bj * w_j;
    }
  }
  {
    const int64_t rows = static_cast<int64_t>(batch) * t_out;
    S* ov = out.value().data();
    const S* bv = layer.bias.value().data();
    if (fuse_relu) {
#pragma omp parallel for schedule(static)
      for (int64_t r = 0; r < rows; ++r)
        for (int o = 0; o < cout; ++o) {
          const S v = ov[r * cout + o] + bv[o];
          ov[r * cout + o] = v > S(0) ? v : S(0);
        }
    } else {
#pragma omp parallel for schedule(static)
      for (int64_t r = 0; r < rows; ++r)
        for (int o = 0; o < cout; ++o) ov[r * cout + o] += bv[o];
    }
  }

  const bool needs = Graph<S>::wants_grad({x, layer.weights, layer.bias});
  Tensor<S> w = layer.weights, bias = layer.bias;
  return g.adopt("conv1d", out, needs, [=]() mutable {
    if (!out.has_grad()) return;
    const int64_t rows = static_cast<int64_t>(batch) * t_out;

    // fused ReLU folds its mask into the upstream gradient
    Tensor<S> dy_t = out;  // alias: use out.grad() directly when not fused
    if (fuse_relu) {
      dy_t = Tensor<S>::zeros({batch, t_out, cout});
      const S* og = out.grad().data();
      const S* ov = out.value().data();
      S* dv = dy_t.value().data();
      const int64_t n = rows * cout;
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < n; ++i) dv[i] = ov[i] > S(0) ? og[i] : S(0);
    }
    const S* dy = fuse_relu ? dy_t.value().data() : out.grad().data();

    if (bias.requires_grad()) {
      S* bg = bias.grad().data();
      for (int64_t r = 0; r < rows; ++r)
        for (int o = 0; o < cout; ++o) bg[o] += dy[r * cout + o];
    }
    if (w.requires_grad()) {
      Tensor<S> dwk = Tensor<S>::zeros({k, cin, cout});
      for (int b = 0; b < batch; ++b) {
        detail::ConstMatMap<S> dy_b(dy + static_cast<size_t>(b) * t_out * cout,
                                    t_out, cout);
        for (int j = 0; j < k; ++j) {
          detail::ConstMatMap<S> x_bj(
              xp.value().data() + (static_cast<size_t>(b) * tp + j) * cin, t_out, cin);
          detail::MatMap<S> dw_j(
              dwk.value().data() + static_cast<size_t>(j) * cin * cout, cin, cout);
          dw_j.noalias() += x_bj.transpose() * dy_b;
        }
      }
      const S* kv = dwk.value().data();
      S* wg = w.grad().data();
      for (int o = 0; o < cout; ++o)
        for (int i = 0; i < cin; ++i)
          for (int j = 0; j < k; ++j)
            wg[(static_cast<size_t>(o) * cin + i) * k + j] +=
                kv[(static_cast<size_t>(j) * cin + i) * cout + o];
    }
    if (x.requires_grad()) {
      // accumulate straight into the (padded) input gradient
      std::vector<S> dxp_store;
      S* dxp = x.grad().data();
      int64_t row_stride = time;
      if (pad_total > 0) {
        dxp_store.assign(static_cast<size_t>(batch) * tp * cin, S(0));
        dxp = dxp_store.data();
        row_stride = tp;
      }
      for (int b = 0; b < batch; ++b) {
        detail::ConstMatMap<S> dy_b(dy + static_cast<size_t>(b) * t_out * cout,
                                    t_out, cout);
        for (int j = 0; j < k; ++j) {
          detail::MatMap<S> dx_bj(dxp + (static_cast<size_t>(b) * row_stride + j) * cin,
                                  t_out, cin);
          detail::ConstMatMap<S> w_j(
              wk.value().data() + static_cast<size_t>(j) * cin * cout, cin, cout);
          dx_bj.noalias() += dy_b * w_j.transpose();
        }
      }
      if (pad_total > 0) {
        S* xg = x.grad().data();
        for (int b = 0; b < batch; ++b) {
          const S* src = dxp + (static_cast<size_t>(b) * tp + pad_left) * cin;
          S* dst = xg + static_cast<size_t>(b) * time * cin;
          const int64_t n = static_cast<int64_t>(time) * cin;
          for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// max pooling over time
// ---------------------------------------------------------------------------

/// x: {batch, time, channels} -> {batch, floor((time-pool)/stride)+1, channels}.
/// Backward routes the gradient to the first maximal element of each window.
template <typename S>
Tensor<S> maxpool1d(Graph<S>& g, Tensor<S> x, int pool, int stride) {
  if (x.ndim() != 3) throw std::invalid_argument("maxpool1d: expected a 3-D input");
  if (pool < 1 || stride < 1)
    throw std::invalid_argument("maxpool1d: pool and stride must be >= 1");
  const int batch = x.dim(0), time = x.dim(1), ch = x.dim(2);
  if (time < pool)
    throw std::invalid_argument("maxpool1d: time " + std::to_string(time) +
                                " shorter than pool " + std::to_string(pool));
  const int t_out = (time - pool) / stride + 1;

  if (pool > 255) throw std::invalid_argument("maxpool1d: pool size too large");
  Tensor<S> out = Tensor<S>::zeros({batch, t_out, ch});
  auto argmax = std::make_shared<std::vector<uint8_t>>(
      static_cast<size_t>(batch) * t_out * ch);  // offset of the max in its window
  {
    const S* xv = x.value().data();
    S* ov = out.value().data();
    uint8_t* am = argmax->data();
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < t_out; ++t) {
        const size_t in_base = (static_cast<size_t>(b) * time + t * stride) * ch;
        const size_t out_base = (static_cast<size_t>(b) * t_out + t) * ch;
        for (int c = 0; c < ch; ++c) {
          int best = 0;
          S bv = xv[in_base + c];
          for (int j = 1; j < pool; ++j) {
            const S v = xv[in_base + static_cast<size_t>(j) * ch + c];
            if (v > bv) { bv = v; best = j; }
          }
          ov[out_base + c] = bv;
          am[out_base + c] = static_cast<uint8_t>(best);
        }
      }
  }

  return g.adopt("maxpool1d", out, x.requires_grad(), [=]() mutable {
    if (!out.has_grad() || !x.requires_grad()) return;
    const S* og = out.grad().data();
    S* xg = x.grad().data();
    const uint8_t* am = argmax->data();
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < t_out; ++t) {
        const size_t in_base = (static_cast<size_t>(b) * time + t * stride) * ch;
        const size_t out_base = (static_cast<size_t>(b) * t_out + t) * ch;
        for (int c = 0; c < ch; ++c)
          xg[in_base + static_cast<size_t>(am[out_base + c]) * ch + c] +=
              og[out_base + c];
      }
  });
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

template <typename S>
struct Dense {
  int in_dim = 0, out_dim = 0;
  Tensor<S> weights;  // {in, out}
  Tensor<S> bias;     // {out}

  Dense() = default;
  Dense(int in, int out) : in_dim(in), out_dim(out) {
    weights = Tensor<S>::zeros({in, out}, true);
    bias = Tensor<S>::zeros({out}, true);
  }
  void init(std::mt19937& rng) { glorot_uniform(weights, in_dim, out_dim, rng); }
};

template <typename S>
Tensor<S> dense(Graph<S>& g, Tensor<S> x, Dense<S>& layer) {
  return g.add_rowvec(g.matmul(x, layer.weights), layer.bias);
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: surviving activations are scaled by 1/(1-rate).
/// Identity when rate == 0 or in eval mode.
template <typename S>
Tensor<S> dropout(Graph<S>& g, Tensor<S> x, double rate, bool training,
                  std::mt19937& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;

  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  // one 64-bit seed from the caller's stream, then a splitmix64 mask:
  // keep when the draw is >= rate * 2^32, i.e. with probability 1 - rate
  const uint32_t drop_below = static_cast<uint32_t>(rate * 4294967296.0);
  uint64_t s = (static_cast<uint64_t>(rng()) << 32) | rng();
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const int64_t n = x.size();
  auto mask = std::make_shared<std::vector<S>>(static_cast<size_t>(n));
  {
    const S* xv = x.value().data();
    S* ov = out.value().data();
    S* mk = mask->data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      uint64_t z = s + (static_cast<uint64_t>(i) + 1) * 0x9e3779b97f4a7c15ull;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      z ^= z >> 31;
      const S m = static_cast<uint32_t>(z) >= drop_below ? keep_scale : S(0);
      mk[i] = m;
      ov[i] = xv[i] * m;
    }
  }
  return g.adopt("dropout", out, x.requires_grad(), [=]() mutable {
    if (!out.has_grad() || !x.requires_grad()) return;
    const S* og = out.grad().data();
    const S* mk = mask->data();
    S* xg = x.grad().data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) xg[i] += og[i] * mk[i];
  });
}

// ---------------------------------------------------------------------------
// LSTM / bi-directional LSTM
// ---------------------------------------------------------------------------

template <typename S>
struct Lstm {
  int input_dim = 0;
  int units = 0;
  Tensor<S> w;  // {input_dim, 4*units}, gate order i, f, g, o
  Tensor<S> u;  // {units, 4*units} recurrent
  Tensor<S> b;  // {4*units}

  Lstm() = default;
  Lstm(int in_dim, int n_units) : input_dim(in_dim), units(n_units) {
    w = Tensor<S>::zeros({in_dim, 4 * n_units}, true);
    u = Tensor<S>::zeros({n_units, 4 * n_units}, true);
    b = Tensor<S>::zeros({4 * n_units}, true);
  }

  /// Glorot for both kernels, zero bias with the forget gate at 1.
  void init(std::mt19937& rng) {
    glorot_uniform(w, input_dim, 4 * units, rng);
    glorot_uniform(u, units, 4 * units, rng);
    for (int i = units; i < 2 * units; ++i) b.value()[i] = S(1);
  }
};

/// One direction over the sequence. x: {batch, T, input_dim}; the returned
/// {batch, T, units} row t is the hidden state after consuming input t
/// (scanning right-to-left when reverse).
template <typename S>
Tensor<S> lstm_forward(Graph<S>& g, Tensor<S> x, Lstm<S>& cell, bool reverse) {
  if (x.ndim() != 3 || x.dim(2) != cell.input_dim)
    throw std::invalid_argument("lstm: expected {batch, time, " +
                                std::to_string(cell.input_dim) + "} input");
  const int batch = x.dim(0), T = x.dim(1), H = cell.units;

  Tensor<S> h = Tensor<S>::zeros({batch, H});
  Tensor<S> c = Tensor<S>::zeros({batch, H});
  std::vector<Tensor<S>> states(T);
  for (int step = 0; step < T; ++step) {
    const int t = reverse ? T - 1 - step : step;
    Tensor<S> xt = g.reshape(g.slice(x, 1, t, 1), {batch, cell.input_dim});
    Tensor<S> gates = g.add_rowvec(
        g.add(g.matmul(xt, cell.w), g.matmul(h, cell.u)), cell.b);
    Tensor<S> gi = g.sigmoid(g.slice(gates, 1, 0, H));
    Tensor<S> gf = g.sigmoid(g.slice(gates, 1, H, H));
    Tensor<S> gg = g.tanh(g.slice(gates, 1, 2 * H, H));
    Tensor<S> go = g.sigmoid(g.slice(gates, 1, 3 * H, H));
    c = g.add(g.mul(gf, c), g.mul(gi, gg));
    h = g.mul(go, g.tanh(c));
    states[t] = g.reshape(h, {batch, 1, H});
  }
  return g.concat(states, 1);
}

/// Row t = [forward state at t, backward state at t]. {batch,T,F} -> {batch,T,2H}.
template <typename S>
Tensor<S> bilstm(Graph<S>& g, Tensor<S> x, Lstm<S>& fwd, Lstm<S>& bwd) {
  Tensor<S> hf = lstm_forward(g, x, fwd, /*reverse=*/false);
  Tensor<S> hb = lstm_forward(g, x, bwd, /*reverse=*/true);
  return g.concat({hf, hb}, 2);
}

// ---------------------------------------------------------------------------
// additive attention head
// ---------------------------------------------------------------------------

template <typename S>
struct Attention {
  int feature_dim = 0;
  int attn_dim = 0;
  S epsilon = static_cast<S>(1e-7);
  Tensor<S> w;  // {feature_dim, attn_dim}
  Tensor<S> b;  // {attn_dim}
  Tensor<S> u;  // {attn_dim, 1} trainable context weight vector

  Attention() = default;
  Attention(int features, int attn) : feature_dim(features), attn_dim(attn) {
    w = Tensor<S>::zeros({features, attn}, true);
    b = Tensor<S>::zeros({attn}, true);
    u = Tensor<S>::zeros({attn, 1}, true);
  }
  void init(std::mt19937& rng) {
    glorot_uniform(w, feature_dim, attn_dim, rng);
    glorot_uniform(u, attn_dim, 1, rng);
  }
};

/// Row-wise exp-normalization with an epsilon in the denominator:
/// W_t = exp(s_t - m) / (sum_u exp(s_u - m) + eps), m = row max.
/// scores: {batch, T} -> weights {batch, T}.
template <typename S>
Tensor<S> attention_weights(Graph<S>& g, Tensor<S> scores, S epsilon) {
  if (scores.ndim() != 2)
    throw std::invalid_argument("attention_weights: expected {batch, T} scores");
  const int batch = scores.dim(0), T = scores.dim(1);
  Tensor<S> out = Tensor<S>::zeros({batch, T});
  for (int r = 0; r < batch; ++r) {
    const S* s = scores.value().data() + static_cast<size_t>(r) * T;
    S* w = out.value().data() + static_cast<size_t>(r) * T;
    S m = s[0];
    for (int t = 1; t < T; ++t) m = std::max(m, s[t]);
    S denom = epsilon;
    for (int t = 0; t < T; ++t) {
      w[t] = std::exp(s[t] - m);
      denom += w[t];
    }
    for (int t = 0; t < T; ++t) w[t] /= denom;
  }
  return g.adopt("attention_weights", out, scores.requires_grad(), [=]() mutable {
    if (!out.has_grad() || !scores.requires_grad()) return;
    for (int r = 0; r < batch; ++r) {
      const S* w = out.value().data() + static_cast<size_t>(r) * T;
      const S* dw = out.grad().data() + static_cast<size_t>(r) * T;
      S dot = 0;
      for (int t = 0; t < T; ++t) dot += dw[t] * w[t];
      S* ds = scores.grad().data() + static_cast<size_t>(r) * T;
      for (int t = 0; t < T; ++t) ds[t] += w[t] * (dw[t] - dot);
    }
  });
}

/// out[b, f] = sum_t weights[b, t] * a[b, t, f].
template <typename S>
Tensor<S> weighted_time_sum(Graph<S>& g, Tensor<S> a, Tensor<S> weights) {
  if (a.ndim() != 3 || weights.ndim() != 2 || a.dim(0) != weights.dim(0) ||
      a.dim(1) != weights.dim(1))
    throw std::invalid_argument("weighted_time_sum: need {b,T,F} and {b,T}");
  const int batch = a.dim(0), T = a.dim(1), F = a.dim(2);
  Tensor<S> out = Tensor<S>::zeros({batch, F});
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < T; ++t) {
      const S wv = weights.value()[static_cast<size_t>(b) * T + t];
      const S* src = a.value().data() + (static_cast<size_t>(b) * T + t) * F;
      S* dst = out.value().data() + static_cast<size_t>(b) * F;
      for (int f = 0; f < F; ++f) dst[f] += wv * src[f];
    }
  const bool needs = Graph<S>::wants_grad({a, weights});
  return g.adopt("weighted_time_sum", out, needs, [=]() mutable {
    if (!out.has_grad()) return;
    for (int b = 0; b < batch; ++b) {
      const S* go = out.grad().data() + static_cast<size_t>(b) * F;
      for (int t = 0; t < T; ++t) {
        const size_t wi = static_cast<size_t>(b) * T + t;
        const size_t ai = (static_cast<size_t>(b) * T + t) * F;
        if (a.requires_grad()) {
          const S wv = weights.value()[wi];
          for (int f = 0; f < F; ++f) a.grad()[ai + f] += wv * go[f];
        }
        if (weights.requires_grad()) {
          S acc = 0;
          for (int f = 0; f < F; ++f) acc += a.value()[ai + f] * go[f];
          weights.grad()[wi] += acc;
        }
      }
    }
  });
}

/// Scores each timestep with tanh(a_t w + b) . u, normalizes with the
/// epsilon-softmax, and reduces the sequence to its weighted sum.
/// a: {batch, T, F} -> {batch, F}.
template <typename S>
Tensor<S> attention(Graph<S>& g, Tensor<S> a, Attention<S>& head) {
  if (a.ndim() != 3 || a.dim(2) != head.feature_dim)
    throw std::invalid_argument("attention: expected {batch, time, " +
                                std::to_string(head.feature_dim) + "} input");
  const int batch = a.dim(0), T = a.dim(1);
  Tensor<S> flat = g.reshape(a, {batch * T, head.feature_dim});
  Tensor<S> proj = g.tanh(g.add_rowvec(g.matmul(flat, head.w), head.b));
  Tensor<S> scores = g.reshape(g.matmul(proj, head.u), {batch, T});
  Tensor<S> weights = attention_weights(g, scores, head.epsilon);
  return weighted_time_sum(g, a, weights);
}

// ---------------------------------------------------------------------------
// softmax cross-entropy
// ---------------------------------------------------------------------------

/// loss = (1/batch) * sum_i sample_weight_i * (-log softmax(logits_i)[label_i]).
/// sample_weights may be empty (all ones).
template <typename S>
Tensor<S> softmax_cross_entropy(Graph<S>& g, Tensor<S> logits,
                                std::span<const int> labels,
                                std::span<const S> sample_weights = {}) {
  if (logits.ndim() != 2)
    throw std::invalid_argument("softmax_cross_entropy: expected {batch, classes}");
  const int batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int>(labels.size()) != batch)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  if (!sample_weights.empty() && static_cast<int>(sample_weights.size()) != batch)
    throw std::invalid_argument("softmax_cross_entropy: weight count mismatch");
  for (int i = 0; i < batch; ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw std::invalid_argument("softmax_cross_entropy: label " +
                                  std::to_string(labels[i]) + " out of range [0, " +
                                  std::to_string(classes) + ")");

  auto probs = std::make_shared<std::vector<S>>(
      static_cast<size_t>(batch) * classes);
  auto wts = std::make_shared<std::vector<S>>(labels.size(), S(1));
  if (!sample_weights.empty())
    std::copy(sample_weights.begin(), sample_weights.end(), wts->begin());
  auto labs = std::make_shared<std::vector<int>>(labels.begin(), labels.end());

  double total = 0;
  for (int i = 0; i < batch; ++i) {
    const S* row = logits.value().data() + static_cast<size_t>(i) * classes;
    S m = row[0];
    for (int c = 1; c < classes; ++c) m = std::max(m, row[c]);
    double z = 0;
    for (int c = 0; c < classes; ++c) z += std::exp(static_cast<double>(row[c] - m));
    const double log_z = std::log(z) + static_cast<double>(m);
    for (int c = 0; c < classes; ++c)
      (*probs)[static_cast<size_t>(i) * classes + c] =
          static_cast<S>(std::exp(static_cast<double>(row[c]) - log_z));
    total += (*wts)[i] * (log_z - static_cast<double>(row[labels[i]]));
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total / batch));

  return g.adopt("softmax_cross_entropy", out, logits.requires_grad(), [=]() mutable {
    if (!out.has_grad() || !logits.requires_grad()) return;
    const S go = out.grad()[0];
    for (int i = 0; i < batch; ++i) {
      const S scale = go * (*wts)[i] / static_cast<S>(batch);
      S* dst = logits.grad().data() + static_cast<size_t>(i) * classes;
      const S* p = probs->data() + static_cast<size_t>(i) * classes;
      for (int c = 0; c < classes; ++c) dst[c] += scale * p[c];
      dst[(*labs)[i]] -= scale;
    }
  });
}

}  // namespace lid::nn
