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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lid/dsp.hpp"
#include "lid/models.hpp"
#include "lid/nn.hpp"
#include "lid/tensor.hpp"

namespace lid::train {

enum class ClassWeighting { kBalanced, kNone };

/// The training recipe constants: Adam moments, warmup schedule geometry,
/// L2 weight, dropout, batch size.
struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_epsilon = 1e-9;
  int warmup_steps = 4000;
  int d_model = 128;
  double l2_weight = 1e-6;
  double dropout = 0.1;
  int batch_size = 64;
  int epochs = 30;
  uint64_t seed = 0;
  ClassWeighting class_weighting = ClassWeighting::kBalanced;

  double peak_lr() const { return 0.05 / std::sqrt(static_cast<double>(d_model)); }

  void validate() const {
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw std::invalid_argument("TrainConfig: betas must be in (0, 1)");
    if (adam_epsilon <= 0 || l2_weight < 0)
      throw std::invalid_argument("TrainConfig: bad epsilon/l2");
    if (warmup_steps < 1 || d_model < 1 || batch_size < 1 || epochs < 0)
      throw std::invalid_argument("TrainConfig: bad sizes");
    if (dropout < 0 || dropout >= 1)
      throw std::invalid_argument("TrainConfig: dropout must be in [0, 1)");
  }
};

/// Linear warmup to the peak, inverse-square-root decay after:
/// lr = peak * min(step/warmup, sqrt(warmup/step)). Continuous at the joint.
inline double lr_at(int64_t step, const TrainConfig& cfg) {
  if (step < 1) throw std::invalid_argument("lr_at: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.peak_lr() * std::min(s / w, std::sqrt(w / s));
}

/// The "balanced" rule: w_c = N / (K * n_c).
inline std::vector<double> class_weights(std::span<const int64_t> counts) {
  if (counts.empty()) throw std::invalid_argument("class_weights: no classes");
  int64_t total = 0;
  for (size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 1)
      throw std::invalid_argument("class_weights: class " + std::to_string(c) +
                                  " has no samples");
    total += counts[c];
  }
  std::vector<double> w(counts.size());
  for (size_t c = 0; c < counts.size(); ++c)
    w[c] = static_cast<double>(total) /
           (static_cast<double>(counts.size()) * static_cast<double>(counts[c]));
  return w;
}

/// Per-parameter Adam moment buffers. Aligned with the owning model's
/// named_parameters() order.
template <typename S>
struct OptimizerState {
  std::vector<std::vector<S>> m, v;
  int64_t step = 0;

  template <typename Params>
  static OptimizerState init(const Params& params) {
    OptimizerState st;
    for (const auto& [name, t] : params) {
      st.m.emplace_back(t.value().size(), S(0));
      st.v.emplace_back(t.value().size(), S(0));
    }
    return st;
  }
};

/// One bias-corrected Adam update. The L2 term 2*l2_weight*param joins each
/// gradient before the moment update. Raises NumericError naming the
/// parameter when a gradient is non-finite.
template <typename S>
void adam_step(std::vector<std::pair<std::string, Tensor<S>>>& params,
               OptimizerState<S>& state, double lr, const TrainConfig& cfg) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state does not match parameters");
  state.step += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, p] = params[pi];
    auto& val = p.value();
    auto& grad = p.grad();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    if (m.size() != val.size())
      throw std::invalid_argument("adam_step: moment shape mismatch in '" + name + "'");
    for (size_t i = 0; i < val.size(); ++i) {
      const double g = static_cast<double>(grad[i]) +
                       2.0 * cfg.l2_weight * static_cast<double>(val[i]);
      if (!std::isfinite(g))
        throw NumericError("adam_step: non-finite gradient in parameter '" +
                           name + "'");
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      val[i] = static_cast<S>(val[i] - lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon));
    }
  }
}

/// Precomputed features with integer class labels.
template <typename S>
struct FeatureDataset {
  std::vector<dsp::FeatureMatrix<S>> features;
  std::vector<int> labels;
  int n_classes = 0;

  size_t size() const { return features.size(); }

  std::vector<int64_t> label_counts() const {
    std::vector<int64_t> counts(n_classes, 0);
    for (int y : labels) {
      if (y < 0 || y >= n_classes)
        throw std::invalid_argument("FeatureDataset: label out of range");
      ++counts[static_cast<size_t>(y)];
    }
    return counts;
  }
};

/// Copies feature rows into a {batch, frames, coeffs} tensor.
template <typename S>
Tensor<S> stack_features(const FeatureDataset<S>& ds, std::span<const size_t> idx) {
  const auto& f0 = ds.features.at(idx[0]);
  Tensor<S> x = Tensor<S>::zeros({static_cast<int>(idx.size()), f0.rows, f0.cols});
  const size_t stride = static_cast<size_t>(f0.rows) * f0.cols;
  for (size_t b = 0; b < idx.size(); ++b) {
    const auto& f = ds.features.at(idx[b]);
    if (f.rows != f0.rows || f.cols != f0.cols)
      throw std::invalid_argument("stack_features: inconsistent feature shapes");
    std::copy(f.values.begin(), f.values.end(), x.value().begin() + b * stride);
  }
  return x;
}

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  double lr_last = 0;
  double seconds = 0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},         {"train_loss", train_loss},
            {"val_loss", val_loss},   {"val_accuracy", val_accuracy},
            {"lr_last", lr_last},     {"seconds", seconds}};
  }
};

template <typename S>
struct TrainResult {
  models::Model<S> best;  // highest validation accuracy seen
  std::vector<EpochLog> log;
};

/// Loss and accuracy of an eval-mode pass over a dataset.
template <typename S>
std::pair<double, double> evaluate_loss(models::Model<S>& model,
                                        const FeatureDataset<S>& ds,
                                        int batch_size) {
  double loss_sum = 0;
  int64_t correct = 0;
  std::vector<size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(batch_size)) {
    const size_t n = std::min(idx.size() - at, static_cast<size_t>(batch_size));
    std::span<const size_t> batch(idx.data() + at, n);
    Graph<S> g(false);
    Tensor<S> x = stack_features(ds, batch);
    Tensor<S> logits = model.forward(g, x);
    std::vector<int> labels(n);
    for (size_t b = 0; b < n; ++b) labels[b] = ds.labels[batch[b]];
    loss_sum += nn::softmax_cross_entropy<S>(g, logits, labels).item() *
                static_cast<double>(n);
    for (size_t b = 0; b < n; ++b) {
      const int pred = nn::argmax_lowest(
          logits.value().data() + b * static_cast<size_t>(model.arch.n_classes),
          model.arch.n_classes);
      if (pred == labels[b]) ++correct;
    }
  }
  return {loss_sum / static_cast<double>(ds.size()),
          static_cast<double>(correct) / static_cast<double>(ds.size())};
}

/// The full recipe: seeded shuffling, class-weighted cross-entropy, dropout,
/// Adam with the warmup schedule, per-epoch validation. Updates the model in
/// place and returns the best-validation checkpoint plus the epoch log.
/// Writes one JSON log line per epoch to live_log when given.
template <typename S>
TrainResult<S> fit(models::Model<S>& model, const FeatureDataset<S>& train_set,
                   const FeatureDataset<S>& val_set, const TrainConfig& cfg,
                   std::ostream* live_log = nullptr) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0)
    throw std::invalid_argument("fit: empty dataset");
  if (train_set.n_classes != model.arch.n_classes)
    throw std::invalid_argument("fit: dataset class count does not match model");

  const std::vector<int64_t> counts = train_set.label_counts();
  for (size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0)
      throw std::invalid_argument("fit: class " + std::to_string(c) +
                                  " has no training samples");
  std::vector<double> weights(counts.size(), 1.0);
  if (cfg.class_weighting == ClassWeighting::kBalanced)
    weights = class_weights(counts);

  TrainResult<S> result{model.clone(), {}};
  if (cfg.epochs == 0) return result;

  auto params = model.named_parameters();
  OptimizerState<S> state = OptimizerState<S>::init(params);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937 dropout_rng(static_cast<uint32_t>(cfg.seed ^ 0x9e3779b97f4a7c15ull));

  double best_acc = -1.0;
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0;
    double lr = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t n = std::min(order.size() - at, static_cast<size_t>(cfg.batch_size));
      std::span<const size_t> batch(order.data() + at, n);

      Graph<S> g;
      Tensor<S> x = stack_features(train_set, batch);
      Tensor<S> logits = model.forward(g, x, /*training=*/true, cfg.dropout,
                                       &dropout_rng);
      std::vector<int> labels(n);
      std::vector<S> sw(n);
      for (size_t b = 0; b < n; ++b) {
        labels[b] = train_set.labels[batch[b]];
        sw[b] = static_cast<S>(weights[static_cast<size_t>(labels[b])]);
      }
      Tensor<S> loss = nn::softmax_cross_entropy<S>(g, logits, labels, sw);
      loss_sum += loss.item() * static_cast<double>(n);

      for (auto& [name, p] : params) p.zero_grad();
      g.backward(loss);
      lr = lr_at(state.step + 1, cfg);
      adam_step(params, state, lr, cfg);
    }

    auto [val_loss, val_acc] = evaluate_loss(model, val_set, cfg.batch_size);
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(train_set.size());
    entry.val_loss = val_loss;
    entry.val_accuracy = val_acc;
    entry.lr_last = lr;
    entry.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(entry);
    if (live_log) (*live_log) << entry.to_json().dump() << "\n" << std::flush;

    if (val_acc > best_acc) {
      best_acc = val_acc;
      model.step = static_cast<uint64_t>(state.step);
      result.best = model.clone();
    }
  }
  model.step = static_cast<uint64_t>(state.step);
  return result;
}

}  // namespace lid::train
