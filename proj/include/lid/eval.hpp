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
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lid/data.hpp"
#include "lid/dsp.hpp"
#include "lid/nn.hpp"
#include "lid/tensor.hpp"
#include "lid/train.hpp"

namespace lid::eval {

/// K x K count matrix, rows = actual class, columns = predicted class.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<int64_t> counts;  // row-major K*K

  int k() const { return static_cast<int>(labels.size()); }
  int64_t at(int actual, int predicted) const {
    return counts[static_cast<size_t>(actual) * labels.size() + predicted];
  }
  int64_t& at(int actual, int predicted) {
    return counts[static_cast<size_t>(actual) * labels.size() + predicted];
  }
  int64_t row_sum(int actual) const {
    int64_t s = 0;
    for (int j = 0; j < k(); ++j) s += at(actual, j);
    return s;
  }
  int64_t col_sum(int predicted) const {
    int64_t s = 0;
    for (int i = 0; i < k(); ++i) s += at(i, predicted);
    return s;
  }
  int64_t total() const {
    int64_t s = 0;
    for (int64_t c : counts) s += c;
    return s;
  }
  int64_t trace() const {
    int64_t s = 0;
    for (int i = 0; i < k(); ++i) s += at(i, i);
    return s;
  }
};

/// counts[i][j] = #{actual = i and predicted = j}, by class index.
inline ConfusionMatrix confusion(std::vector<std::string> class_labels,
                                 std::span<const int> actual,
                                 std::span<const int> predicted) {
  if (actual.size() != predicted.size())
    throw std::invalid_argument("confusion: actual/predicted length mismatch");
  if (class_labels.empty()) throw std::invalid_argument("confusion: no classes");
  ConfusionMatrix cm;
  cm.labels = std::move(class_labels);
  cm.counts.assign(cm.labels.size() * cm.labels.size(), 0);
  const int k = cm.k();
  for (size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] < 0 || actual[i] >= k || predicted[i] < 0 || predicted[i] >= k)
      throw std::invalid_argument("confusion: label index out of range at row " +
                                  std::to_string(i));
    ++cm.at(actual[i], predicted[i]);
  }
  return cm;
}

/// String-labelled overload; unknown labels are rejected.
inline ConfusionMatrix confusion(std::vector<std::string> class_labels,
                                 std::span<const std::string> actual,
                                 std::span<const std::string> predicted) {
  auto index_of = [&](const std::string& s) {
    const auto it = std::find(class_labels.begin(), class_labels.end(), s);
    if (it == class_labels.end())
      throw std::invalid_argument("confusion: unknown label '" + s + "'");
    return static_cast<int>(it - class_labels.begin());
  };
  std::vector<int> a, p;
  for (const auto& s : actual) a.push_back(index_of(s));
  for (const auto& s : predicted) p.push_back(index_of(s));
  return confusion(std::move(class_labels), a, p);
}

/// Per-class PPV/TPR/F1 plus pooled accuracy. A zero denominator yields 0
/// and raises the matching flag.
struct EvalReport {
  ConfusionMatrix confusion;
  std::vector<double> ppv, tpr, f1;
  std::vector<bool> ppv_zero_div, tpr_zero_div, f1_zero_div;
  double accuracy = 0;
  int rounding = 3;  // decimal places used for display
};

inline EvalReport metrics(const ConfusionMatrix& cm) {
  const int64_t total = cm.total();
  if (cm.k() == 0 || total == 0)
    throw std::invalid_argument("metrics: empty confusion matrix");
  EvalReport r;
  r.confusion = cm;
  const int k = cm.k();
  r.ppv.resize(k);
  r.tpr.resize(k);
  r.f1.resize(k);
  r.ppv_zero_div.assign(k, false);
  r.tpr_zero_div.assign(k, false);
  r.f1_zero_div.assign(k, false);
  for (int c = 0; c < k; ++c) {
    const int64_t col = cm.col_sum(c), row = cm.row_sum(c);
    const double diag = static_cast<double>(cm.at(c, c));
    if (col == 0) r.ppv_zero_div[c] = true;
    else r.ppv[c] = diag / static_cast<double>(col);
    if (row == 0) r.tpr_zero_div[c] = true;
    else r.tpr[c] = diag / static_cast<double>(row);
    const double denom = r.ppv[c] + r.tpr[c];
    if (denom == 0) r.f1_zero_div[c] = true;
    else r.f1[c] = 2.0 * r.ppv[c] * r.tpr[c] / denom;
  }
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  return r;
}

// ---------------------------------------------------------------------------
// evaluation over datasets
// ---------------------------------------------------------------------------

/// Core protocol on precomputed features: argmax predictions (ties toward
/// the lowest class index), confusion, metrics. ModelT only needs
/// forward(Graph<float>&, Tensor<float>) -> logits.
template <typename ModelT>
EvalReport evaluate_features(ModelT& model, const train::FeatureDataset<float>& ds,
                             std::vector<std::string> class_labels,
                             int batch_size = 64) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  if (static_cast<int>(class_labels.size()) != ds.n_classes)
    throw std::invalid_argument("evaluate: label list does not match dataset");
  const int k = ds.n_classes;

  std::vector<int> actual, predicted;
  std::vector<size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(batch_size)) {
    const size_t n = std::min(idx.size() - at, static_cast<size_t>(batch_size));
    Graph<float> g(false);
    Tensor<float> x = train::stack_features(ds, {idx.data() + at, n});
    Tensor<float> logits = model.forward(g, x);
    if (logits.ndim() != 2 || logits.dim(0) != static_cast<int>(n) ||
        logits.dim(1) != k)
      throw std::invalid_argument("evaluate: model emitted logits of width " +
                                  std::to_string(logits.dim(1)) + ", expected " +
                                  std::to_string(k));
    for (size_t b = 0; b < n; ++b) {
      actual.push_back(ds.labels[idx[at + b]]);
      predicted.push_back(nn::argmax_lowest(
          logits.value().data() + b * static_cast<size_t>(k), k));
    }
  }
  return metrics(confusion(std::move(class_labels), actual, predicted));
}

/// Full protocol from audio: loads each test clip, optionally injects noise
/// before feature extraction, extracts MFCCs, and scores the model.
/// model_labels must cover exactly the labels present in the entries.
template <typename ModelT>
EvalReport evaluate(ModelT& model, std::span<const data::ManifestEntry> entries,
                    const std::filesystem::path& manifest_path,
                    std::vector<std::string> model_labels,
                    const dsp::MfccConfig& mfcc_cfg,
                    const data::NoiseSpec& noise = data::NoiseSpec::disabled(),
                    uint64_t noise_seed = 0, int batch_size = 64) {
  if (entries.empty()) throw std::invalid_argument("evaluate: empty test set");

  // the manifest's label set must match the model's label list
  std::set<std::string> present;
  for (const auto& e : entries) present.insert(e.label);
  std::set<std::string> known(model_labels.begin(), model_labels.end());
  std::string missing_in_model, missing_in_data;
  for (const auto& l : present)
    if (!known.count(l)) missing_in_model += (missing_in_model.empty() ? "" : ", ") + l;
  for (const auto& l : known)
    if (!present.count(l)) missing_in_data += (missing_in_data.empty() ? "" : ", ") + l;
  if (!missing_in_model.empty() || !missing_in_data.empty()) {
    std::string msg = "evaluate: label-set mismatch";
    if (!missing_in_model.empty()) msg += "; not known to the model: " + missing_in_model;
    if (!missing_in_data.empty()) msg += "; absent from the test set: " + missing_in_data;
    throw std::invalid_argument(msg);
  }

  train::FeatureDataset<float> ds;
  ds.n_classes = static_cast<int>(model_labels.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    auto clip = data::load_wav(data::resolve_entry_path(manifest_path, e));
    if (!noise.is_disabled())
      clip = data::add_white_noise(clip, noise, noise_seed + i);
    ds.features.push_back(dsp::compute_mfcc<float>(clip, mfcc_cfg));
    const auto it = std::find(model_labels.begin(), model_labels.end(), e.label);
    ds.labels.push_back(static_cast<int>(it - model_labels.begin()));
  }
  return evaluate_features(model, ds, std::move(model_labels), batch_size);
}

/// Keeps only entries whose label is in the cluster. The downstream model
/// must be retrained with n_classes = |cluster|.
inline std::vector<data::ManifestEntry> cluster_filter(
    std::span<const data::ManifestEntry> entries,
    std::span<const std::string> cluster) {
  if (cluster.empty()) throw std::invalid_argument("cluster_filter: empty cluster");
  if (cluster.size() < 2)
    throw std::invalid_argument(
        "cluster_filter: single-class classification is undefined");
  const std::set<std::string> keep(cluster.begin(), cluster.end());
  std::vector<data::ManifestEntry> out;
  for (const auto& e : entries)
    if (keep.count(e.label)) out.push_back(e);
  if (out.empty())
    throw std::invalid_argument("cluster_filter: no entries match the cluster");
  return out;
}

// ---------------------------------------------------------------------------
// report serialization: JSON (lossless), Markdown and CSV renderers
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json counts = nlohmann::json::array();
  for (int i = 0; i < r.confusion.k(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < r.confusion.k(); ++j) row.push_back(r.confusion.at(i, j));
    counts.push_back(std::move(row));
  }
  return {{"labels", r.confusion.labels}, {"counts", counts},
          {"ppv", r.ppv},                 {"tpr", r.tpr},
          {"f1", r.f1},                   {"accuracy", r.accuracy}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  ConfusionMatrix cm;
  cm.labels = j.at("labels").get<std::vector<std::string>>();
  const auto& counts = j.at("counts");
  if (counts.size() != cm.labels.size())
    throw FormatError("report: counts/labels size mismatch", 0);
  for (const auto& row : counts) {
    if (row.size() != cm.labels.size())
      throw FormatError("report: ragged counts matrix", 0);
    for (const auto& v : row) cm.counts.push_back(v.get<int64_t>());
  }
  EvalReport r = metrics(cm);
  // keep the stored metric vectors (they round-trip bit-exactly)
  r.ppv = j.at("ppv").get<std::vector<double>>();
  r.tpr = j.at("tpr").get<std::vector<double>>();
  r.f1 = j.at("f1").get<std::vector<double>>();
  r.accuracy = j.at("accuracy").get<double>();
  return r;
}

namespace detail {

inline std::string fixed(double v, int places) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(places) << v;
  return os.str();
}

}  // namespace detail

/// Confusion matrix in the usual orientation (rows actual, columns
/// predicted) with per-class PPV/TPR/F1 columns and the pooled accuracy.
inline std::string render_markdown(const EvalReport& r) {
  const int k = r.confusion.k();
  std::ostringstream os;
  os << "| actual \\ predicted |";
  for (const auto& l : r.confusion.labels) os << ' ' << l << " |";
  os << " PPV | TPR | F1 |\n|---|";
  for (int j = 0; j < k + 3; ++j) os << "---|";
  os << '\n';
  for (int i = 0; i < k; ++i) {
    os << "| **" << r.confusion.labels[i] << "** |";
    for (int j = 0; j < k; ++j) os << ' ' << r.confusion.at(i, j) << " |";
    os << ' ' << detail::fixed(r.ppv[i], r.rounding) << " | "
       << detail::fixed(r.tpr[i], r.rounding) << " | "
       << detail::fixed(r.f1[i], r.rounding) << " |\n";
  }
  os << "\nAccuracy: " << detail::fixed(r.accuracy, r.rounding) << "\n";
  bool any_flag = false;
  for (int c = 0; c < k; ++c)
    any_flag = any_flag || r.ppv_zero_div[c] || r.tpr_zero_div[c] || r.f1_zero_div[c];
  if (any_flag) os << "\nNote: metrics with an empty denominator are shown as 0.\n";
  return os.str();
}

inline std::string render_csv(const EvalReport& r) {
  const int k = r.confusion.k();
  std::ostringstream os;
  os << "actual";
  for (const auto& l : r.confusion.labels) os << ',' << l;
  os << ",ppv,tpr,f1\n";
  for (int i = 0; i < k; ++i) {
    os << r.confusion.labels[i];
    for (int j = 0; j < k; ++j) os << ',' << r.confusion.at(i, j);
    os << ',' << detail::fixed(r.ppv[i], r.rounding) << ','
       << detail::fixed(r.tpr[i], r.rounding) << ','
       << detail::fixed(r.f1[i], r.rounding) << '\n';
  }
  os << "accuracy," << detail::fixed(r.accuracy, r.rounding) << "\n";
  return os.str();
}

}  // namespace lid::eval
