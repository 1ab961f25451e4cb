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
//
// lid — spoken-language-identification experiments from the command line.
//
//   lid synth    synthesize a labelled toy corpus
//   lid extract  batch MFCC extraction into a feature cache
//   lid train    train a classifier on a manifest
//   lid eval     score a checkpoint on the test split
//   lid report   render a report JSON as markdown/csv
//   lid sweep    kernel-size sweep harness
//
// Exit codes: 0 success, 1 runtime/I-O failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lid/data.hpp"
#include "lid/dsp.hpp"
#include "lid/eval.hpp"
#include "lid/models.hpp"
#include "lid/nn.hpp"
#include "lid/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// run configuration: JSON file merged with (and overridden by) flags
// ---------------------------------------------------------------------------

struct RunConfig {
  lid::dsp::MfccConfig mfcc;
  lid::train::TrainConfig train;
  std::string arch = "crnn-attn";
  std::string manifest;
  std::string out;
  std::string features;           // cache dir; default <out>/features
  std::string noise = "none";     // "none" or "white:<snr_db>"
  uint64_t noise_seed = 0;
  std::vector<std::string> cluster;
  int balance_per_class = 0;      // 0 = off
  std::vector<std::pair<int, int>> conv_spec = {{3, 512}, {3, 512}, {3, 256}, {3, 128}};
  std::string conv_padding = "valid";
  int lstm_units = 256;
  int pool_size = 3;
  int pool_stride = 3;
};

void apply_json_config(const fs::path& path, RunConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path.string());
  json j = json::parse(is);

  static const std::set<std::string> known = {
      "arch", "manifest", "out", "features", "noise", "noise_seed", "cluster",
      "balance_per_class", "conv_spec", "conv_padding", "lstm_units", "pool",
      "mfcc", "epochs", "batch_size", "seed", "dropout", "l2_weight",
      "warmup_steps", "d_model", "beta1", "beta2", "adam_epsilon",
      "class_weighting"};
  static const std::set<std::string> known_mfcc = {
      "pre_emphasis", "f_size", "f_stride", "nfft", "lf", "nfilt", "ncoef",
      "lifter", "target_frames"};
  for (const auto& [key, val] : j.items())
    if (!known.count(key))
      throw std::invalid_argument("config: unknown key '" + key + "'");

  if (j.contains("arch")) cfg.arch = j["arch"].get<std::string>();
  if (j.contains("manifest")) cfg.manifest = j["manifest"].get<std::string>();
  if (j.contains("out")) cfg.out = j["out"].get<std::string>();
  if (j.contains("features")) cfg.features = j["features"].get<std::string>();
  if (j.contains("noise")) cfg.noise = j["noise"].get<std::string>();
  if (j.contains("noise_seed")) cfg.noise_seed = j["noise_seed"].get<uint64_t>();
  if (j.contains("cluster")) cfg.cluster = j["cluster"].get<std::vector<std::string>>();
  if (j.contains("balance_per_class"))
    cfg.balance_per_class = j["balance_per_class"].get<int>();
  if (j.contains("conv_spec")) {
    cfg.conv_spec.clear();
    for (const auto& kf : j["conv_spec"])
      cfg.conv_spec.emplace_back(kf.at(0).get<int>(), kf.at(1).get<int>());
  }
  if (j.contains("conv_padding")) cfg.conv_padding = j["conv_padding"].get<std::string>();
  if (j.contains("lstm_units")) cfg.lstm_units = j["lstm_units"].get<int>();
  if (j.contains("pool")) {
    cfg.pool_size = j["pool"].at(0).get<int>();
    cfg.pool_stride = j["pool"].at(1).get<int>();
  }
  if (j.contains("mfcc")) {
    for (const auto& [key, val] : j["mfcc"].items())
      if (!known_mfcc.count(key))
        throw std::invalid_argument("config: unknown mfcc key '" + key + "'");
    auto& m = j["mfcc"];
    if (m.contains("pre_emphasis")) cfg.mfcc.pre_emphasis = m["pre_emphasis"].get<double>();
    if (m.contains("f_size")) cfg.mfcc.f_size = m["f_size"].get<double>();
    if (m.contains("f_stride")) cfg.mfcc.f_stride = m["f_stride"].get<double>();
    if (m.contains("nfft")) cfg.mfcc.nfft = m["nfft"].get<int>();
    if (m.contains("lf")) cfg.mfcc.lf = m["lf"].get<double>();
    if (m.contains("nfilt")) cfg.mfcc.nfilt = m["nfilt"].get<int>();
    if (m.contains("ncoef")) cfg.mfcc.ncoef = m["ncoef"].get<int>();
    if (m.contains("lifter")) cfg.mfcc.lifter = m["lifter"].get<int>();
    if (m.contains("target_frames")) cfg.mfcc.target_frames = m["target_frames"].get<int>();
  }
  if (j.contains("epochs")) cfg.train.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) cfg.train.batch_size = j["batch_size"].get<int>();
  if (j.contains("seed")) cfg.train.seed = j["seed"].get<uint64_t>();
  if (j.contains("dropout")) cfg.train.dropout = j["dropout"].get<double>();
  if (j.contains("l2_weight")) cfg.train.l2_weight = j["l2_weight"].get<double>();
  if (j.contains("warmup_steps")) cfg.train.warmup_steps = j["warmup_steps"].get<int>();
  if (j.contains("d_model")) cfg.train.d_model = j["d_model"].get<int>();
  if (j.contains("beta1")) cfg.train.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) cfg.train.beta2 = j["beta2"].get<double>();
  if (j.contains("adam_epsilon")) cfg.train.adam_epsilon = j["adam_epsilon"].get<double>();
  if (j.contains("class_weighting")) {
    const auto s = j["class_weighting"].get<std::string>();
    if (s == "balanced") cfg.train.class_weighting = lid::train::ClassWeighting::kBalanced;
    else if (s == "none") cfg.train.class_weighting = lid::train::ClassWeighting::kNone;
    else throw std::invalid_argument("config: class_weighting must be balanced|none");
  }
}

lid::data::NoiseSpec parse_noise(const std::string& s) {
  if (s == "none" || s.empty()) return lid::data::NoiseSpec::disabled();
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  if (kind != "white")
    throw std::invalid_argument("noise: only 'white:<snr_db>' or 'none' supported");
  lid::data::NoiseSpec spec;
  spec.kind = lid::data::NoiseSpec::Kind::kWhite;
  spec.snr_db = colon == std::string::npos ? 10.0 : std::stod(s.substr(colon + 1));
  return spec;
}

int parse_balance(const std::string& s) {
  // "manual:<per_class>"
  if (s.rfind("manual:", 0) != 0)
    throw std::invalid_argument("balance: expected manual:<per_class>");
  return std::stoi(s.substr(7));
}

lid::models::Architecture make_architecture(const RunConfig& cfg, int n_classes) {
  lid::models::Architecture arch;
  const auto tag = lid::models::arch_from_name(cfg.arch);
  if (!tag) throw std::invalid_argument("arch: expected cnn|crnn|crnn-attn");
  arch.tag = *tag;
  arch.conv_spec = cfg.conv_spec;
  arch.pool_size = cfg.pool_size;
  arch.pool_stride = cfg.pool_stride;
  arch.lstm_units = cfg.lstm_units;
  arch.n_classes = n_classes;
  arch.input_frames = cfg.mfcc.target_frames;
  arch.input_coeffs = cfg.mfcc.ncoef;
  if (cfg.conv_padding == "valid") arch.conv_padding = lid::nn::Padding::kValid;
  else if (cfg.conv_padding == "same") arch.conv_padding = lid::nn::Padding::kSame;
  else throw std::invalid_argument("conv_padding: expected valid|same");
  return arch;
}

// feature cache path mirrors the clip's path relative to the manifest
fs::path cache_path_for(const fs::path& cache_dir, const std::string& entry_path) {
  fs::path rel(entry_path);
  rel.replace_extension(".mfc");
  if (rel.is_absolute()) rel = rel.filename();
  return cache_dir / rel;
}

lid::dsp::FeatureMatrix<float> load_or_extract(const lid::data::ManifestEntry& e,
                                               const fs::path& manifest_path,
                                               const fs::path& cache_dir,
                                               const lid::dsp::MfccConfig& mfcc) {
  const auto cached = cache_path_for(cache_dir, e.path);
  if (fs::exists(cached)) return lid::dsp::read_feature_cache(cached);
  const auto clip = lid::data::load_wav(lid::data::resolve_entry_path(manifest_path, e));
  auto fm = lid::dsp::compute_mfcc<float>(clip, mfcc);
  fs::create_directories(cached.parent_path());
  lid::dsp::write_feature_cache(cached, fm);
  return fm;
}

struct LoadedSplits {
  lid::train::FeatureDataset<float> train, val, test;
  std::vector<std::string> labels;
};

LoadedSplits load_splits(const std::vector<lid::data::ManifestEntry>& entries,
                         const fs::path& manifest_path, const fs::path& cache_dir,
                         const lid::dsp::MfccConfig& mfcc) {
  LoadedSplits out;
  out.labels = lid::data::label_set(entries);
  const int k = static_cast<int>(out.labels.size());
  out.train.n_classes = out.val.n_classes = out.test.n_classes = k;
  auto class_of = [&](const std::string& label) {
    return static_cast<int>(
        std::find(out.labels.begin(), out.labels.end(), label) - out.labels.begin());
  };
  for (const auto& e : entries) {
    lid::train::FeatureDataset<float>* ds = nullptr;
    if (e.split == lid::data::Split::kTrain) ds = &out.train;
    else if (e.split == lid::data::Split::kVal) ds = &out.val;
    else if (e.split == lid::data::Split::kTest) ds = &out.test;
    else continue;
    ds->features.push_back(load_or_extract(e, manifest_path, cache_dir, mfcc));
    ds->labels.push_back(class_of(e.label));
  }
  return out;
}

json mfcc_to_json(const lid::dsp::MfccConfig& m) {
  return {{"pre_emphasis", m.pre_emphasis}, {"f_size", m.f_size},
          {"f_stride", m.f_stride},         {"nfft", m.nfft},
          {"lf", m.lf},                     {"nfilt", m.nfilt},
          {"ncoef", m.ncoef},               {"lifter", m.lifter},
          {"target_frames", m.target_frames}};
}

lid::dsp::MfccConfig mfcc_from_json(const json& j) {
  lid::dsp::MfccConfig m;
  m.pre_emphasis = j.at("pre_emphasis").get<double>();
  m.f_size = j.at("f_size").get<double>();
  m.f_stride = j.at("f_stride").get<double>();
  m.nfft = j.at("nfft").get<int>();
  m.lf = j.at("lf").get<double>();
  m.nfilt = j.at("nfilt").get<int>();
  m.ncoef = j.at("ncoef").get<int>();
  m.lifter = j.at("lifter").get<int>();
  m.target_frames = j.at("target_frames").get<int>();
  return m;
}

// applies split assignment (if needed), cluster filtering and manual
// balancing; writes the resolved manifest under out/
std::vector<lid::data::ManifestEntry> prepare_entries(const RunConfig& cfg,
                                                      const fs::path& out_dir) {
  auto entries = lid::data::read_manifest(cfg.manifest);
  bool unassigned = false;
  for (const auto& e : entries)
    unassigned = unassigned || e.split == lid::data::Split::kUnassigned;
  if (unassigned) {
    lid::data::split_dataset(entries, {0.8, 0.1, 0.1}, cfg.train.seed, &std::cerr);
    // keep entry paths valid relative to the new manifest location
    const auto base = fs::absolute(fs::path(cfg.manifest)).parent_path();
    auto resolved = entries;
    for (auto& e : resolved)
      if (!fs::path(e.path).is_absolute()) e.path = (base / e.path).string();
    lid::data::write_manifest(out_dir / "manifest_split.csv", resolved);
  }
  if (!cfg.cluster.empty()) entries = lid::eval::cluster_filter(entries, cfg.cluster);
  if (cfg.balance_per_class > 0)
    entries = lid::data::balance_manual(entries, cfg.balance_per_class, cfg.train.seed);
  return entries;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_synth(int classes, int per_class, int sr, uint64_t seed, const std::string& out) {
  if (classes < 2) throw std::invalid_argument("synth: need >= 2 classes");
  auto manifest = lid::data::synth_toy_corpus(classes, per_class, sr, seed, out);
  std::cout << "synth: wrote " << manifest.size() << " clips under " << out
            << " (manifest.csv included)\n";
  return 0;
}

int cmd_extract(const RunConfig& cfg, bool force) {
  if (cfg.manifest.empty()) throw std::invalid_argument("extract: --manifest is required");
  if (cfg.out.empty()) throw std::invalid_argument("extract: --out is required");
  const fs::path manifest_path(cfg.manifest);
  const fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);

  auto entries = lid::data::read_manifest(manifest_path);
  int written = 0, skipped = 0;
  std::vector<std::string> failures(entries.size());

#pragma omp parallel for schedule(dynamic) reduction(+ : written, skipped)
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    try {
      const auto cached = cache_path_for(out_dir, e.path);
      if (!force && fs::exists(cached)) {
        ++skipped;
        continue;
      }
      const auto clip =
          lid::data::load_wav(lid::data::resolve_entry_path(manifest_path, e));
      const auto fm = lid::dsp::compute_mfcc<float>(clip, cfg.mfcc);
      fs::create_directories(cached.parent_path());
      lid::dsp::write_feature_cache(cached, fm);
      ++written;
    } catch (const std::exception& ex) {
      failures[i] = e.path + ": " + ex.what();
    }
  }

  int failed = 0;
  for (const auto& f : failures)
    if (!f.empty()) {
      ++failed;
      std::cerr << "extract: " << f << "\n";
    }
  std::cout << "extract: wrote " << written << ", skipped " << skipped
            << ", failed " << failed << "\n";
  return failed > 0 ? 1 : 0;
}

int cmd_train(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw std::invalid_argument("train: --manifest is required");
  if (cfg.out.empty()) throw std::invalid_argument("train: --out is required");
  const fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);
  const fs::path cache_dir = cfg.features.empty() ? out_dir / "features"
                                                  : fs::path(cfg.features);

  auto entries = prepare_entries(cfg, out_dir);
  auto splits = load_splits(entries, cfg.manifest, cache_dir, cfg.mfcc);
  std::cout << "train: " << splits.train.size() << " train / " << splits.val.size()
            << " val / " << splits.test.size() << " test clips, "
            << splits.labels.size() << " classes\n";

  auto arch = make_architecture(cfg, static_cast<int>(splits.labels.size()));
  auto model = lid::models::Model<float>::build(arch, cfg.train.seed);

  std::ofstream log_stream(out_dir / "train_log.jsonl", std::ios::trunc);
  auto result = lid::train::fit(model, splits.train, splits.val, cfg.train, &log_stream);

  const auto ckpt_path = out_dir / "model.lidm";
  lid::models::save_checkpoint(result.best, ckpt_path);
  json sidecar = {{"labels", splits.labels}, {"mfcc", mfcc_to_json(cfg.mfcc)},
                  {"arch", cfg.arch}};
  std::ofstream(ckpt_path.string() + ".labels.json") << sidecar.dump(2) << "\n";

  double best_acc = 0;
  for (const auto& e : result.log) best_acc = std::max(best_acc, e.val_accuracy);
  std::cout << "train: wrote " << ckpt_path << " (best val accuracy "
            << best_acc << ")\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
  if (cfg.manifest.empty()) throw std::invalid_argument("eval: --manifest is required");
  if (checkpoint.empty()) throw std::invalid_argument("eval: --checkpoint is required");
  if (cfg.out.empty()) throw std::invalid_argument("eval: --out is required");
  const fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);

  auto model = lid::models::load_checkpoint(checkpoint);
  const fs::path sidecar_path = checkpoint + ".labels.json";
  if (!fs::exists(sidecar_path))
    throw std::runtime_error("eval: missing label sidecar " + sidecar_path.string());
  std::ifstream sidecar_stream(sidecar_path);
  json sidecar = json::parse(sidecar_stream);
  auto labels = sidecar.at("labels").get<std::vector<std::string>>();
  lid::dsp::MfccConfig mfcc =
      sidecar.contains("mfcc") ? mfcc_from_json(sidecar["mfcc"]) : cfg.mfcc;

  auto entries = lid::data::read_manifest(cfg.manifest);
  if (!cfg.cluster.empty()) entries = lid::eval::cluster_filter(entries, cfg.cluster);
  std::vector<lid::data::ManifestEntry> test;
  for (const auto& e : entries)
    if (e.split == lid::data::Split::kTest) test.push_back(e);
  if (test.empty()) throw std::invalid_argument("eval: manifest has no test split");

  const auto noise = parse_noise(cfg.noise);
  auto report = lid::eval::evaluate(model, test, cfg.manifest, labels, mfcc, noise,
                                    cfg.noise_seed);

  const auto report_path = out_dir / "report.json";
  std::ofstream(report_path) << lid::eval::report_to_json(report).dump(2) << "\n";
  std::cout << "eval: " << test.size() << " clips, accuracy " << report.accuracy
            << (noise.is_disabled() ? " (no noise)"
                                    : " (white noise, " + std::to_string(noise.snr_db) +
                                          " dB SNR)")
            << "; wrote " << report_path << "\n";
  return 0;
}

int cmd_report(const std::string& in, const std::string& format,
               const std::string& out) {
  std::ifstream is(in);
  if (!is) throw std::runtime_error("report: cannot open " + in);
  auto report = lid::eval::report_from_json(json::parse(is));

  std::string rendered;
  if (format == "markdown") rendered = lid::eval::render_markdown(report);
  else if (format == "csv") rendered = lid::eval::render_csv(report);
  else if (format == "json") rendered = lid::eval::report_to_json(report).dump(2) + "\n";
  else throw std::invalid_argument("report: format must be markdown|csv|json");

  if (out.empty()) {
    std::cout << rendered;
  } else {
    std::ofstream os(out, std::ios::trunc);
    os << rendered;
    std::cout << "report: wrote " << out << "\n";
  }
  return 0;
}

int cmd_sweep(RunConfig cfg, const std::vector<int>& kernels) {
  if (cfg.manifest.empty()) throw std::invalid_argument("sweep: --manifest is required");
  if (cfg.out.empty()) throw std::invalid_argument("sweep: --out is required");
  const fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);
  const fs::path cache_dir = cfg.features.empty() ? out_dir / "features"
                                                  : fs::path(cfg.features);

  // large kernels exhaust the valid-padding time axis, so the sweep runs
  // every kernel with same padding for a like-for-like comparison
  cfg.conv_padding = "same";

  auto entries = prepare_entries(cfg, out_dir);
  auto splits = load_splits(entries, cfg.manifest, cache_dir, cfg.mfcc);

  json table = json::array();
  std::ostringstream md;
  md << "| kernel size | test accuracy |\n|---|---|\n";
  for (int k : kernels) {
    RunConfig kcfg = cfg;
    kcfg.conv_spec.clear();
    for (auto [unused_k, filters] : cfg.conv_spec)
      kcfg.conv_spec.emplace_back(k, filters);

    auto arch = make_architecture(kcfg, static_cast<int>(splits.labels.size()));
    auto model = lid::models::Model<float>::build(arch, cfg.train.seed);
    const auto run_dir = out_dir / ("k" + std::to_string(k));
    fs::create_directories(run_dir);
    std::ofstream log_stream(run_dir / "train_log.jsonl", std::ios::trunc);
    auto result = lid::train::fit(model, splits.train, splits.val, cfg.train, &log_stream);
    lid::models::save_checkpoint(result.best, run_dir / "model.lidm");

    auto report = lid::eval::evaluate_features(result.best, splits.test, splits.labels,
                                               cfg.train.batch_size);
    std::ofstream(run_dir / "report.json")
        << lid::eval::report_to_json(report).dump(2) << "\n";
    table.push_back({{"kernel", k}, {"accuracy", report.accuracy}});
    md << "| " << k << " | " << lid::eval::detail::fixed(report.accuracy, 4) << " |\n";
    std::cout << "sweep: kernel " << k << " -> accuracy " << report.accuracy << "\n";
  }

  std::ofstream(out_dir / "kernel_sweep.json") << table.dump(2) << "\n";
  std::ofstream(out_dir / "kernel_sweep.md") << md.str();
  std::cout << "sweep: wrote " << (out_dir / "kernel_sweep.json") << " and .md\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // keep big tensor buffers on the free list instead of mmap/munmap churn
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
#endif

  CLI::App app{"spoken-language-identification toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  RunConfig cfg;
  std::string config_path, checkpoint, balance, report_in, report_out;
  std::string report_format = "markdown";
  std::string kernels_csv = "3,7,17,32,65";
  std::string cluster_csv;
  int classes = 4, per_class = 200, sr = 16000;
  bool force = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; flags override it");
    sub->add_option("--out", cfg.out, "output directory");
  };
  auto add_mfcc = [&](CLI::App* sub) {
    sub->add_option("--nfft", cfg.mfcc.nfft, "FFT size (power of two)");
    sub->add_option("--nfilt", cfg.mfcc.nfilt, "mel filter count");
    sub->add_option("--ncoef", cfg.mfcc.ncoef, "cepstral coefficients kept");
    sub->add_option("--lifter", cfg.mfcc.lifter, "cepstral lifter");
    sub->add_option("--frames", cfg.mfcc.target_frames, "network input rows");
  };
  auto add_train_flags = [&](CLI::App* sub) {
    sub->add_option("--manifest", cfg.manifest, "manifest CSV");
    sub->add_option("--features", cfg.features, "feature cache dir");
    sub->add_option("--arch", cfg.arch, "cnn|crnn|crnn-attn");
    sub->add_option("--epochs", cfg.train.epochs, "training epochs");
    sub->add_option("--batch", cfg.train.batch_size, "batch size");
    sub->add_option("--seed", cfg.train.seed, "run seed");
    sub->add_option("--dropout", cfg.train.dropout, "dropout rate");
    sub->add_option("--warmup", cfg.train.warmup_steps, "warmup steps");
    sub->add_option("--balance", balance, "manual:<per_class> training cap");
    sub->add_option("--cluster", cluster_csv, "comma-separated label subset");
    sub->add_option("--class-weighting", [&cfg](const std::vector<std::string>& v) {
      if (v[0] == "balanced") cfg.train.class_weighting = lid::train::ClassWeighting::kBalanced;
      else if (v[0] == "none") cfg.train.class_weighting = lid::train::ClassWeighting::kNone;
      else return false;
      return true;
    }, "balanced|none");
  };

  auto* synth = app.add_subcommand("synth", "synthesize a labelled toy corpus");
  synth->add_option("--classes", classes, "number of classes (2..16)");
  synth->add_option("--per-class", per_class, "clips per class");
  synth->add_option("--sr", sr, "sample rate, Hz");
  synth->add_option("--seed", cfg.train.seed, "generator seed");
  synth->add_option("--out", cfg.out, "output directory")->required();

  auto* extract = app.add_subcommand("extract", "batch MFCC extraction");
  add_common(extract);
  add_mfcc(extract);
  extract->add_option("--manifest", cfg.manifest, "manifest CSV")->required();
  extract->add_flag("--force", force, "recompute even when a cache file exists");

  auto* train_cmd = app.add_subcommand("train", "train a classifier");
  add_common(train_cmd);
  add_mfcc(train_cmd);
  add_train_flags(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the test split");
  add_common(eval_cmd);
  eval_cmd->add_option("--manifest", cfg.manifest, "manifest CSV with assigned splits");
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint (.lidm)");
  eval_cmd->add_option("--noise", cfg.noise, "none or white:<snr_db>");
  eval_cmd->add_option("--noise-seed", cfg.noise_seed, "noise generator seed");
  eval_cmd->add_option("--cluster", cluster_csv, "comma-separated label subset");

  auto* report_cmd = app.add_subcommand("report", "render a report JSON");
  report_cmd->add_option("--in", report_in, "report.json from eval")->required();
  report_cmd->add_option("--format", report_format, "markdown|csv|json");
  report_cmd->add_option("--out", report_out, "output file (stdout when omitted)");

  auto* sweep = app.add_subcommand("sweep", "kernel-size sweep harness");
  add_common(sweep);
  add_mfcc(sweep);
  add_train_flags(sweep);
  sweep->add_option("--kernels", kernels_csv, "comma-separated kernel sizes");

  // pre-scan for --config so flags parsed below override file values
  try {
    for (int i = 1; i < argc - 1; ++i)
      if (std::string(argv[i]) == "--config") apply_json_config(argv[i + 1], cfg);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!cluster_csv.empty()) {
      cfg.cluster.clear();
      std::stringstream ss(cluster_csv);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) cfg.cluster.push_back(item);
    }
    if (!balance.empty()) cfg.balance_per_class = parse_balance(balance);

    if (synth->parsed()) return cmd_synth(classes, per_class, sr, cfg.train.seed, cfg.out);
    if (extract->parsed()) return cmd_extract(cfg, force);
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (eval_cmd->parsed()) return cmd_eval(cfg, checkpoint);
    if (report_cmd->parsed()) return cmd_report(report_in, report_format, report_out);
    if (sweep->parsed()) {
      std::vector<int> kernels;
      std::stringstream ss(kernels_csv);
      std::string item;
      while (std::getline(ss, item, ',')) kernels.push_back(std::stoi(item));
      if (kernels.empty()) throw std::invalid_argument("sweep: no kernels given");
      return cmd_sweep(cfg, kernels);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
