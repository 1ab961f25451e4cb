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
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lid/dsp.hpp"
#include "lid/errors.hpp"

namespace lid::data {

enum class Gender : char { kF = 'F', kM = 'M', kU = 'U' };
enum class Split { kTrain, kVal, kTest, kUnassigned };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "?";
}

struct ManifestEntry {
  std::string path;  // as written in the manifest; resolve against its dir
  std::string label;
  Gender gender = Gender::kU;
  Split split = Split::kUnassigned;

  bool operator==(const ManifestEntry&) const = default;
};

// ---------------------------------------------------------------------------
// WAV (RIFF PCM16 mono) read/write
// ---------------------------------------------------------------------------

/// Reads a 16-bit PCM mono RIFF/WAVE file; samples scaled to [-1, 1] by
/// 1/32768. Anything else (float/ADPCM encodings, stereo, truncation) is a
/// FormatError with the offending byte offset.
inline dsp::AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());

  size_t pos = 0;
  auto read_n = [&](void* dst, size_t n, const char* what) {
    if (!is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n)))
      throw FormatError("wav: truncated while reading " + std::string(what),
                        pos + static_cast<size_t>(std::max<std::streamsize>(
                                  is.gcount(), 0)));
    pos += n;
  };

  char tag[4];
  read_n(tag, 4, "RIFF tag");
  if (std::memcmp(tag, "RIFF", 4) != 0) throw FormatError("wav: not a RIFF file", 0);
  uint32_t riff_size = 0;
  read_n(&riff_size, 4, "RIFF size");
  read_n(tag, 4, "WAVE tag");
  if (std::memcmp(tag, "WAVE", 4) != 0) throw FormatError("wav: not a WAVE file", 8);

  bool have_fmt = false;
  uint16_t audio_format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  dsp::AudioClip clip;

  while (is.peek() != EOF) {
    char id[4];
    read_n(id, 4, "chunk id");
    uint32_t size = 0;
    read_n(&size, 4, "chunk size");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      const size_t fmt_at = pos;
      if (size < 16) throw FormatError("wav: fmt chunk too small", fmt_at);
      std::vector<char> fmt(size);
      read_n(fmt.data(), size, "fmt chunk");
      std::memcpy(&audio_format, fmt.data() + 0, 2);
      std::memcpy(&channels, fmt.data() + 2, 2);
      std::memcpy(&sample_rate, fmt.data() + 4, 4);
      std::memcpy(&bits, fmt.data() + 14, 2);
      if (audio_format != 1)
        throw FormatError("wav: not PCM (format " + std::to_string(audio_format) + ")",
                          fmt_at);
      if (channels != 1)
        throw FormatError("wav: expected mono, got " + std::to_string(channels) +
                          " channels", fmt_at + 2);
      if (bits != 16)
        throw FormatError("wav: expected 16-bit samples, got " + std::to_string(bits),
                          fmt_at + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt", pos - 8);
      if (size % 2 != 0) throw FormatError("wav: odd data size", pos - 4);
      std::vector<int16_t> raw(size / 2);
      read_n(raw.data(), size, "data chunk");
      clip.sample_rate = static_cast<int>(sample_rate);
      clip.samples.resize(raw.size());
      for (size_t i = 0; i < raw.size(); ++i)
        clip.samples[i] = static_cast<float>(raw[i]) / 32768.0f;
      return clip;
    } else {
      // skip unknown chunks (LIST, fact, ...)
      is.seekg(size + (size & 1), std::ios::cur);
      if (!is) throw FormatError("wav: truncated chunk body", pos);
      pos += size + (size & 1);
    }
  }
  throw FormatError("wav: no data chunk", pos);
}

/// Writes a 16-bit PCM mono RIFF/WAVE file. Samples are clamped to [-1, 1]
/// and quantized by 32768.
inline void save_wav(const std::filesystem::path& path, const dsp::AudioClip& clip) {
  if (clip.samples.empty() || clip.sample_rate <= 0)
    throw std::invalid_argument("save_wav: empty clip or bad sample rate");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());

  const uint32_t data_size = static_cast<uint32_t>(clip.samples.size() * 2);
  const uint32_t riff_size = 36 + data_size;
  const uint32_t sr = static_cast<uint32_t>(clip.sample_rate);
  const uint32_t byte_rate = sr * 2;
  const uint16_t block_align = 2, channels = 1, bits = 16, pcm = 1;
  const uint32_t fmt_size = 16;

  os.write("RIFF", 4);
  os.write(reinterpret_cast<const char*>(&riff_size), 4);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  os.write(reinterpret_cast<const char*>(&fmt_size), 4);
  os.write(reinterpret_cast<const char*>(&pcm), 2);
  os.write(reinterpret_cast<const char*>(&channels), 2);
  os.write(reinterpret_cast<const char*>(&sr), 4);
  os.write(reinterpret_cast<const char*>(&byte_rate), 4);
  os.write(reinterpret_cast<const char*>(&block_align), 2);
  os.write(reinterpret_cast<const char*>(&bits), 2);
  os.write("data", 4);
  os.write(reinterpret_cast<const char*>(&data_size), 4);
  for (float s : clip.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    const int32_t q = static_cast<int32_t>(std::lround(c * 32768.0f));
    const int16_t v = static_cast<int16_t>(std::clamp(q, -32768, 32767));
    os.write(reinterpret_cast<const char*>(&v), 2);
  }
  if (!os) throw std::runtime_error("short write: " + path.string());
}

// ---------------------------------------------------------------------------
// manifest CSV: header "path,label,gender,split", UTF-8, LF line endings
// ---------------------------------------------------------------------------

inline void write_manifest(const std::filesystem::path& path,
                           std::span<const ManifestEntry> entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  os << "path,label,gender,split\n";
  for (const auto& e : entries)
    os << e.path << ',' << e.label << ',' << static_cast<char>(e.gender) << ','
       << split_name(e.split) << '\n';
}

/// check_paths verifies each entry's file exists, resolving relative paths
/// against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path,
                                                bool check_paths = true) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "path,label,gender,split")
    throw FormatError("manifest: missing or bad header in " + path.string(), 0);

  std::vector<ManifestEntry> entries;
  const auto base = path.parent_path();
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<std::string, 4> fields;
    size_t start = 0;
    for (int f = 0; f < 3; ++f) {
      const size_t comma = line.find(',', start);
      if (comma == std::string::npos)
        throw FormatError("manifest: line " + std::to_string(lineno) +
                          " needs 4 fields", 0);
      fields[static_cast<size_t>(f)] = line.substr(start, comma - start);
      start = comma + 1;
    }
    fields[3] = line.substr(start);

    ManifestEntry e;
    e.path = fields[0];
    e.label = fields[1];
    if (fields[2] == "F") e.gender = Gender::kF;
    else if (fields[2] == "M") e.gender = Gender::kM;
    else if (fields[2] == "U") e.gender = Gender::kU;
    else throw FormatError("manifest: line " + std::to_string(lineno) +
                           " has bad gender '" + fields[2] + "'", 0);
    if (fields[3] == "train") e.split = Split::kTrain;
    else if (fields[3] == "val") e.split = Split::kVal;
    else if (fields[3] == "test") e.split = Split::kTest;
    else if (fields[3] == "unassigned") e.split = Split::kUnassigned;
    else throw FormatError("manifest: line " + std::to_string(lineno) +
                           " has bad split '" + fields[3] + "'", 0);

    if (check_paths) {
      const std::filesystem::path p(e.path);
      const auto resolved = p.is_absolute() ? p : base / p;
      if (!std::filesystem::exists(resolved))
        throw std::runtime_error("manifest: missing file " + resolved.string() +
                                 " (line " + std::to_string(lineno) + ")");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::filesystem::path resolve_entry_path(
    const std::filesystem::path& manifest_path, const ManifestEntry& e) {
  const std::filesystem::path p(e.path);
  return p.is_absolute() ? p : manifest_path.parent_path() / p;
}

/// Sorted unique labels of a manifest; index order defines class ids.
inline std::vector<std::string> label_set(std::span<const ManifestEntry> entries) {
  std::vector<std::string> labels;
  for (const auto& e : entries) labels.push_back(e.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

// ---------------------------------------------------------------------------
// stratified splitting
// ---------------------------------------------------------------------------

/// Assigns train/val/test per (label, gender) group with a seeded shuffle.
/// Remainders go to train; groups smaller than 3 go entirely to train with a
/// warning.
inline void split_dataset(std::vector<ManifestEntry>& entries,
                          std::array<double, 3> ratios, uint64_t seed,
                          std::ostream* warnings = nullptr) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split_dataset: ratios must sum to 1");
  if (ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw std::invalid_argument("split_dataset: ratios must be non-negative");

  std::map<std::pair<std::string, char>, std::vector<size_t>> groups;
  for (size_t i = 0; i < entries.size(); ++i)
    groups[{entries[i].label, static_cast<char>(entries[i].gender)}].push_back(i);

  std::mt19937_64 rng(seed);
  for (auto& [key, idx] : groups) {  // std::map: deterministic key order
    std::shuffle(idx.begin(), idx.end(), rng);
    const size_t n = idx.size();
    if (n < 3) {
      if (warnings)
        (*warnings) << "split_dataset: group (" << key.first << ", " << key.second
                    << ") has only " << n << " entries; all assigned to train\n";
      for (size_t i : idx) entries[i].split = Split::kTrain;
      continue;
    }
    const size_t n_val = static_cast<size_t>(std::floor(ratios[1] * static_cast<double>(n)));
    const size_t n_test = static_cast<size_t>(std::floor(ratios[2] * static_cast<double>(n)));
    for (size_t j = 0; j < n; ++j) {
      if (j < n_val) entries[idx[j]].split = Split::kVal;
      else if (j < n_val + n_test) entries[idx[j]].split = Split::kTest;
      else entries[idx[j]].split = Split::kTrain;
    }
  }
}

// ---------------------------------------------------------------------------
// manual balancing
// ---------------------------------------------------------------------------

/// Keeps exactly per_class seeded-random training entries per class;
/// val/test entries pass through untouched.
inline std::vector<ManifestEntry> balance_manual(std::span<const ManifestEntry> entries,
                                                 int per_class, uint64_t seed) {
  if (per_class < 1)
    throw std::invalid_argument("balance_manual: per_class must be >= 1");

  std::map<std::string, std::vector<size_t>> train_by_class;
  std::vector<ManifestEntry> out;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == Split::kTrain)
      train_by_class[entries[i].label].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<bool> keep(entries.size(), true);
  for (auto& [label, idx] : train_by_class) {
    if (static_cast<int>(idx.size()) < per_class)
      throw std::invalid_argument("balance_manual: class '" + label + "' has only " +
                                  std::to_string(idx.size()) +
                                  " training entries, need " +
                                  std::to_string(per_class));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (size_t j = static_cast<size_t>(per_class); j < idx.size(); ++j)
      keep[idx[j]] = false;
  }
  for (size_t i = 0; i < entries.size(); ++i)
    if (keep[i]) out.push_back(entries[i]);
  return out;
}

// ---------------------------------------------------------------------------
// white-noise augmentation
// ---------------------------------------------------------------------------

struct NoiseSpec {
  enum class Kind { kWhite } kind = Kind::kWhite;
  double snr_db = 10.0;

  static NoiseSpec disabled() {
    return {Kind::kWhite, std::numeric_limits<double>::infinity()};
  }
  bool is_disabled() const { return std::isinf(snr_db) && snr_db > 0; }
};

/// Zero-mean Gaussian noise at P_noise = P_signal / 10^(snr/10); output
/// clamped to [-1, 1]. Infinite snr_db passes the clip through; silent clips
/// pass through with a warning (SNR undefined).
inline dsp::AudioClip add_white_noise(const dsp::AudioClip& clip, const NoiseSpec& spec,
                                      uint64_t seed, std::ostream* warnings = nullptr) {
  if (!std::isfinite(spec.snr_db)) {
    if (spec.is_disabled()) return clip;
    throw std::invalid_argument("add_white_noise: snr_db must be finite or +inf");
  }
  double power = 0;
  for (float s : clip.samples) power += static_cast<double>(s) * s;
  power /= static_cast<double>(clip.samples.size());
  if (power == 0.0) {
    if (warnings) (*warnings) << "add_white_noise: silent clip passed through\n";
    return clip;
  }

  const double noise_power = power / std::pow(10.0, spec.snr_db / 10.0);
  const double sigma = std::sqrt(noise_power);
  std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
  std::normal_distribution<double> gauss(0.0, sigma);
  dsp::AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.resize(clip.samples.size());
  for (size_t i = 0; i < clip.samples.size(); ++i)
    out.samples[i] = std::clamp(
        clip.samples[i] + static_cast<float>(gauss(rng)), -1.0f, 1.0f);
  return out;
}

// ---------------------------------------------------------------------------
// synthetic toy corpus
// ---------------------------------------------------------------------------

/// Per-class spectral recipe: fundamental range, harmonic count and rolloff,
/// AM rate, and a narrowband noise center, all distinct across classes.
struct ClassRecipe {
  double f0 = 0;          // Hz, center of the fundamental range
  int harmonics = 0;
  double rolloff = 1.0;   // harmonic amplitude ~ h^-rolloff
  double am_rate = 0;     // Hz
  double noise_frac = 0;  // band center as a fraction of the sample rate
};

inline ClassRecipe class_recipe(int cls, int sample_rate) {
  ClassRecipe r;
  r.f0 = std::min(110.0 * std::pow(2.0, 0.30 * cls), 0.18 * sample_rate);
  r.harmonics = 2 + (cls % 5) * 2;
  r.rolloff = 0.8 + 0.15 * (cls % 4);
  r.am_rate = 1.7 + 0.9 * cls;
  r.noise_frac = 0.055 + 0.024 * cls;  // <= 0.415 for 16 classes
  return r;
}

/// Emits per_class WAV clips of 1-3 s for each of n_classes labels
/// (c00, c01, ...) under out_dir/<label>/<index>.wav, plus manifest.csv.
/// Returns the manifest entries (paths relative to out_dir).
inline std::vector<ManifestEntry> synth_toy_corpus(
    int n_classes, int per_class, int sample_rate, uint64_t seed,
    const std::filesystem::path& out_dir) {
  if (n_classes < 2 || n_classes > 16)
    throw std::invalid_argument("synth_toy_corpus: n_classes must be in [2, 16]");
  if (per_class < 1)
    throw std::invalid_argument("synth_toy_corpus: per_class must be >= 1");
  if (sample_rate < 8000)
    throw std::invalid_argument("synth_toy_corpus: sample_rate must be >= 8000");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("synth_toy_corpus: cannot create " +
                                   out_dir.string() + ": " + ec.message());

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dur(1.0, 3.0);
  std::uniform_real_distribution<double> jitter(0.95, 1.05);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> band(-0.07, 0.07);

  std::vector<ManifestEntry> manifest;
  for (int cls = 0; cls < n_classes; ++cls) {
    char label[8];
    std::snprintf(label, sizeof label, "c%02d", cls);
    const auto cls_dir = out_dir / label;
    std::filesystem::create_directories(cls_dir, ec);
    if (ec) throw std::runtime_error("synth_toy_corpus: cannot create " +
                                     cls_dir.string() + ": " + ec.message());
    const ClassRecipe r = class_recipe(cls, sample_rate);

    for (int i = 0; i < per_class; ++i) {
      const int n = static_cast<int>(dur(rng) * sample_rate);
      const double f0 = r.f0 * jitter(rng);
      const double am_phase = phase(rng);

      std::vector<double> hphase(static_cast<size_t>(r.harmonics));
      for (auto& p : hphase) p = phase(rng);

      // narrowband noise: a handful of random sines around the band center
      const double nb_center = r.noise_frac * sample_rate;
      std::array<double, 12> nb_freq{}, nb_phase{};
      for (size_t j = 0; j < nb_freq.size(); ++j) {
        nb_freq[j] = nb_center * (1.0 + band(rng));
        nb_phase[j] = phase(rng);
      }

      dsp::AudioClip clip;
      clip.sample_rate = sample_rate;
      clip.samples.resize(static_cast<size_t>(n));
      double peak = 1e-9;
      std::vector<double> buf(static_cast<size_t>(n));
      for (int t = 0; t < n; ++t) {
        const double tt = static_cast<double>(t) / sample_rate;
        double v = 0;
        for (int h = 1; h <= r.harmonics; ++h)
          v += std::pow(h, -r.rolloff) *
               std::sin(2.0 * std::numbers::pi * f0 * h * tt +
                        hphase[static_cast<size_t>(h - 1)]);
        const double am = 1.0 + 0.35 * std::sin(2.0 * std::numbers::pi * r.am_rate * tt +
                                                am_phase);
        v *= am;
        double nb = 0;
        for (size_t j = 0; j < nb_freq.size(); ++j)
          nb += std::sin(2.0 * std::numbers::pi * nb_freq[j] * tt + nb_phase[j]);
        v += 0.22 * nb / static_cast<double>(nb_freq.size());
        buf[static_cast<size_t>(t)] = v;
        peak = std::max(peak, std::abs(v));
      }
      const double scale = 0.5 / peak;
      double rms = 0;
      for (int t = 0; t < n; ++t) rms += buf[static_cast<size_t>(t)] * buf[static_cast<size_t>(t)];
      rms = std::sqrt(rms / n) * scale;
      // broadband floor ~26 dB below the signal, as real recordings have;
      // keeps every mel band off the log-energy floor
      std::normal_distribution<double> floor_noise(0.0, rms * 0.05);
      for (int t = 0; t < n; ++t)
        clip.samples[static_cast<size_t>(t)] = static_cast<float>(std::clamp(
            buf[static_cast<size_t>(t)] * scale + floor_noise(rng), -1.0, 1.0));

      char fname[16];
      std::snprintf(fname, sizeof fname, "%04d.wav", i);
      save_wav(cls_dir / fname, clip);
      ManifestEntry e;
      e.path = std::string(label) + "/" + fname;
      e.label = label;
      e.gender = Gender::kU;
      manifest.push_back(std::move(e));
    }
  }
  write_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

}  // namespace lid::data
