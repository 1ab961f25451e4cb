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

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lid/data.hpp"
#include "lid/dsp.hpp"
#include "oracles.hpp"

using namespace lid;
using namespace lid::data;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
  auto dir = fs::temp_directory_path() / "lid_data_test";
  fs::create_directories(dir);
  return dir;
}

// depth-2 decision tree on one scalar: best threshold, then best threshold
// on each side, majority class per leaf
double stump2_accuracy(std::vector<std::pair<double, int>> pts) {
  std::sort(pts.begin(), pts.end());
  const int n = static_cast<int>(pts.size());
  std::vector<int> ones(static_cast<size_t>(n) + 1, 0);  // prefix count of label 1
  for (int i = 0; i < n; ++i) ones[i + 1] = ones[i] + pts[i].second;

  // best depth-1 correct count on [l, r)
  auto best1 = [&](int l, int r) {
    int best = 0;
    for (int k = l; k <= r; ++k) {
      const int ones_left = ones[k] - ones[l];
      const int zeros_left = (k - l) - ones_left;
      const int ones_right = ones[r] - ones[k];
      const int zeros_right = (r - k) - ones_right;
      best = std::max({best, zeros_left + ones_right, ones_left + zeros_right});
    }
    return best;
  };

  int best = 0;
  for (int k = 0; k <= n; ++k) best = std::max(best, best1(0, k) + best1(k, n));
  return static_cast<double>(best) / n;
}

double mean_c1(const dsp::FeatureMatrix<float>& f) {
  double acc = 0;
  for (int r = 0; r < f.n_valid_frames; ++r) acc += f.at(r, 1);
  return acc / std::max(1, f.n_valid_frames);
}

}  // namespace

TEST_CASE("load_wav") {
  const auto dir = test_dir();

  SECTION("sixteen samples of 32767 scale to ~0.99997") {
    const auto path = dir / "max.wav";
    {
      dsp::AudioClip clip;
      clip.sample_rate = 16000;
      clip.samples.assign(16, 0.0f);
      save_wav(path, clip);
      // overwrite payload with the raw int16 pattern
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(44);
      for (int i = 0; i < 16; ++i) {
        const int16_t v = 32767;
        f.write(reinterpret_cast<const char*>(&v), 2);
      }
    }
    auto clip = load_wav(path);
    REQUIRE(clip.samples.size() == 16);
    CHECK(clip.sample_rate == 16000);
    for (float s : clip.samples) CHECK(s == Catch::Approx(0.99997).margin(1e-5));
  }

  SECTION("round-trip through save_wav is exact on the int16 grid") {
    dsp::AudioClip clip;
    clip.sample_rate = 8000;
    std::mt19937 rng(3);
    std::uniform_int_distribution<int> d(-32768, 32767);
    clip.samples.resize(500);
    for (auto& s : clip.samples) s = static_cast<float>(d(rng)) / 32768.0f;
    const auto path = dir / "grid.wav";
    save_wav(path, clip);
    auto back = load_wav(path);
    REQUIRE(back.samples.size() == clip.samples.size());
    CHECK(back.sample_rate == 8000);
    for (size_t i = 0; i < clip.samples.size(); ++i)
      REQUIRE(back.samples[i] == clip.samples[i]);
  }

  SECTION("stereo is rejected with a channel-count error") {
    const auto path = dir / "stereo.wav";
    dsp::AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(32, 0.25f);
    save_wav(path, clip);
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(22);  // channel count in the fmt chunk
    const uint16_t two = 2;
    f.write(reinterpret_cast<const char*>(&two), 2);
    f.close();
    try {
      load_wav(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("channels") != std::string::npos);
    }
  }

  SECTION("declared data length beyond EOF reports the truncation offset") {
    const auto path = dir / "trunc.wav";
    dsp::AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(100, 0.1f);
    save_wav(path, clip);
    fs::resize_file(path, fs::file_size(path) - 60);
    try {
      load_wav(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
      CHECK(e.byte_offset() > 44);
    }
  }

  SECTION("non-PCM is rejected") {
    const auto path = dir / "float.wav";
    dsp::AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(8, 0.0f);
    save_wav(path, clip);
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(20);
    const uint16_t ieee_float = 3;
    f.write(reinterpret_cast<const char*>(&ieee_float), 2);
    f.close();
    CHECK_THROWS_AS(load_wav(path), FormatError);
  }
}

TEST_CASE("manifest round-trip") {
  const auto dir = test_dir();
  const auto path = dir / "manifest.csv";
  std::vector<ManifestEntry> entries = {
      {"a/0.wav", "as", Gender::kF, Split::kTrain},
      {"a/1.wav", "as", Gender::kM, Split::kVal},
      {"b/0.wav", "bn", Gender::kU, Split::kTest},
      {"b/1.wav", "bn", Gender::kU, Split::kUnassigned},
  };
  write_manifest(path, entries);
  auto back = read_manifest(path, /*check_paths=*/false);
  REQUIRE(back == entries);

  SECTION("missing file is reported when paths are checked") {
    CHECK_THROWS_WITH(read_manifest(path, true),
                      Catch::Matchers::ContainsSubstring("missing file"));
  }

  SECTION("bad header is rejected") {
    std::ofstream os(path, std::ios::trunc);
    os << "path;label\n";
    os.close();
    CHECK_THROWS_AS(read_manifest(path, false), FormatError);
  }

  SECTION("label_set is sorted and unique") {
    CHECK(label_set(entries) == std::vector<std::string>{"as", "bn"});
  }
}

TEST_CASE("split_dataset") {
  auto make_group = [](const std::string& label, Gender g, int n) {
    std::vector<ManifestEntry> out;
    for (int i = 0; i < n; ++i)
      out.push_back({label + std::to_string(i), label, g, Split::kUnassigned});
    return out;
  };

  SECTION("100 entries split 80/10/10") {
    auto entries = make_group("x", Gender::kF, 100);
    split_dataset(entries, {0.8, 0.1, 0.1}, 42);
    int train = 0, val = 0, test = 0;
    for (const auto& e : entries) {
      train += e.split == Split::kTrain;
      val += e.split == Split::kVal;
      test += e.split == Split::kTest;
    }
    CHECK(train == 80);
    CHECK(val == 10);
    CHECK(test == 10);
  }

  SECTION("10 entries split 8/1/1; stratified per (label, gender)") {
    auto entries = make_group("x", Gender::kF, 10);
    auto more = make_group("x", Gender::kM, 10);
    auto other = make_group("y", Gender::kU, 10);
    entries.insert(entries.end(), more.begin(), more.end());
    entries.insert(entries.end(), other.begin(), other.end());
    split_dataset(entries, {0.8, 0.1, 0.1}, 1);
    std::map<std::pair<std::string, char>, std::array<int, 3>> per_group;
    for (const auto& e : entries) {
      auto& c = per_group[{e.label, static_cast<char>(e.gender)}];
      if (e.split == Split::kTrain) ++c[0];
      if (e.split == Split::kVal) ++c[1];
      if (e.split == Split::kTest) ++c[2];
    }
    for (const auto& [key, c] : per_group) {
      CHECK(c[0] == 8);
      CHECK(c[1] == 1);
      CHECK(c[2] == 1);
    }
  }

  SECTION("every entry lands in exactly one split; proportions within 1") {
    auto entries = make_group("a", Gender::kF, 37);
    auto b = make_group("b", Gender::kM, 53);
    entries.insert(entries.end(), b.begin(), b.end());
    split_dataset(entries, {0.8, 0.1, 0.1}, 9);
    for (const auto& e : entries) CHECK(e.split != Split::kUnassigned);
    int val = 0, test = 0;
    for (const auto& e : entries) {
      val += e.split == Split::kVal;
      test += e.split == Split::kTest;
    }
    CHECK(std::abs(val - 9) <= 2);   // floor(3.7) + floor(5.3)
    CHECK(std::abs(test - 9) <= 2);
  }

  SECTION("identical seeds give identical assignments") {
    auto a = make_group("x", Gender::kF, 50);
    auto b = a;
    split_dataset(a, {0.8, 0.1, 0.1}, 7);
    split_dataset(b, {0.8, 0.1, 0.1}, 7);
    REQUIRE(a == b);
  }

  SECTION("groups smaller than 3 go to train with a warning") {
    auto entries = make_group("tiny", Gender::kF, 2);
    std::ostringstream warn;
    split_dataset(entries, {0.8, 0.1, 0.1}, 3, &warn);
    for (const auto& e : entries) CHECK(e.split == Split::kTrain);
    CHECK(warn.str().find("tiny") != std::string::npos);
  }

  SECTION("ratios must sum to one") {
    auto entries = make_group("x", Gender::kF, 10);
    CHECK_THROWS_AS(split_dataset(entries, {0.8, 0.1, 0.2}, 1), std::invalid_argument);
  }
}

TEST_CASE("balance_manual") {
  std::vector<ManifestEntry> entries;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 20; ++i) {
      ManifestEntry e{"p" + std::to_string(c * 100 + i), "c" + std::to_string(c),
                      Gender::kU, i < 16 ? Split::kTrain : Split::kTest};
      entries.push_back(e);
    }

  SECTION("keeps exactly per_class training entries per class") {
    auto out = balance_manual(entries, 10, 5);
    std::map<std::string, int> train_counts;
    int test_count = 0;
    for (const auto& e : out) {
      if (e.split == Split::kTrain) ++train_counts[e.label];
      if (e.split == Split::kTest) ++test_count;
    }
    for (const auto& [label, n] : train_counts) CHECK(n == 10);
    CHECK(test_count == 12);  // untouched
    CHECK(out.size() == 30 + 12);
  }

  SECTION("per_class = 0 is rejected") {
    CHECK_THROWS_AS(balance_manual(entries, 0, 1), std::invalid_argument);
  }

  SECTION("insufficient class is named") {
    CHECK_THROWS_WITH(balance_manual(entries, 17, 1),
                      Catch::Matchers::ContainsSubstring("c0"));
  }

  SECTION("identical seeds keep identical subsets") {
    auto a = balance_manual(entries, 8, 11);
    auto b = balance_manual(entries, 8, 11);
    REQUIRE(a == b);
  }
}

TEST_CASE("add_white_noise") {
  std::mt19937 rng(17);
  dsp::AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(16000);
  // speech-like: a few sines plus mild noise, well inside [-1, 1]
  std::normal_distribution<float> d(0.0f, 0.02f);
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    clip.samples[i] = static_cast<float>(0.25 * std::sin(2 * std::numbers::pi * 220 * t) +
                                         0.12 * std::sin(2 * std::numbers::pi * 660 * t)) +
                      d(rng);
  }

  SECTION("disabled spec passes the clip through") {
    auto out = add_white_noise(clip, NoiseSpec::disabled(), 1);
    REQUIRE(out.samples == clip.samples);
  }

  SECTION("measured SNR is within half a dB of the spec") {
    for (double snr : {0.0, 10.0, 20.0}) {
      auto out = add_white_noise(clip, {NoiseSpec::Kind::kWhite, snr}, 99);
      double ps = 0, pn = 0;
      for (size_t i = 0; i < clip.samples.size(); ++i) {
        ps += static_cast<double>(clip.samples[i]) * clip.samples[i];
        const double n = static_cast<double>(out.samples[i]) - clip.samples[i];
        pn += n * n;
      }
      const double measured = 10.0 * std::log10(ps / pn);
      CHECK(measured == Catch::Approx(snr).margin(0.5));
    }
  }

  SECTION("identical seeds give identical noisy clips") {
    auto a = add_white_noise(clip, {NoiseSpec::Kind::kWhite, 10.0}, 7);
    auto b = add_white_noise(clip, {NoiseSpec::Kind::kWhite, 10.0}, 7);
    REQUIRE(a.samples == b.samples);
  }

  SECTION("silent clip passes through with a warning") {
    dsp::AudioClip silent;
    silent.sample_rate = 16000;
    silent.samples.assign(1000, 0.0f);
    std::ostringstream warn;
    auto out = add_white_noise(silent, {NoiseSpec::Kind::kWhite, 10.0}, 1, &warn);
    CHECK(out.samples == silent.samples);
    CHECK(!warn.str().empty());
  }
}

TEST_CASE("synth_toy_corpus") {
  const auto dir = test_dir() / "corpus";
  fs::remove_all(dir);

  SECTION("emits n_classes * per_class files plus a manifest") {
    auto manifest = synth_toy_corpus(4, 6, 16000, 42, dir);
    CHECK(manifest.size() == 24);
    int files = 0;
    for (auto& p : fs::recursive_directory_iterator(dir))
      if (p.path().extension() == ".wav") ++files;
    CHECK(files == 24);
    auto back = read_manifest(dir / "manifest.csv");  // paths must exist
    CHECK(back.size() == 24);
  }

  SECTION("class count bounds") {
    CHECK_THROWS_AS(synth_toy_corpus(1, 5, 16000, 1, dir), std::invalid_argument);
    CHECK_THROWS_AS(synth_toy_corpus(17, 5, 16000, 1, dir), std::invalid_argument);
  }

  SECTION("different seeds give different first clips") {
    fs::remove_all(dir);
    synth_toy_corpus(2, 1, 16000, 1, dir / "a");
    synth_toy_corpus(2, 1, 16000, 2, dir / "b");
    auto ca = load_wav(dir / "a" / "c00" / "0000.wav");
    auto cb = load_wav(dir / "b" / "c00" / "0000.wav");
    CHECK(ca.samples != cb.samples);
  }

  SECTION("classes 0 and 1 separate on mean MFCC c1 with a depth-2 stump") {
    fs::remove_all(dir);
    auto manifest = synth_toy_corpus(2, 40, 16000, 42, dir);
    dsp::MfccConfig cfg;
    std::vector<std::pair<double, int>> pts;
    for (const auto& e : manifest) {
      auto clip = load_wav(dir / e.path);
      auto f = dsp::compute_mfcc<float>(clip, cfg);
      pts.emplace_back(mean_c1(f), e.label == "c01" ? 1 : 0);
    }
    const double acc = stump2_accuracy(pts);
    INFO("stump accuracy " << acc);
    CHECK(acc >= 0.90);
  }

  SECTION("40 dB noise changes MFCC features by under 5% relative Frobenius") {
    fs::remove_all(dir);
    auto manifest = synth_toy_corpus(2, 3, 16000, 7, dir);
    dsp::MfccConfig cfg;
    for (const auto& e : manifest) {
      auto clip = load_wav(dir / e.path);
      auto noisy = add_white_noise(clip, {NoiseSpec::Kind::kWhite, 40.0}, 3);
      auto a = dsp::compute_mfcc<float>(clip, cfg);
      auto b = dsp::compute_mfcc<float>(noisy, cfg);
      CHECK(oracle::rel_frobenius_error(b.values, a.values) < 0.05);
    }
  }
}
