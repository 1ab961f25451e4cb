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
// Test-only reference implementations. Everything here is written as a
// direct transcription of the defining formulas — O(N^2) DFT sums, direct
// DCT sums, triple-loop convolutions — and stays independent of the
// library's production code paths.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "lid/dsp.hpp"

namespace oracle {

// |DFT(x, nfft)[k]|^2 / nfft for k = 0..nfft/2, direct summation. The
// cos/sin factors come from a k*n mod nfft table; the sum itself is naive.
template <typename S>
std::vector<S> naive_dft_power(const S* frame, int frame_len, int nfft) {
  std::vector<double> ctab(nfft), stab(nfft);
  for (int j = 0; j < nfft; ++j) {
    const double ang = -2.0 * std::numbers::pi * j / nfft;
    ctab[j] = std::cos(ang);
    stab[j] = std::sin(ang);
  }
  const int nbins = nfft / 2 + 1;
  std::vector<S> power(nbins);
  for (int k = 0; k < nbins; ++k) {
    S re = 0, im = 0;
    for (int n = 0; n < frame_len; ++n) {
      const int j = static_cast<int>((static_cast<int64_t>(k) * n) % nfft);
      re += frame[n] * static_cast<S>(ctab[j]);
      im += frame[n] * static_cast<S>(stab[j]);
    }
    power[k] = (re * re + im * im) / static_cast<S>(nfft);
  }
  return power;
}

// Orthonormal type-II DCT by direct summation, first ncoef coefficients.
template <typename S>
std::vector<S> naive_dct2(const S* x, int n_in, int ncoef) {
  std::vector<S> out(ncoef);
  for (int n = 0; n < ncoef; ++n) {
    double acc = 0;
    for (int k = 0; k < n_in; ++k)
      acc += static_cast<double>(x[k]) *
             std::cos(std::numbers::pi * n * (2 * k + 1) / (2.0 * n_in));
    const double scale = n == 0 ? std::sqrt(1.0 / n_in) : std::sqrt(2.0 / n_in);
    out[n] = static_cast<S>(scale * acc);
  }
  return out;
}

// Full MFCC chain re-derived from the defining equations, sharing no code
// with lid::dsp::compute_mfcc.
template <typename S>
lid::dsp::FeatureMatrix<S> mfcc(const lid::dsp::AudioClip& clip,
                                const lid::dsp::MfccConfig& cfg) {
  const int sr = clip.sample_rate;
  const size_t n = clip.samples.size();

  std::vector<S> emph(n);
  emph[0] = static_cast<S>(clip.samples[0]);
  for (size_t i = 1; i < n; ++i)
    emph[i] = static_cast<S>(clip.samples[i]) -
              static_cast<S>(cfg.pre_emphasis) * static_cast<S>(clip.samples[i - 1]);

  const int frame_len = static_cast<int>(std::lround(cfg.f_size * sr));
  const int hop = static_cast<int>(std::lround(cfg.f_stride * sr));
  int64_t n_frames =
      (std::abs(static_cast<int64_t>(n) - frame_len) + hop - 1) / hop;
  if (n_frames < 1) n_frames = 1;
  std::vector<S> padded(static_cast<size_t>(n_frames * hop + frame_len), S(0));
  std::copy(emph.begin(), emph.end(), padded.begin());

  std::vector<double> window(frame_len);
  const double denom = frame_len > 1 ? frame_len - 1 : 1;
  for (int i = 0; i < frame_len; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / denom);

  // mel geometry per the defining formulas
  const double hf = 2595.0 * std::log10(1.0 + 0.5 * sr / 700.0);
  std::vector<int> bins(cfg.nfilt + 2);
  for (int i = 0; i < cfg.nfilt + 2; ++i) {
    const double mel = cfg.lf + (hf - cfg.lf) * i / (cfg.nfilt + 1);
    const double hz = 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
    bins[i] = static_cast<int>(std::floor((cfg.nfft + 1) * hz / sr));
  }
  const int nbins = cfg.nfft / 2 + 1;
  std::vector<std::vector<S>> fbank(cfg.nfilt, std::vector<S>(nbins, S(0)));
  for (int m = 1; m <= cfg.nfilt; ++m) {
    for (int k = bins[m - 1]; k <= bins[m] && k < nbins; ++k)
      fbank[m - 1][k] = bins[m] == bins[m - 1]
                            ? S(1)
                            : static_cast<S>(double(k - bins[m - 1]) /
                                             double(bins[m] - bins[m - 1]));
    for (int k = bins[m]; k <= bins[m + 1] && k < nbins; ++k)
      fbank[m - 1][k] = bins[m + 1] == bins[m]
                            ? S(1)
                            : static_cast<S>(double(bins[m + 1] - k) /
                                             double(bins[m + 1] - bins[m]));
  }

  lid::dsp::FeatureMatrix<S> out;
  out.rows = cfg.target_frames;
  out.cols = cfg.ncoef;
  out.n_valid_frames = static_cast<int>(std::min<int64_t>(n_frames, cfg.target_frames));
  out.values.assign(static_cast<size_t>(out.rows) * out.cols, S(0));

  std::vector<S> frame(frame_len), logE(cfg.nfilt);
  for (int r = 0; r < out.n_valid_frames; ++r) {
    for (int i = 0; i < frame_len; ++i)
      frame[i] = padded[static_cast<size_t>(r) * hop + i] * static_cast<S>(window[i]);
    const std::vector<S> power = naive_dft_power(frame.data(), frame_len, cfg.nfft);
    for (int m = 0; m < cfg.nfilt; ++m) {
      S e = 0;
      for (int k = 0; k < nbins; ++k) e += power[k] * fbank[m][k];
      if (e < static_cast<S>(1e-10)) e = static_cast<S>(1e-10);
      logE[m] = S(20) * std::log10(e);
    }
    std::vector<S> cep = naive_dct2(logE.data(), cfg.nfilt, cfg.ncoef);
    for (int c = 0; c < cfg.ncoef; ++c) {
      const double lift =
          1.0 + 0.5 * cfg.lifter * std::sin(std::numbers::pi * c / cfg.lifter);
      out.values[static_cast<size_t>(r) * cfg.ncoef + c] =
          cep[c] * static_cast<S>(lift);
    }
  }
  return out;
}

template <typename S>
double rel_frobenius_error(const std::vector<S>& a, const std::vector<S>& b) {
  double num = 0, den = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    num += d * d;
    den += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

template <typename S>
double max_abs_error(const std::vector<S>& a, const std::vector<S>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace oracle
