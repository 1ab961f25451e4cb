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
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "lid/errors.hpp"

namespace lid::dsp {

/// All scalar parameters of the MFCC front end. Defaults match the values
/// the pipeline was designed around (25 ms frames, 15 ms stride, 512-point
/// FFT, 40 mel filters, 13 cepstra, lifter 22, 1000-row network input).
struct MfccConfig {
  double pre_emphasis = 0.97;  // first-order high-pass coefficient
  double f_size = 0.025;       // frame size, seconds
  double f_stride = 0.015;     // frame stride, seconds
  int nfft = 512;              // N-point FFT size (power of two)
  double lf = 0.0;             // low frequency, mel
  int nfilt = 40;              // triangular mel filters
  int ncoef = 13;              // cepstral coefficients kept
  int lifter = 22;             // sinusoidal lifter parameter
  int target_frames = 1000;    // rows of the fixed-size network input

  void validate() const {
    if (f_size <= 0 || f_stride <= 0)
      throw std::invalid_argument("MfccConfig: frame size/stride must be positive");
    if (f_stride > f_size)
      throw std::invalid_argument("MfccConfig: f_stride must not exceed f_size");
    if (nfft < 2 || !std::has_single_bit(static_cast<unsigned>(nfft)))
      throw std::invalid_argument("MfccConfig: nfft must be a power of two >= 2");
    if (nfilt < 1) throw std::invalid_argument("MfccConfig: nfilt must be >= 1");
    if (ncoef < 1 || ncoef > nfilt)
      throw std::invalid_argument("MfccConfig: need 1 <= ncoef <= nfilt");
    if (lifter < 1) throw std::invalid_argument("MfccConfig: lifter must be >= 1");
    if (target_frames < 1)
      throw std::invalid_argument("MfccConfig: target_frames must be >= 1");
  }
};

/// Mono audio, amplitudes in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 0;  // Hz
};

/// Plain row-major matrix used by the DSP stages.
template <typename S>
struct BasicMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<S> data;  // rows * cols, row-major

  BasicMatrix() = default;
  BasicMatrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c) {}

  S* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const S* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
  S& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  S at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

/// Triangular mel filterbank and the bin geometry it was built from.
template <typename S>
struct MelFilterbank {
  std::vector<double> mel_points;  // nfilt + 2 equally spaced mel values
  std::vector<int> bins;           // nfilt + 2 FFT-bin indices, non-decreasing
  BasicMatrix<S> weights;          // nfilt x (nfft/2 + 1), all in [0, 1]
};

/// The fixed-size network input: target_frames x ncoef, zero rows beyond
/// n_valid_frames.
template <typename S>
struct FeatureMatrix {
  int rows = 0;
  int cols = 0;
  int n_valid_frames = 0;
  std::vector<S> values;  // row-major

  S at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
};

inline double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// Highest mel point for a clip's sample rate: 2595*log10(1 + 0.5*sr/700).
inline double high_freq_mel(double sample_rate) {
  if (sample_rate <= 0)
    throw std::invalid_argument("high_freq_mel: sample rate must be positive");
  return 2595.0 * std::log10(1.0 + 0.5 * sample_rate / 700.0);
}

/// out[0] = sig[0]; out[n] = sig[n] - pre_emphasis*sig[n-1].
template <typename S>
std::vector<S> pre_emphasize(const AudioClip& clip, const MfccConfig& cfg) {
  if (clip.samples.empty())
    throw std::invalid_argument("pre_emphasize: empty clip");
  std::vector<S> out(clip.samples.size());
  out[0] = static_cast<S>(clip.samples[0]);
  const S pre = static_cast<S>(cfg.pre_emphasis);
  for (size_t n = 1; n < clip.samples.size(); ++n)
    out[n] = static_cast<S>(clip.samples[n]) - pre * static_cast<S>(clip.samples[n - 1]);
  return out;
}

inline int frame_length_samples(int sample_rate, const MfccConfig& cfg) {
  return static_cast<int>(std::lround(cfg.f_size * sample_rate));
}

inline int hop_samples(int sample_rate, const MfccConfig& cfg) {
  return static_cast<int>(std::lround(cfg.f_stride * sample_rate));
}

/// n_frames = max(1, ceil(|sig_len - frame_len| / hop)); signal zero-padded
/// to n_frames*hop + frame_len and sliced with stride hop.
template <typename S>
BasicMatrix<S> frame_signal(const std::vector<S>& emphasized, int sample_rate,
                            const MfccConfig& cfg) {
  if (emphasized.empty())
    throw std::invalid_argument("frame_signal: empty signal");
  const int frame_len = frame_length_samples(sample_rate, cfg);
  const int hop = hop_samples(sample_rate, cfg);
  if (frame_len < 1 || hop < 1)
    throw std::invalid_argument("frame_signal: frame/hop shorter than one sample");

  const int64_t sig_len = static_cast<int64_t>(emphasized.size());
  const int64_t diff = std::abs(sig_len - frame_len);
  int64_t n_frames = (diff + hop - 1) / hop;  // ceil
  if (n_frames < 1) n_frames = 1;

  const int64_t pad_len = n_frames * hop + frame_len;
  std::vector<S> padded(static_cast<size_t>(pad_len), S(0));
  std::copy(emphasized.begin(), emphasized.end(), padded.begin());

  BasicMatrix<S> frames(static_cast<int>(n_frames), frame_len);
  for (int64_t r = 0; r < n_frames; ++r)
    std::copy_n(padded.begin() + r * hop, frame_len, frames.row(static_cast<int>(r)));
  return frames;
}

namespace detail {

/// Iterative radix-2 decimation-in-time FFT. Size must be a power of two.
template <typename S>
class Radix2Fft {
 public:
  explicit Radix2Fft(int n) : n_(n) {
    if (n < 2 || !std::has_single_bit(static_cast<unsigned>(n)))
      throw std::invalid_argument("Radix2Fft: size must be a power of two >= 2");
    const int levels = std::countr_zero(static_cast<unsigned>(n));
    bitrev_.resize(n);
    for (int i = 0; i < n; ++i) {
      unsigned r = 0, x = static_cast<unsigned>(i);
      for (int b = 0; b < levels; ++b) { r = (r << 1) | (x & 1u); x >>= 1; }
      bitrev_[i] = static_cast<int>(r);
    }
    twiddle_.resize(n / 2);
    for (int k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * std::numbers::pi * k / n;
      twiddle_[k] = {static_cast<S>(std::cos(ang)), static_cast<S>(std::sin(ang))};
    }
  }

  void transform(std::complex<S>* a) const {
    for (int i = 0; i < n_; ++i) {
      const int j = bitrev_[i];
      if (j > i) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n_; len <<= 1) {
      const int half = len / 2, step = n_ / len;
      for (int base = 0; base < n_; base += len) {
        for (int k = 0; k < half; ++k) {
          const std::complex<S> w = twiddle_[static_cast<size_t>(k) * step];
          const std::complex<S> u = a[base + k];
          const std::complex<S> t = w * a[base + k + half];
          a[base + k] = u + t;
          a[base + k + half] = u - t;
        }
      }
    }
  }

  int size() const { return n_; }

 private:
  int n_;
  std::vector<int> bitrev_;
  std::vector<std::complex<S>> twiddle_;
};

template <typename S>
std::vector<S> hamming_window(int frame_len) {
  std::vector<S> w(frame_len);
  const double denom = frame_len > 1 ? frame_len - 1 : 1;
  for (int n = 0; n < frame_len; ++n)
    w[n] = static_cast<S>(0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / denom));
  return w;
}

}  // namespace detail

/// Hamming window, zero-pad to nfft, DFT, |X[k]|^2 / nfft for k = 0..nfft/2.
template <typename S>
BasicMatrix<S> power_spectrum(const BasicMatrix<S>& frames, const MfccConfig& cfg) {
  if (frames.cols > cfg.nfft)
    throw std::invalid_argument("power_spectrum: frame longer than nfft (" +
                                std::to_string(frames.cols) + " > " +
                                std::to_string(cfg.nfft) + ")");
  const int nbins = cfg.nfft / 2 + 1;
  const std::vector<S> window = detail::hamming_window<S>(frames.cols);
  detail::Radix2Fft<S> fft(cfg.nfft);

  BasicMatrix<S> pf(frames.rows, nbins);
  std::vector<std::complex<S>> buf(cfg.nfft);
  const S inv_nfft = S(1) / static_cast<S>(cfg.nfft);
  for (int r = 0; r < frames.rows; ++r) {
    std::fill(buf.begin(), buf.end(), std::complex<S>(0, 0));
    const S* src = frames.row(r);
    for (int n = 0; n < frames.cols; ++n) buf[n] = src[n] * window[n];
    fft.transform(buf.data());
    for (int k = 0; k < nbins; ++k) pf.at(r, k) = std::norm(buf[k]) * inv_nfft;
  }
  return pf;
}

/// nfilt+2 equally spaced mel points from lf to hf, floor-quantized to FFT
/// bins, expanded into triangular filters with unit peaks.
template <typename S>
MelFilterbank<S> build_filterbank(int sample_rate, const MfccConfig& cfg) {
  if (cfg.nfilt < 1) throw std::invalid_argument("build_filterbank: nfilt must be >= 1");
  if (sample_rate <= 0)
    throw std::invalid_argument("build_filterbank: sample rate must be positive");

  MelFilterbank<S> fb;
  const double hf = high_freq_mel(sample_rate);
  const int npts = cfg.nfilt + 2;
  fb.mel_points.resize(npts);
  fb.bins.resize(npts);
  for (int i = 0; i < npts; ++i) {
    fb.mel_points[i] = cfg.lf + (hf - cfg.lf) * i / (npts - 1);
    fb.bins[i] = static_cast<int>(
        std::floor((cfg.nfft + 1) * mel_to_hz(fb.mel_points[i]) / sample_rate));
  }

  const int nbins = cfg.nfft / 2 + 1;
  fb.weights = BasicMatrix<S>(cfg.nfilt, nbins);
  for (int m = 1; m <= cfg.nfilt; ++m) {
    const int b0 = fb.bins[m - 1], b1 = fb.bins[m], b2 = fb.bins[m + 1];
    for (int k = b0; k <= b1 && k < nbins; ++k)
      fb.weights.at(m - 1, k) =
          b1 == b0 ? S(1) : static_cast<S>(double(k - b0) / double(b1 - b0));
    for (int k = b1; k <= b2 && k < nbins; ++k)
      fb.weights.at(m - 1, k) =
          b2 == b1 ? S(1) : static_cast<S>(double(b2 - k) / double(b2 - b1));
  }
  return fb;
}

/// Lifter factor 1 + (L/2)*sin(pi*n/L); exactly 1 at n = 0.
inline double lifter_factor(int n, int lifter) {
  return 1.0 + 0.5 * lifter * std::sin(std::numbers::pi * n / lifter);
}

namespace detail {

// Orthonormal type-II DCT coefficients, ncoef x nfilt.
template <typename S>
BasicMatrix<S> dct2_matrix(int ncoef, int nfilt) {
  BasicMatrix<S> m(ncoef, nfilt);
  const double s0 = std::sqrt(1.0 / nfilt), s = std::sqrt(2.0 / nfilt);
  for (int n = 0; n < ncoef; ++n)
    for (int k = 0; k < nfilt; ++k)
      m.at(n, k) = static_cast<S>((n == 0 ? s0 : s) *
                                  std::cos(std::numbers::pi * n * (2 * k + 1) /
                                           (2.0 * nfilt)));
  return m;
}

}  // namespace detail

inline constexpr double kLogEnergyFloor = 1e-10;

/// Full MFCC pipeline: pre-emphasis, framing, windowed power spectrum, mel
/// filterbank, 20*log10 with a 1e-10 energy floor, orthonormal type-II DCT,
/// sinusoidal liftering, then padding/truncation to target_frames rows.
template <typename S>
FeatureMatrix<S> compute_mfcc(const AudioClip& clip, const MfccConfig& cfg) {
  cfg.validate();
  if (clip.samples.empty())
    throw std::invalid_argument("compute_mfcc: clip shorter than one sample");
  if (clip.sample_rate <= 0)
    throw std::invalid_argument("compute_mfcc: sample rate must be positive");

  const std::vector<S> emphasized = pre_emphasize<S>(clip, cfg);
  const BasicMatrix<S> frames = frame_signal<S>(emphasized, clip.sample_rate, cfg);
  const BasicMatrix<S> pf = power_spectrum<S>(frames, cfg);
  const MelFilterbank<S> fb = build_filterbank<S>(clip.sample_rate, cfg);

  // log mel energies, E floored for silent frames
  const int nbins = pf.cols;
  BasicMatrix<S> logE(pf.rows, cfg.nfilt);
  for (int r = 0; r < pf.rows; ++r) {
    const S* p = pf.row(r);
    for (int m = 0; m < cfg.nfilt; ++m) {
      S e = S(0);
      const S* w = fb.weights.row(m);
      for (int k = 0; k < nbins; ++k) e += p[k] * w[k];
      e = std::max(e, static_cast<S>(kLogEnergyFloor));
      logE.at(r, m) = S(20) * std::log10(e);
    }
  }

  const BasicMatrix<S> dct = detail::dct2_matrix<S>(cfg.ncoef, cfg.nfilt);
  std::vector<S> lift(cfg.ncoef);
  for (int n = 0; n < cfg.ncoef; ++n)
    lift[n] = static_cast<S>(lifter_factor(n, cfg.lifter));

  FeatureMatrix<S> out;
  out.rows = cfg.target_frames;
  out.cols = cfg.ncoef;
  out.n_valid_frames = std::min(pf.rows, cfg.target_frames);
  out.values.assign(static_cast<size_t>(out.rows) * out.cols, S(0));
  for (int r = 0; r < out.n_valid_frames; ++r) {
    const S* le = logE.row(r);
    for (int n = 0; n < cfg.ncoef; ++n) {
      S c = S(0);
      const S* d = dct.row(n);
      for (int k = 0; k < cfg.nfilt; ++k) c += d[k] * le[k];
      out.values[static_cast<size_t>(r) * out.cols + n] = c * lift[n];
    }
  }
  return out;
}

/// Single-precision features are computed in double and rounded once at the
/// end. Running the whole chain in float cannot hold tight absolute
/// tolerances: 20*log10(E) is ill-conditioned wherever a narrow filter lands
/// on a near-cancelling DFT bin, so float rounding inside the transform blows
/// up through the log. The f32 of the double-precision value is what feature
/// caches store anyway.
template <>
inline FeatureMatrix<float> compute_mfcc<float>(const AudioClip& clip,
                                                const MfccConfig& cfg) {
  const FeatureMatrix<double> wide = compute_mfcc<double>(clip, cfg);
  FeatureMatrix<float> out;
  out.rows = wide.rows;
  out.cols = wide.cols;
  out.n_valid_frames = wide.n_valid_frames;
  out.values.resize(wide.values.size());
  for (size_t i = 0; i < wide.values.size(); ++i)
    out.values[i] = static_cast<float>(wide.values[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Feature-cache file: magic "MFC1", u32 rows, u32 cols, u32 n_valid_frames,
// then rows*cols little-endian f32, row-major. One file per clip.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "feature cache I/O assumes a little-endian host");

inline void write_feature_cache(const std::filesystem::path& path,
                                const FeatureMatrix<float>& fm) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  os.write("MFC1", 4);
  const uint32_t rows = fm.rows, cols = fm.cols, nval = fm.n_valid_frames;
  os.write(reinterpret_cast<const char*>(&rows), 4);
  os.write(reinterpret_cast<const char*>(&cols), 4);
  os.write(reinterpret_cast<const char*>(&nval), 4);
  os.write(reinterpret_cast<const char*>(fm.values.data()),
           static_cast<std::streamsize>(fm.values.size() * sizeof(float)));
  if (!os) throw std::runtime_error("short write: " + path.string());
}

inline FeatureMatrix<float> read_feature_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("feature cache: missing magic", 0);
  if (std::memcmp(magic, "MFC1", 4) != 0)
    throw FormatError("feature cache: bad magic", 0);
  uint32_t rows = 0, cols = 0, nval = 0;
  if (!is.read(reinterpret_cast<char*>(&rows), 4)) throw FormatError("feature cache: truncated header", 4);
  if (!is.read(reinterpret_cast<char*>(&cols), 4)) throw FormatError("feature cache: truncated header", 8);
  if (!is.read(reinterpret_cast<char*>(&nval), 4)) throw FormatError("feature cache: truncated header", 12);
  if (rows == 0 || cols == 0 || nval > rows)
    throw FormatError("feature cache: inconsistent header", 4);
  FeatureMatrix<float> fm;
  fm.rows = static_cast<int>(rows);
  fm.cols = static_cast<int>(cols);
  fm.n_valid_frames = static_cast<int>(nval);
  fm.values.resize(static_cast<size_t>(rows) * cols);
  if (!is.read(reinterpret_cast<char*>(fm.values.data()),
               static_cast<std::streamsize>(fm.values.size() * sizeof(float))))
    throw FormatError("feature cache: truncated data",
                      16 + static_cast<size_t>(is.gcount()));
  return fm;
}

}  // namespace lid::dsp
