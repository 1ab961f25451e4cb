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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lid/errors.hpp"
#include "lid/nn.hpp"
#include "lid/tensor.hpp"

namespace lid::models {

enum class ArchTag : uint8_t { kCnn = 0, kCrnn = 1, kCrnnAttn = 2 };

inline const char* arch_name(ArchTag t) {
  switch (t) {
    case ArchTag::kCnn: return "cnn";
    case ArchTag::kCrnn: return "crnn";
    case ArchTag::kCrnnAttn: return "crnn-attn";
  }
  return "?";
}

inline std::optional<ArchTag> arch_from_name(const std::string& s) {
  if (s == "cnn") return ArchTag::kCnn;
  if (s == "crnn") return ArchTag::kCrnn;
  if (s == "crnn-attn" || s == "crnn_attn") return ArchTag::kCrnnAttn;
  return std::nullopt;
}

/// A checkpoint that names a different architecture than the caller expects.
class ArchitectureMismatchError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Architecture {
  ArchTag tag = ArchTag::kCrnnAttn;
  std::vector<std::pair<int, int>> conv_spec = {{3, 512}, {3, 512}, {3, 256}, {3, 128}};
  int pool_size = 3;
  int pool_stride = 3;
  int lstm_units = 256;
  int n_classes = 13;
  nn::Padding conv_padding = nn::Padding::kValid;
  int input_frames = 1000;  // feature rows fed to the network
  int input_coeffs = 13;    // MFCC coefficients per row

  void validate() const {
    if (conv_spec.empty())
      throw std::invalid_argument("Architecture: conv_spec must be non-empty");
    if (n_classes < 2)
      throw std::invalid_argument("Architecture: need n_classes >= 2");
    for (auto [k, f] : conv_spec)
      if (k < 1 || f < 1)
        throw std::invalid_argument("Architecture: bad conv_spec entry");
    if (pool_size < 1 || pool_stride < 1 || lstm_units < 1 ||
        input_frames < 1 || input_coeffs < 1)
      throw std::invalid_argument("Architecture: sizes must be positive");
  }

  /// Time-axis length after the conv/pool stack.
  int stack_out_time() const {
    int t = input_frames;
    for (auto [k, f] : conv_spec) {
      t = conv_padding == nn::Padding::kValid ? t - k + 1 : t;
      if (t < 1)
        throw std::invalid_argument(
            "Architecture: time axis exhausted by conv kernel " +
            std::to_string(k) + " with valid padding");
      if (t < pool_size)
        throw std::invalid_argument("Architecture: time axis shorter than pool");
      t = (t - pool_size) / pool_stride + 1;
    }
    return t;
  }
};

/// One of the three classifier networks, plus its training metadata. The
/// in-memory counterpart of the on-disk checkpoint.
template <typename S>
struct Model {
  Architecture arch;
  std::vector<nn::Conv1d<S>> convs;
  nn::Lstm<S> lstm_fwd, lstm_bwd;
  nn::Attention<S> attn;
  nn::Dense<S> head;
  uint64_t step = 0;
  uint64_t seed = 0;

  static Model build(const Architecture& arch, uint64_t seed) {
    arch.validate();
    Model m;
    m.arch = arch;
    m.seed = seed;
    std::mt19937 rng(static_cast<uint32_t>(seed));

    int ch = arch.input_coeffs;
    for (auto [k, filters] : arch.conv_spec) {
      m.convs.emplace_back(k, ch, filters, arch.conv_padding);
      m.convs.back().init(rng);
      ch = filters;
    }
    const int t_out = arch.stack_out_time();

    if (arch.tag == ArchTag::kCnn) {
      m.head = nn::Dense<S>(t_out * ch, arch.n_classes);
      m.head.init(rng);
    } else {
      m.lstm_fwd = nn::Lstm<S>(ch, arch.lstm_units);
      m.lstm_fwd.init(rng);
      m.lstm_bwd = nn::Lstm<S>(ch, arch.lstm_units);
      m.lstm_bwd.init(rng);
      if (arch.tag == ArchTag::kCrnnAttn) {
        m.attn = nn::Attention<S>(2 * arch.lstm_units, 2 * arch.lstm_units);
        m.attn.init(rng);
      }
      m.head = nn::Dense<S>(2 * arch.lstm_units, arch.n_classes);
      m.head.init(rng);
    }
    return m;
  }

  /// Deep copy: fresh parameter storage with identical values.
  Model clone() {
    Model out = Model::build(arch, seed);
    out.step = step;
    auto src = named_parameters();
    auto dst = out.named_parameters();
    for (size_t i = 0; i < src.size(); ++i) dst[i].second.value() = src[i].second.value();
    return out;
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    for (size_t i = 0; i < convs.size(); ++i) {
      out.emplace_back("conv" + std::to_string(i) + ".weight", convs[i].weights);
      out.emplace_back("conv" + std::to_string(i) + ".bias", convs[i].bias);
    }
    if (arch.tag != ArchTag::kCnn) {
      out.emplace_back("lstm_fwd.w", lstm_fwd.w);
      out.emplace_back("lstm_fwd.u", lstm_fwd.u);
      out.emplace_back("lstm_fwd.b", lstm_fwd.b);
      out.emplace_back("lstm_bwd.w", lstm_bwd.w);
      out.emplace_back("lstm_bwd.u", lstm_bwd.u);
      out.emplace_back("lstm_bwd.b", lstm_bwd.b);
    }
    if (arch.tag == ArchTag::kCrnnAttn) {
      out.emplace_back("attn.w", attn.w);
      out.emplace_back("attn.b", attn.b);
      out.emplace_back("attn.u", attn.u);
    }
    out.emplace_back("head.weight", head.weights);
    out.emplace_back("head.bias", head.bias);
    return out;
  }

  std::vector<Tensor<S>> parameters() {
    std::vector<Tensor<S>> out;
    for (auto& [n, t] : named_parameters()) out.push_back(t);
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.size();
    return n;
  }

  /// x: {batch, input_frames, input_coeffs} -> logits {batch, n_classes}.
  /// Dropout fires only when training (rng must then be non-null).
  Tensor<S> forward(Graph<S>& g, Tensor<S> x, bool training = false,
                    double dropout_rate = 0.0, std::mt19937* rng = nullptr) {
    if (x.ndim() != 3 || x.dim(1) != arch.input_frames ||
        x.dim(2) != arch.input_coeffs)
      throw std::invalid_argument(
          "Model::forward: expected {batch, " + std::to_string(arch.input_frames) +
          ", " + std::to_string(arch.input_coeffs) + "} features");
    if (training && dropout_rate > 0.0 && rng == nullptr)
      throw std::invalid_argument("Model::forward: training dropout needs an rng");

    auto drop = [&](Tensor<S> t) {
      return training && dropout_rate > 0.0
                 ? nn::dropout(g, t, dropout_rate, true, *rng)
                 : t;
    };

    Tensor<S> h = x;
    for (auto& conv : convs) {
      h = nn::conv1d(g, h, conv, /*fuse_relu=*/true);
      h = nn::maxpool1d(g, h, arch.pool_size, arch.pool_stride);
      h = drop(h);
    }

    const int batch = x.dim(0);
    if (arch.tag == ArchTag::kCnn) {
      Tensor<S> flat = g.reshape(h, {batch, head.in_dim});
      return nn::dense(g, flat, head);
    }

    Tensor<S> seq = nn::bilstm(g, h, lstm_fwd, lstm_bwd);  // {B, T, 2H}
    seq = drop(seq);
    const int T = seq.dim(1), H2 = seq.dim(2);

    Tensor<S> red;
    if (arch.tag == ArchTag::kCrnnAttn) {
      red = nn::attention(g, seq, attn);
    } else {
      // final forward state ++ final backward state
      Tensor<S> last = g.reshape(g.slice(seq, 1, T - 1, 1), {batch, H2});
      Tensor<S> first = g.reshape(g.slice(seq, 1, 0, 1), {batch, H2});
      red = g.concat({g.slice(last, 1, 0, H2 / 2), g.slice(first, 1, H2 / 2, H2 / 2)}, 1);
    }
    return nn::dense(g, red, head);
  }
};

// ---------------------------------------------------------------------------
// checkpoint binary: magic "LIDM", u32 version=1, u8 arch tag, u32 n_classes,
// u32 tensor count, then per tensor: u16 name length, UTF-8 name, u8 ndim,
// u32 dims..., f32 little-endian data. Training step, seed and the padding
// mode ride along as meta.* tensors.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace detail {

// u64 as four exact 16-bit limbs, little-endian limb order
inline std::vector<float> u64_to_limbs(uint64_t v) {
  return {static_cast<float>(v & 0xffff), static_cast<float>((v >> 16) & 0xffff),
          static_cast<float>((v >> 32) & 0xffff), static_cast<float>((v >> 48) & 0xffff)};
}

inline uint64_t limbs_to_u64(const std::vector<float>& limbs) {
  uint64_t v = 0;
  for (int i = 3; i >= 0; --i)
    v = (v << 16) | (static_cast<uint64_t>(limbs[static_cast<size_t>(i)]) & 0xffff);
  return v;
}

struct RawTensor {
  std::vector<int> dims;
  std::vector<float> data;
};

inline void write_tensor(std::ofstream& os, const std::string& name,
                         const std::vector<int>& dims,
                         const std::vector<float>& data) {
  const uint16_t nlen = static_cast<uint16_t>(name.size());
  os.write(reinterpret_cast<const char*>(&nlen), 2);
  os.write(name.data(), nlen);
  const uint8_t ndim = static_cast<uint8_t>(dims.size());
  os.write(reinterpret_cast<const char*>(&ndim), 1);
  for (int d : dims) {
    const uint32_t v = static_cast<uint32_t>(d);
    os.write(reinterpret_cast<const char*>(&v), 4);
  }
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
}

}  // namespace detail

template <typename S>
void save_checkpoint(Model<S>& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());

  auto params = model.named_parameters();
  os.write("LIDM", 4);
  const uint32_t version = 1;
  os.write(reinterpret_cast<const char*>(&version), 4);
  const uint8_t tag = static_cast<uint8_t>(model.arch.tag);
  os.write(reinterpret_cast<const char*>(&tag), 1);
  const uint32_t n_classes = static_cast<uint32_t>(model.arch.n_classes);
  os.write(reinterpret_cast<const char*>(&n_classes), 4);
  const uint32_t count = static_cast<uint32_t>(params.size()) + 4;  // + meta.*
  os.write(reinterpret_cast<const char*>(&count), 4);

  for (auto& [name, t] : params) {
    std::vector<float> data(t.value().size());
    for (size_t i = 0; i < data.size(); ++i)
      data[i] = static_cast<float>(t.value()[i]);
    detail::write_tensor(os, name, t.shape(), data);
  }
  detail::write_tensor(os, "meta.step", {4}, detail::u64_to_limbs(model.step));
  detail::write_tensor(os, "meta.seed", {4}, detail::u64_to_limbs(model.seed));
  detail::write_tensor(os, "meta.padding", {1},
                       {model.arch.conv_padding == nn::Padding::kSame ? 1.0f : 0.0f});
  detail::write_tensor(os, "meta.input", {2},
                       {static_cast<float>(model.arch.input_frames),
                        static_cast<float>(model.arch.input_coeffs)});
  if (!os) throw std::runtime_error("short write: " + path.string());
}

inline Model<float> load_checkpoint(const std::filesystem::path& path,
                                    std::optional<ArchTag> expected = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());

  size_t pos = 0;
  auto read_or_throw = [&](void* dst, size_t n, const std::string& what) {
    if (!is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n)))
      throw FormatError("checkpoint: " + what,
                        pos + static_cast<size_t>(std::max<std::streamsize>(
                                  is.gcount(), 0)));
    pos += n;
  };

  char magic[4];
  read_or_throw(magic, 4, "missing magic");
  if (std::memcmp(magic, "LIDM", 4) != 0)
    throw FormatError("checkpoint: bad magic", 0);
  uint32_t version = 0;
  read_or_throw(&version, 4, "truncated header");
  if (version != 1)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
  uint8_t tag_byte = 0;
  read_or_throw(&tag_byte, 1, "truncated header");
  if (tag_byte > 2)
    throw FormatError("checkpoint: unknown architecture tag " +
                      std::to_string(tag_byte), 8);
  const ArchTag tag = static_cast<ArchTag>(tag_byte);
  if (expected && *expected != tag)
    throw ArchitectureMismatchError(
        std::string("checkpoint holds a ") + arch_name(tag) + " model but " +
        arch_name(*expected) + " was expected");
  uint32_t n_classes = 0, count = 0;
  read_or_throw(&n_classes, 4, "truncated header");
  read_or_throw(&count, 4, "truncated header");

  std::map<std::string, detail::RawTensor> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t nlen = 0;
    read_or_throw(&nlen, 2, "truncated before tensor #" + std::to_string(i) +
                                " of " + std::to_string(count));
    std::string name(nlen, '\0');
    read_or_throw(name.data(), nlen, "truncated tensor name");
    uint8_t ndim = 0;
    read_or_throw(&ndim, 1, "truncated while reading tensor '" + name + "'");
    detail::RawTensor raw;
    int64_t numel = 1;
    for (int d = 0; d < ndim; ++d) {
      uint32_t v = 0;
      read_or_throw(&v, 4, "truncated while reading tensor '" + name + "'");
      if (v == 0 || numel > (int64_t(1) << 40))
        throw FormatError("checkpoint: bad dimensions in tensor '" + name + "'", pos);
      raw.dims.push_back(static_cast<int>(v));
      numel *= v;
    }
    raw.data.resize(static_cast<size_t>(numel));
    read_or_throw(raw.data.data(), static_cast<size_t>(numel) * sizeof(float),
                  "truncated while reading tensor '" + name + "'");
    tensors.emplace(std::move(name), std::move(raw));
  }

  auto need = [&](const std::string& name) -> detail::RawTensor& {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw FormatError("checkpoint: missing tensor '" + name + "'", pos);
    return it->second;
  };

  // reconstruct the architecture from the stored geometry
  Architecture arch;
  arch.tag = tag;
  arch.n_classes = static_cast<int>(n_classes);
  arch.conv_padding = need("meta.padding").data.at(0) == 1.0f ? nn::Padding::kSame
                                                              : nn::Padding::kValid;
  auto& input_geom = need("meta.input");
  if (input_geom.data.size() != 2)
    throw FormatError("checkpoint: bad meta.input tensor", pos);
  arch.input_frames = static_cast<int>(input_geom.data[0]);
  arch.input_coeffs = static_cast<int>(input_geom.data[1]);
  arch.conv_spec.clear();
  for (int i = 0;; ++i) {
    auto it = tensors.find("conv" + std::to_string(i) + ".weight");
    if (it == tensors.end()) break;
    if (it->second.dims.size() != 3)
      throw FormatError("checkpoint: conv weight must be 3-D", 0);
    arch.conv_spec.emplace_back(it->second.dims[2], it->second.dims[0]);
    if (i == 0) arch.input_coeffs = it->second.dims[1];
  }
  if (arch.conv_spec.empty())
    throw FormatError("checkpoint: missing tensor 'conv0.weight'", pos);
  if (tag != ArchTag::kCnn) {
    auto& lw = need("lstm_fwd.w");
    if (lw.dims.size() != 2 || lw.dims[1] % 4 != 0)
      throw FormatError("checkpoint: bad lstm kernel shape", 0);
    arch.lstm_units = lw.dims[1] / 4;
  }

  Model<float> model = Model<float>::build(arch, 0);
  model.step = detail::limbs_to_u64(need("meta.step").data);
  model.seed = detail::limbs_to_u64(need("meta.seed").data);
  for (auto& [name, t] : model.named_parameters()) {
    auto& raw = need(name);
    if (raw.dims != t.shape())
      throw FormatError("checkpoint: shape mismatch in tensor '" + name + "'", 0);
    t.value() = raw.data;
  }
  return model;
}

}  // namespace lid::models
