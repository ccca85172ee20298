// Copyright 2026 The fqbmru Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Datasets: MNIST IDX files, FSEQ feature-sequence files, and a synthetic
// pulse-memory task. Everything is held as an N x T x D tensor plus labels.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fqbmru/cells.hpp"
#include "fqbmru/errors.hpp"
#include "fqbmru/models.hpp"
#include "fqbmru/tensor.hpp"

namespace fqbmru {

struct Dataset {
  Tensor X;  // N x T x D
  std::vector<int> labels;
  int n_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t T() const { return X.rank() == 3 ? X.shape()[1] : 0; }
  std::size_t D() const { return X.rank() == 3 ? X.shape()[2] : 0; }

  Tensor sequence(std::size_t i) const {
    const std::size_t n = T() * D();
    std::vector<double> v(X.values().begin() + static_cast<std::ptrdiff_t>(i * n),
                          X.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    return Tensor({T(), D()}, std::move(v));
  }
};

inline Dataset subset(const Dataset& d, const std::vector<std::size_t>& idx) {
  const std::size_t T = d.T(), D = d.D(), n = T * D;
  Dataset out;
  out.n_classes = d.n_classes;
  out.X = Tensor({idx.size(), T, D});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= d.size()) throw precondition_error("subset: index out of range");
    std::copy_n(d.X.values().begin() + static_cast<std::ptrdiff_t>(idx[k] * n), n,
                out.X.values().begin() + static_cast<std::ptrdiff_t>(k * n));
    out.labels.push_back(d.labels[idx[k]]);
  }
  return out;
}

/// Time-major batch: row t*B + b holds timestep t of sequence idx[b].
inline Batch make_batch(const Dataset& d, const std::vector<std::size_t>& idx) {
  const std::size_t T = d.T(), D = d.D(), B = idx.size();
  Batch b;
  b.T = T;
  b.B = B;
  b.X = Tensor::matrix(T * B, D);
  for (std::size_t s = 0; s < B; ++s) {
    b.labels.push_back(d.labels.at(idx[s]));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < D; ++j) b.X(t * B + s, j) = d.X.at3(idx[s], t, j);
  }
  return b;
}

struct Split {
  Dataset train, val, test;
};

/// Seeded shuffle, then consecutive train / val / test slices.
inline Split split_dataset(const Dataset& d, double val_frac, double test_frac, std::uint64_t seed) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::round(val_frac * static_cast<double>(d.size())));
  const auto n_test = static_cast<std::size_t>(std::round(test_frac * static_cast<double>(d.size())));
  if (n_val + n_test >= d.size()) throw precondition_error("split_dataset: no training samples left");
  auto slice = [&](std::size_t a, std::size_t b) {
    return subset(d, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(a),
                                              order.begin() + static_cast<std::ptrdiff_t>(b)));
  };
  const std::size_t n_train = d.size() - n_val - n_test;
  return {slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, d.size())};
}

// ---------------------------------------------------------------------------
// Byte helpers

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw format_error("cannot open '" + path + "'", 0);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw format_error("cannot create '" + path + "'", 0);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& what) {
  if (off + 4 > b.size()) throw format_error("truncated " + what, off);
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

template <class T>
T read_le(const std::vector<unsigned char>& b, std::size_t off, const std::string& what) {
  if (off + sizeof(T) > b.size()) throw format_error("truncated " + what, off);
  std::array<unsigned char, sizeof(T)> raw{};
  std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(off), sizeof(T), raw.begin());
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  T v;
  std::memcpy(&v, raw.data(), sizeof(T));
  return v;
}

template <class T>
void put_le(std::vector<unsigned char>& b, T v) {
  std::array<unsigned char, sizeof(T)> raw{};
  std::memcpy(raw.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  b.insert(b.end(), raw.begin(), raw.end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// IDX

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

inline IdxImages parse_idx_images(const std::vector<unsigned char>& b) {
  const std::uint32_t magic = detail::read_be32(b, 0, "IDX header");
  if (magic != kIdxImagesMagic) {
    std::ostringstream os;
    os << "bad IDX image magic: expected 0x" << std::hex << kIdxImagesMagic << ", found 0x" << magic;
    throw format_error(os.str(), 0);
  }
  IdxImages img;
  img.count = detail::read_be32(b, 4, "IDX header");
  img.rows = detail::read_be32(b, 8, "IDX header");
  img.cols = detail::read_be32(b, 12, "IDX header");
  const std::size_t need = img.count * img.rows * img.cols;
  if (b.size() < 16 + need) throw format_error("truncated IDX image payload", b.size());
  img.pixels.assign(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return img;
}

inline std::vector<std::uint8_t> parse_idx_labels(const std::vector<unsigned char>& b) {
  const std::uint32_t magic = detail::read_be32(b, 0, "IDX header");
  if (magic != kIdxLabelsMagic) {
    std::ostringstream os;
    os << "bad IDX label magic: expected 0x" << std::hex << kIdxLabelsMagic << ", found 0x" << magic;
    throw format_error(os.str(), 0);
  }
  const std::size_t n = detail::read_be32(b, 4, "IDX header");
  if (b.size() < 8 + n) throw format_error("truncated IDX label payload", b.size());
  return {b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

inline std::vector<unsigned char> encode_idx_images(const IdxImages& img) {
  std::vector<unsigned char> b;
  detail::put_be32(b, kIdxImagesMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(img.count));
  detail::put_be32(b, static_cast<std::uint32_t>(img.rows));
  detail::put_be32(b, static_cast<std::uint32_t>(img.cols));
  b.insert(b.end(), img.pixels.begin(), img.pixels.end());
  return b;
}

inline std::vector<unsigned char> encode_idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<unsigned char> b;
  detail::put_be32(b, kIdxLabelsMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

struct IdxData {
  IdxImages images;
  std::vector<std::uint8_t> labels;
};

inline IdxData load_idx(const std::string& images_path, const std::string& labels_path) {
  IdxData d{parse_idx_images(detail::read_file(images_path)), parse_idx_labels(detail::read_file(labels_path))};
  if (d.images.count != d.labels.size()) {
    throw format_error("IDX image count " + std::to_string(d.images.count) + " != label count " +
                           std::to_string(d.labels.size()),
                       4);
  }
  return d;
}

inline void save_idx(const IdxData& d, const std::string& images_path, const std::string& labels_path) {
  detail::write_file(images_path, encode_idx_images(d.images));
  detail::write_file(labels_path, encode_idx_labels(d.labels));
}

enum class PixelMode { raster784, row28, permuted };

/// Fixed permutation of 0..783 determined by the seed.
inline std::vector<std::size_t> make_permutation(std::uint64_t seed, std::size_t n = 784) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  Rng rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

/// Pixels scaled to [0, 1] (255 -> 1.0 exactly). raster784 and permuted give
/// 784 x 1 sequences, row28 gives rows x cols.
inline Dataset pixel_sequences(const IdxData& d, PixelMode mode, std::uint64_t perm_seed = 0) {
  const std::size_t R = d.images.rows, C = d.images.cols, n = R * C, N = d.images.count;
  const std::size_t T = mode == PixelMode::row28 ? R : n;
  const std::size_t D = mode == PixelMode::row28 ? C : 1;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  if (mode == PixelMode::permuted) perm = make_permutation(perm_seed, n);
  Dataset out;
  out.n_classes = 10;
  out.X = Tensor({N, T, D});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      out.X[i * n + k] = static_cast<double>(d.images.pixels[i * n + perm[k]]) / 255.0;
    }
  for (auto l : d.labels) {
    out.labels.push_back(l);
    out.n_classes = std::max(out.n_classes, static_cast<int>(l) + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// FSEQ: "FSEQ", u32 version, u32 T, u32 D, u32 n_classes, u32 count, then per
// record an i32 label and T*D float32 values, all little-endian.

inline constexpr std::uint32_t kFseqVersion = 1;

inline std::vector<unsigned char> encode_fseq(const Dataset& d) {
  std::vector<unsigned char> b{'F', 'S', 'E', 'Q'};
  detail::put_le<std::uint32_t>(b, kFseqVersion);
  detail::put_le<std::uint32_t>(b, static_cast<std::uint32_t>(d.T()));
  detail::put_le<std::uint32_t>(b, static_cast<std::uint32_t>(d.D()));
  detail::put_le<std::uint32_t>(b, static_cast<std::uint32_t>(d.n_classes));
  detail::put_le<std::uint32_t>(b, static_cast<std::uint32_t>(d.size()));
  const std::size_t n = d.T() * d.D();
  for (std::size_t i = 0; i < d.size(); ++i) {
    detail::put_le<std::int32_t>(b, d.labels[i]);
    for (std::size_t k = 0; k < n; ++k) detail::put_le<float>(b, static_cast<float>(d.X[i * n + k]));
  }
  return b;
}

inline Dataset decode_fseq(const std::vector<unsigned char>& b) {
  if (b.size() < 4 || std::memcmp(b.data(), "FSEQ", 4) != 0) throw format_error("bad FSEQ magic", 0);
  const auto version = detail::read_le<std::uint32_t>(b, 4, "FSEQ header");
  if (version != kFseqVersion) throw format_error("unsupported FSEQ version " + std::to_string(version), 4);
  const std::size_t T = detail::read_le<std::uint32_t>(b, 8, "FSEQ header");
  const std::size_t D = detail::read_le<std::uint32_t>(b, 12, "FSEQ header");
  const int C = static_cast<int>(detail::read_le<std::uint32_t>(b, 16, "FSEQ header"));
  const std::size_t N = detail::read_le<std::uint32_t>(b, 20, "FSEQ header");
  const std::size_t rec = 4 + 4 * T * D;
  if (b.size() != 24 + N * rec) {
    throw format_error("FSEQ payload length " + std::to_string(b.size() - 24) + " does not match header (" +
                           std::to_string(N * rec) + ")",
                       std::min(b.size(), 24 + N * rec));
  }
  Dataset d;
  d.n_classes = C;
  d.X = Tensor({N, T, D});
  std::size_t off = 24;
  for (std::size_t i = 0; i < N; ++i) {
    const auto label = detail::read_le<std::int32_t>(b, off, "FSEQ record");
    if (label < 0 || label >= C) throw format_error("FSEQ label out of range", off);
    d.labels.push_back(label);
    off += 4;
    for (std::size_t k = 0; k < T * D; ++k, off += 4) {
      const float v = detail::read_le<float>(b, off, "FSEQ record");
      if (!std::isfinite(v)) throw format_error("non-finite FSEQ feature", off);
      d.X[i * T * D + k] = static_cast<double>(v);
    }
  }
  return d;
}

inline Dataset load_fseq(const std::string& path) { return decode_fseq(detail::read_file(path)); }
inline void save_fseq(const Dataset& d, const std::string& path) { detail::write_file(path, encode_fseq(d)); }

/// Every sample of `target_class` (label 1) paired with as many samples drawn
/// without replacement from the other classes (label 0).
inline Dataset balanced_kws_split(const Dataset& d, int target_class, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < d.size(); ++i) (d.labels[i] == target_class ? pos : neg).push_back(i);
  if (pos.empty()) throw precondition_error("balanced_kws_split: no samples of the target class");
  if (neg.size() < pos.size()) throw precondition_error("balanced_kws_split: not enough negative samples");
  Rng rng(seed);
  std::shuffle(neg.begin(), neg.end(), rng);
  neg.resize(pos.size());
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < pos.size(); ++k) {
    idx.push_back(pos[k]);
    idx.push_back(neg[k]);
  }
  Dataset out = subset(d, idx);
  for (std::size_t k = 0; k < out.size(); ++k) out.labels[k] = k % 2 == 0 ? 1 : 0;
  out.n_classes = 2;
  return out;
}

// ---------------------------------------------------------------------------
// Per-feature min-max scaling (fitted on one set, applied to others). The
// circuit only accepts non-negative input currents.

struct MinMax {
  Vec lo, hi;
};

inline MinMax fit_minmax(const Dataset& d) {
  MinMax m{Vec(d.D(), std::numeric_limits<double>::infinity()), Vec(d.D(), -std::numeric_limits<double>::infinity())};
  for (std::size_t i = 0; i < d.X.size(); ++i) {
    const std::size_t j = i % d.D();
    m.lo[j] = std::min(m.lo[j], d.X[i]);
    m.hi[j] = std::max(m.hi[j], d.X[i]);
  }
  return m;
}

inline Dataset apply_minmax(Dataset d, const MinMax& m) {
  for (std::size_t i = 0; i < d.X.size(); ++i) {
    const std::size_t j = i % d.D();
    const double span = m.hi[j] - m.lo[j];
    d.X[i] = span > 0 ? std::clamp((d.X[i] - m.lo[j]) / span, 0.0, 1.0) : 0.0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic pulse-memory task. Class k lights its own block of channels for
// pulse_len steps at a random onset in the first half of the sequence; the
// class must be remembered afterwards. Background is half-normal noise.

struct SyntheticTaskConfig {
  int n_classes = 2;
  std::size_t T = 32;
  std::size_t d_in = 8;
  std::size_t n_samples = 1000;
  std::size_t pulse_len = 3;
  double amp_lo = 0.6;
  double amp_hi = 1.0;
  double noise = 0.1;
  std::size_t onset_min = 2;
  std::size_t onset_max = 0;  // 0: T/2 - pulse_len - 1
  std::uint64_t seed = 0;
};

inline Dataset make_synthetic_task(const SyntheticTaskConfig& c) {
  if (c.n_classes < 2 || c.d_in < static_cast<std::size_t>(c.n_classes) || c.T < 2 * (c.pulse_len + c.onset_min + 1)) {
    throw precondition_error("synthetic task: need n_classes >= 2, d_in >= n_classes and T long enough");
  }
  const std::size_t onset_max = c.onset_max ? c.onset_max : c.T / 2 - c.pulse_len - 1;
  if (onset_max < c.onset_min) throw precondition_error("synthetic task: empty onset range");
  Rng rng(c.seed);
  std::normal_distribution<double> g(0.0, c.noise);
  std::uniform_real_distribution<double> amp(c.amp_lo, c.amp_hi);
  std::uniform_int_distribution<std::size_t> onset(c.onset_min, onset_max);
  std::uniform_int_distribution<int> cls(0, c.n_classes - 1);
  const std::size_t per = c.d_in / static_cast<std::size_t>(c.n_classes);
  Dataset d;
  d.n_classes = c.n_classes;
  d.X = Tensor({c.n_samples, c.T, c.d_in});
  for (std::size_t i = 0; i < c.n_samples; ++i) {
    const int y = cls(rng);
    d.labels.push_back(y);
    for (std::size_t t = 0; t < c.T; ++t)
      for (std::size_t j = 0; j < c.d_in; ++j) d.X.at3(i, t, j) = std::fabs(g(rng));
    const std::size_t t0 = onset(rng);
    const double a = amp(rng);
    for (std::size_t t = t0; t < t0 + c.pulse_len; ++t)
      for (std::size_t j = static_cast<std::size_t>(y) * per; j < static_cast<std::size_t>(y + 1) * per; ++j) {
        d.X.at3(i, t, j) += a;
      }
  }
  return d;
}


// ---------------------------------------------------------------------------
// Keyword-spotting stand-in: 13 standardized cepstral-like channels over 101
// frames. Positives carry the keyword's spectral template; negatives carry
// another word (or, with other_word_frac < 1, background only). Onset and
// length vary, so late or short keywords leave a thin majority-vote margin.

struct KwsLikeConfig {
  std::size_t n_samples = 300;
  std::size_t T = 101;
  std::size_t D = 13;
  double positive_frac = 0.5;
  double other_word_frac = 1.0;  // of the negatives
  std::size_t onset_min = 4;
  std::size_t onset_max = 20;
  std::size_t len_min = 12;
  std::size_t len_max = 24;
  double amp_lo = 0.75;
  double amp_hi = 2.25;
  double background_ar = 0.8;
  double background_sd = 0.2;
  std::uint64_t template_seed = 1234;  // shared by every split
  std::uint64_t seed = 0;
};

inline Dataset make_kws_like_task(const KwsLikeConfig& c) {
  if (c.T < c.onset_max + c.len_max || c.len_min > c.len_max || c.onset_min > c.onset_max || c.D == 0) {
    throw precondition_error("kws-like task: inconsistent timing parameters");
  }
  constexpr std::size_t kOtherWords = 3;
  Rng trng(c.template_seed);
  std::normal_distribution<double> tg(0.0, 1.5);
  std::vector<Vec> templates(1 + kOtherWords, Vec(c.D));
  for (auto& tpl : templates)
    for (double& v : tpl) v = tg(trng);

  Rng rng(c.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0), amp(c.amp_lo, c.amp_hi);
  std::uniform_int_distribution<std::size_t> onset(c.onset_min, c.onset_max), len(c.len_min, c.len_max);
  std::uniform_int_distribution<std::size_t> other(1, kOtherWords);
  const double innov = c.background_sd * std::sqrt(1.0 - c.background_ar * c.background_ar);

  Dataset d;
  d.n_classes = 2;
  d.X = Tensor({c.n_samples, c.T, c.D});
  for (std::size_t i = 0; i < c.n_samples; ++i) {
    const bool pos = u(rng) < c.positive_frac;
    d.labels.push_back(pos ? 1 : 0);
    Vec state(c.D);
    for (double& v : state) v = c.background_sd * g(rng);
    for (std::size_t t = 0; t < c.T; ++t)
      for (std::size_t j = 0; j < c.D; ++j) {
        state[j] = c.background_ar * state[j] + innov * g(rng);
        d.X.at3(i, t, j) = state[j];
      }
    const bool word = pos || u(rng) < c.other_word_frac;
    if (!word) continue;
    const Vec& tpl = templates[pos ? 0 : other(rng)];
    const std::size_t t0 = onset(rng), n = len(rng);
    const double a = amp(rng);
    for (std::size_t k = 0; k < n; ++k) {
      const double env = std::sin(std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(n));
      for (std::size_t j = 0; j < c.D; ++j) d.X.at3(i, t0 + k, j) += a * env * tpl[j];
    }
  }
  return d;
}

}  // namespace fqbmru
