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

// Post-training uniform quantization, one range per tensor, applied to the
// effective parameter values that become circuit elements.

#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fqbmru/backbone.hpp"
#include "fqbmru/data.hpp"
#include "fqbmru/training.hpp"

namespace fqbmru {

struct QuantRange {
  double w_min = 0.0;
  double w_max = 0.0;
};

inline void require_bits(int bits) {
  if (bits < 1 || bits > 52) throw precondition_error("quantize: bits must be in [1, 52], got " + std::to_string(bits));
}

/// Grid index of w, k ∈ [0, 2^bits − 1]. Values outside the range clamp.
inline double quant_level(double w, const QuantRange& r, int bits) {
  require_bits(bits);
  const double levels = std::ldexp(1.0, bits) - 1.0;
  if (!(r.w_max > r.w_min)) return 0.0;
  const double k = std::round((w - r.w_min) / (r.w_max - r.w_min) * levels);
  return std::clamp(k, 0.0, levels);
}

inline double quantize_value(double w, const QuantRange& r, int bits) {
  const double levels = std::ldexp(1.0, bits) - 1.0;
  const double k = quant_level(w, r, bits);
  if (k == levels) return r.w_max;
  return r.w_min + k * (r.w_max - r.w_min) / levels;
}

inline QuantRange range_of(std::span<const double> v) {
  if (v.empty()) return {};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

inline void quantize_in_place(std::span<double> v, int bits) {
  const QuantRange r = range_of(v);
  for (double& w : v) w = quantize_value(w, r, bits);
}

/// Every weight matrix, bias vector and cell-constant vector quantized over
/// its own range.
inline HardwareBackbone quantize(HardwareBackbone net, int bits) {
  require_bits(bits);
  auto q = [bits](auto& container) { quantize_in_place(std::span<double>(container.data(), container.size()), bits); };
  q(net.input_proj.W.values());
  q(net.input_proj.b);
  for (auto& layer : net.layers) {
    if (auto* p = std::get_if<FqBmruParams>(&layer)) {
      q(p->W_x.values());
      q(p->b_x);
      q(p->beta_lo);
      q(p->delta);
      q(p->alpha);
    } else if (auto* p = std::get_if<LruParams>(&layer)) {
      q(p->nu);
      q(p->theta);
      q(p->B_re.values());
      q(p->B_im.values());
      q(p->C_re.values());
      q(p->C_im.values());
      q(p->D.values());
    } else if (auto* p = std::get_if<MinGruParams>(&layer)) {
      q(p->W_z.values());
      q(p->W_h.values());
      q(p->b_z);
      q(p->b_h);
    }
  }
  q(net.classifier.W.values());
  q(net.classifier.b);
  return net;
}

struct QuantRow {
  int bits = 0;  // 0: full precision
  double accuracy = 0.0;
};

inline std::vector<QuantRow> quantization_report(const HardwareBackbone& net, const Dataset& data,
                                                 const std::vector<int>& bit_list) {
  std::vector<QuantRow> rows{{0, accuracy(net, data)}};
  for (int b : bit_list) rows.push_back({b, accuracy(quantize(net, b), data)});
  return rows;
}

inline void write_quant_report(std::ostream& os, const std::vector<QuantRow>& rows) {
  os << "bits,accuracy\n";
  os.precision(17);
  for (const auto& r : rows) os << r.bits << ',' << r.accuracy << '\n';
}

}  // namespace fqbmru
