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

// Inference form of the hardware backbone:
//
//   s_0 = ReLU(W_in x + b_in)
//   for each layer l:  ĥ_l = ReLU(W_l s_{l-1} + b_l),  h_l = cell(ĥ_l),  s_l = h_l + s_{l-1}
//   logits = W_c s_N + b_c
//
// Every stage is exposed under a stable probe name so that the circuit
// simulator can be compared against it signal by signal.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fqbmru/cells.hpp"
#include "fqbmru/errors.hpp"
#include "fqbmru/tensor.hpp"

namespace fqbmru {

enum class CellKind { fq_bmru, lru, min_gru };

inline const char* cell_kind_name(CellKind k) {
  switch (k) {
    case CellKind::fq_bmru: return "fq-bmru";
    case CellKind::lru: return "lru";
    case CellKind::min_gru: return "mingru";
  }
  return "?";
}

inline CellKind parse_cell_kind(const std::string& s) {
  if (s == "fq-bmru" || s == "fq_bmru") return CellKind::fq_bmru;
  if (s == "lru") return CellKind::lru;
  if (s == "mingru" || s == "min-gru" || s == "min_gru") return CellKind::min_gru;
  throw precondition_error("unknown cell kind '" + s + "'");
}

struct LinearParams {
  Tensor W;  // out x in
  Vec b;

  std::size_t in_dim() const { return W.cols(); }
  std::size_t out_dim() const { return W.rows(); }
  Vec operator()(std::span<const double> x) const { return affine(W, b, x); }
};

using CellParams = std::variant<FqBmruParams, LruParams, MinGruParams>;

struct HardwareBackbone {
  LinearParams input_proj;
  std::vector<CellParams> layers;
  std::vector<bool> skip;  // per layer; true adds the layer input to its output
  LinearParams classifier;

  std::size_t n_layers() const { return layers.size(); }
  std::size_t n_in() const { return input_proj.in_dim(); }
  std::size_t dim() const { return input_proj.out_dim(); }
  std::size_t n_classes() const { return classifier.out_dim(); }

  CellKind kind() const {
    if (layers.empty()) throw precondition_error("HardwareBackbone has no layers");
    return static_cast<CellKind>(layers.front().index());
  }

  /// Candidate projection of an FQ BMRU layer is the cell's own W_x, b_x.
  const FqBmruParams& fq(std::size_t l) const { return std::get<FqBmruParams>(layers.at(l)); }
  FqBmruParams& fq(std::size_t l) { return std::get<FqBmruParams>(layers.at(l)); }

  void validate() const {
    if (layers.empty()) throw precondition_error("HardwareBackbone needs at least one layer");
    if (skip.size() != layers.size()) throw dimension_error("HardwareBackbone: skip flags per layer");
    if (input_proj.b.size() != dim() || classifier.in_dim() != dim() ||
        classifier.b.size() != n_classes()) {
      throw dimension_error("HardwareBackbone: inconsistent linear shapes");
    }
    for (const auto& c : layers) {
      if (c.index() != layers.front().index()) throw precondition_error("mixed cell kinds");
      if (const auto* f = std::get_if<FqBmruParams>(&c)) {
        f->validate();
        if (f->dim() != dim() || f->input_dim() != dim()) throw dimension_error("FQ layer width");
      }
    }
  }
};

/// Named per-timestep signals of one forward pass; each probe is T x width.
struct Trace {
  std::vector<std::string> names;
  std::map<std::string, Tensor> probes;

  const Tensor& at(const std::string& name) const {
    auto it = probes.find(name);
    if (it == probes.end()) throw precondition_error("no probe named '" + name + "'");
    return it->second;
  }

  void init(const std::string& name, std::size_t T, std::size_t width) {
    names.push_back(name);
    probes[name] = Tensor::matrix(T, width);
  }

  void set(const std::string& name, std::size_t t, std::span<const double> v) {
    auto row = probes.at(name).row_span(t);
    std::copy(v.begin(), v.end(), row.begin());
  }
};

inline std::string probe_name(std::size_t layer, const char* what) {
  return "layer" + std::to_string(layer) + "." + what;
}

/// Called on a stage's signal before it is consumed downstream. Stages are
/// "input_proj", "layer{l}.candidate" (FQ BMRU), "layer{l}.state", "layer{l}.skip"
/// and "logits". For LRU the "state" signal is the recurrent state [re | im].
using NoiseHook = std::function<void(const std::string& stage, std::size_t t, std::span<double> signal)>;

/// Per-timestep logits (T x n_classes) from a T x n_in sequence. Initial
/// states are zero, matching a hardware reset.
inline Tensor forward_hw(const HardwareBackbone& net, const Tensor& seq, Trace* trace = nullptr,
                         const NoiseHook& hook = nullptr) {
  if (seq.rank() != 2 || seq.cols() != net.n_in()) {
    throw dimension_error("forward_hw: sequence shape " + shape_string(seq.shape()) +
                          " for input width " + std::to_string(net.n_in()));
  }
  if (!seq.all_finite()) throw precondition_error("forward_hw: non-finite input");
  const std::size_t T = seq.rows(), L = net.n_layers(), d = net.dim();
  const CellKind kind = net.kind();

  std::vector<std::string> cand_names(L), state_names(L), skip_names(L);
  for (std::size_t l = 0; l < L; ++l) {
    cand_names[l] = probe_name(l, "candidate");
    state_names[l] = probe_name(l, "state");
    skip_names[l] = probe_name(l, "skip");
  }
  if (trace) {
    *trace = Trace();
    trace->init("input_proj", T, d);
    for (std::size_t l = 0; l < L; ++l) {
      if (kind == CellKind::fq_bmru) trace->init(cand_names[l], T, d);
      trace->init(state_names[l], T, d);
      trace->init(skip_names[l], T, d);
    }
    trace->init("logits", T, net.n_classes());
  }

  std::vector<Vec> h(L, Vec(d, 0.0));
  std::vector<CVec> x(L);
  for (std::size_t l = 0; l < L; ++l) {
    if (kind == CellKind::lru) x[l] = CVec(std::get<LruParams>(net.layers[l]).dim(), {0.0, 0.0});
  }
  Tensor logits = Tensor::matrix(T, net.n_classes());
  Vec lru_buf;

  for (std::size_t t = 0; t < T; ++t) {
    Vec s = net.input_proj(seq.row_span(t));
    for (double& v : s) v = v > 0.0 ? v : 0.0;
    if (hook) hook("input_proj", t, s);
    if (trace) trace->set("input_proj", t, s);

    for (std::size_t l = 0; l < L; ++l) {
      Vec out;
      if (kind == CellKind::fq_bmru) {
        const auto& p = std::get<FqBmruParams>(net.layers[l]);
        Vec cand = fq_bmru_candidate(p, s);
        if (hook) hook(cand_names[l], t, cand);
        if (trace) trace->set(cand_names[l], t, cand);
        h[l] = fq_bmru_update(p, cand, h[l]);
        out = h[l];
      } else if (kind == CellKind::min_gru) {
        const auto& p = std::get<MinGruParams>(net.layers[l]);
        h[l] = min_gru_step(p, s, h[l]);
        if (hook) hook(state_names[l], t, h[l]);
        out = h[l];
      } else {
        const auto& p = std::get<LruParams>(net.layers[l]);
        x[l] = lru_step(p, s, x[l]).x;
        if (hook) {
          const std::size_t n = x[l].size();
          lru_buf.resize(2 * n);
          for (std::size_t i = 0; i < n; ++i) {
            lru_buf[i] = x[l][i].real();
            lru_buf[n + i] = x[l][i].imag();
          }
          hook(state_names[l], t, lru_buf);
          for (std::size_t i = 0; i < n; ++i) x[l][i] = {lru_buf[i], lru_buf[n + i]};
        }
        out = lru_readout(p, x[l], s);
      }
      if (trace) trace->set(state_names[l], t, out);
      if (net.skip[l]) {
        for (std::size_t i = 0; i < d; ++i) out[i] += s[i];
      }
      if (hook) hook(skip_names[l], t, out);
      if (trace) trace->set(skip_names[l], t, out);
      s = std::move(out);
    }

    Vec z = net.classifier(s);
    if (hook) hook("logits", t, z);
    if (trace) trace->set("logits", t, z);
    std::copy(z.begin(), z.end(), logits.row_span(t).begin());
  }
  return logits;
}

// ---------------------------------------------------------------------------
// Pooling

struct Vote {
  int label = 0;
  int margin = 0;  // winner votes minus runner-up votes
  std::vector<int> counts;
};

inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

/// Most frequent per-timestep argmax; ties go to the lowest class index.
inline Vote majority_vote(const Tensor& logits) {
  if (logits.rank() != 2 || logits.rows() == 0 || logits.cols() == 0) {
    throw precondition_error("majority_vote: need at least one timestep and one class");
  }
  Vote v;
  v.counts.assign(logits.cols(), 0);
  for (std::size_t t = 0; t < logits.rows(); ++t) ++v.counts[argmax_row(logits.row_span(t))];
  std::size_t best = 0;
  for (std::size_t c = 1; c < v.counts.size(); ++c) {
    if (v.counts[c] > v.counts[best]) best = c;
  }
  int runner = 0;
  for (std::size_t c = 0; c < v.counts.size(); ++c) {
    if (c != best) runner = std::max(runner, v.counts[c]);
  }
  v.label = static_cast<int>(best);
  v.margin = v.counts[best] - (v.counts.size() > 1 ? runner : 0);
  return v;
}

// ---------------------------------------------------------------------------
// Positional encoding

/// Interleaved sin/cos: pe[t][2i] = sin(t w_i), pe[t][2i+1] = cos(t w_i),
/// w_i = 10000^(-2i/dim).
inline Tensor sinusoidal_pe(std::size_t T, std::size_t dim = 32) {
  if (T == 0 || dim == 0 || dim % 2 != 0) throw precondition_error("sinusoidal_pe: need T >= 1 and even dim");
  Tensor pe = Tensor::matrix(T, dim);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      pe(t, 2 * i) = std::sin(static_cast<double>(t) * w);
      pe(t, 2 * i + 1) = std::cos(static_cast<double>(t) * w);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Bipolar to unipolar output conversion

/// Original BMRU with bipolar states h ∈ {-α, +α} followed by a linear head.
struct BipolarBmruNet {
  BmruParams cell;
  LinearParams head;
  Vec h0;
};

/// Same cell whose state is h+ = (h + α) / 2 ∈ {0, α}, read by head (2W, b - Wα).
struct UnipolarBmruNet {
  BmruParams cell;
  LinearParams head;
  Vec h0;
};

inline Tensor forward(const BipolarBmruNet& net, const Tensor& seq) {
  const Tensor states = scan_sequential(net.cell, seq, net.h0);
  Tensor logits = Tensor::matrix(seq.rows(), net.head.out_dim());
  for (std::size_t t = 0; t < seq.rows(); ++t) {
    Vec y = net.head(states.row_span(t));
    std::copy(y.begin(), y.end(), logits.row_span(t).begin());
  }
  return logits;
}

/// Unipolar state update: set to α on a positive open gate, to 0 on a negative
/// one, hold otherwise.
inline Tensor unipolar_states(const UnipolarBmruNet& net, const Tensor& seq) {
  const std::size_t d = net.cell.dim();
  Vec h = net.h0;
  Tensor out = Tensor::matrix(seq.rows(), d);
  for (std::size_t t = 0; t < seq.rows(); ++t) {
    const Vec h_hat = affine(net.cell.W_x, net.cell.b_x, seq.row_span(t));
    const Vec beta = affine(net.cell.W_beta, net.cell.b_beta, seq.row_span(t));
    for (std::size_t i = 0; i < d; ++i) {
      const double z = heaviside_value(std::fabs(h_hat[i]) - std::fabs(beta[i]));
      const double target = h_hat[i] > 0.0 ? net.cell.alpha[i] : 0.0;
      h[i] = z * target + (1.0 - z) * h[i];
      out(t, i) = h[i];
    }
  }
  return out;
}

inline Tensor forward(const UnipolarBmruNet& net, const Tensor& seq) {
  const Tensor states = unipolar_states(net, seq);
  Tensor logits = Tensor::matrix(seq.rows(), net.head.out_dim());
  for (std::size_t t = 0; t < seq.rows(); ++t) {
    Vec y = net.head(states.row_span(t));
    std::copy(y.begin(), y.end(), logits.row_span(t).begin());
  }
  return logits;
}

inline UnipolarBmruNet reparameterize_prop1(const BipolarBmruNet& net) {
  const std::size_t d = net.cell.dim();
  if (net.head.in_dim() != d || net.h0.size() != d) throw dimension_error("reparameterize_prop1: widths");
  UnipolarBmruNet out{net.cell, net.head, Vec(d)};
  for (double& w : out.head.W.values()) w *= 2.0;
  for (std::size_t k = 0; k < net.head.out_dim(); ++k) {
    double wa = 0.0;
    for (std::size_t i = 0; i < d; ++i) wa += net.head.W(k, i) * net.cell.alpha[i];
    out.head.b[k] = net.head.b[k] - wa;
  }
  for (std::size_t i = 0; i < d; ++i) out.h0[i] = (net.h0[i] + net.cell.alpha[i]) / 2.0;
  return out;
}

}  // namespace fqbmru
