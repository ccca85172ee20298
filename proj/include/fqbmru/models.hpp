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

// Trainable networks. Batches are time-major: row t*B + b of every (T*B) x k
// matrix holds timestep t of sequence b.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fqbmru/autodiff.hpp"
#include "fqbmru/backbone.hpp"
#include "fqbmru/cells.hpp"
#include "fqbmru/errors.hpp"
#include "fqbmru/tensor.hpp"

namespace fqbmru {

struct Batch {
  Tensor X;  // (T*B) x n
  std::vector<int> labels;  // one per sequence
  std::size_t T = 0;
  std::size_t B = 0;

  /// Label of every row, for the all-timestep loss.
  std::vector<int> row_labels() const {
    std::vector<int> out(T * B);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t b = 0; b < B; ++b) out[t * B + b] = labels[b];
    return out;
  }
};

/// Wraps one T x n sequence as a batch of one.
inline Batch single_sequence_batch(const Tensor& seq, int label = 0) {
  return {seq, {label}, seq.rows(), 1};
}

struct ForwardOptions {
  double eps = 0.0;
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;  // required when training with dropout or random initial state
  HeavisideMode heaviside = HeavisideMode::exact;
  bool random_h0 = false;
};

using NamedParameters = std::vector<Parameter*>;

namespace detail {

inline Var dropout(Tape& tape, const Var& x, const ForwardOptions& opt) {
  if (!opt.training || opt.dropout <= 0.0) return x;
  if (opt.rng == nullptr) throw precondition_error("dropout in training mode needs an rng");
  std::bernoulli_distribution keep(1.0 - opt.dropout);
  Tensor mask(x.value().shape());
  const double scale = 1.0 / (1.0 - opt.dropout);
  for (double& m : mask.values()) m = keep(*opt.rng) ? scale : 0.0;
  return x * tape.constant(std::move(mask));
}

inline Tensor to_row(const Vec& v) { return Tensor::row(v); }

inline Vec from_row(const Tensor& t) { return t.values(); }

inline Tensor softplus_inverse_row(const Vec& v) {
  Tensor out = Tensor::row(v);
  for (double& x : out.values()) x = softplus_inverse(x);
  return out;
}

inline Vec softplus_row(const Tensor& raw) {
  Vec out(raw.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_value(raw[i]);
  return out;
}

}  // namespace detail

struct LinearLayer {
  LinearLayer() = default;
  LinearLayer(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-k, k);
    Tensor w = Tensor::matrix(out, in), b = Tensor::matrix(1, out);
    for (double& v : w.values()) v = u(rng);
    for (double& v : b.values()) v = u(rng);
    W = Parameter(name + ".W", std::move(w));
    this->b = Parameter(name + ".b", std::move(b));
  }

  Var operator()(Tape& tape, const Var& x) { return linear(x, tape.leaf(W), tape.leaf(b)); }
  LinearParams export_params() const { return {W.value, b.value.values()}; }
  void collect(NamedParameters& out) { out.insert(out.end(), {&W, &b}); }

  Parameter W;
  Parameter b;
};

class RecurrentLayer {
 public:
  virtual ~RecurrentLayer() = default;
  /// (T*B) x in  ->  (T*B) x out
  virtual Var forward(Tape& tape, const Var& x, std::size_t T, std::size_t B, const ForwardOptions& opt) = 0;
  virtual void collect(NamedParameters& out) = 0;
  virtual CellParams export_params() const = 0;
  virtual std::size_t out_dim() const = 0;
  /// Candidate signal of the last forward pass (FQ BMRU only).
  Var last_candidate;
};

class FqBmruLayer final : public RecurrentLayer {
 public:
  FqBmruLayer(const std::string& name, std::size_t in, std::size_t d, Rng& rng) {
    const FqBmruParams p = init_fq_bmru(d, in, rng);
    W_x = Parameter(name + ".W_x", p.W_x);
    b_x = Parameter(name + ".b_x", detail::to_row(p.b_x));
    beta_lo_raw = Parameter(name + ".beta_lo_raw", detail::softplus_inverse_row(p.beta_lo));
    delta_raw = Parameter(name + ".delta_raw", detail::softplus_inverse_row(p.delta));
    alpha_raw = Parameter(name + ".alpha_raw", detail::softplus_inverse_row(p.alpha));
  }

  Var forward(Tape& tape, const Var& x, std::size_t T, std::size_t B, const ForwardOptions& opt) override {
    const std::size_t d = out_dim();
    Var cand = relu(linear(x, tape.leaf(W_x), tape.leaf(b_x)));
    cand = detail::dropout(tape, cand, opt);
    last_candidate = cand;
    Var lo = softplus(tape.leaf(beta_lo_raw));
    Var hi = lo + softplus(tape.leaf(delta_raw));
    Var alpha = softplus(tape.leaf(alpha_raw));
    Var z_lo = heaviside(lo - cand, opt.heaviside);
    Var z_hi = heaviside(cand - hi, opt.heaviside);
    Var a = one_minus(z_lo) * one_minus(z_hi);
    Var b = z_hi * alpha;
    Var h0;
    if (opt.random_h0) {
      if (opt.rng == nullptr) throw precondition_error("random initial state needs an rng");
      std::uniform_real_distribution<double> u(0.0, 1.0);
      Tensor centered = Tensor::matrix(B, d);
      for (double& v : centered.values()) v = u(*opt.rng) - 0.5;
      h0 = heaviside(tape.constant(std::move(centered)), opt.heaviside) * alpha;
    } else {
      h0 = tape.constant(Tensor::matrix(B, d));
    }
    return linear_recurrence(a, b, h0, opt.eps, T, B);
  }

  void collect(NamedParameters& out) override {
    out.insert(out.end(), {&W_x, &b_x, &beta_lo_raw, &delta_raw, &alpha_raw});
  }

  CellParams export_params() const override {
    FqBmruParams p;
    p.W_x = W_x.value;
    p.b_x = detail::from_row(b_x.value);
    p.beta_lo = detail::softplus_row(beta_lo_raw.value);
    p.delta = detail::softplus_row(delta_raw.value);
    p.alpha = detail::softplus_row(alpha_raw.value);
    return p;
  }

  std::size_t out_dim() const override { return W_x.value.rows(); }

  Parameter W_x, b_x, beta_lo_raw, delta_raw, alpha_raw;
};

class LruLayer final : public RecurrentLayer {
 public:
  LruLayer(const std::string& name, std::size_t in, std::size_t d, std::size_t d_out, Rng& rng) {
    const LruParams p = init_lru(d, in, d_out, rng);
    nu = Parameter(name + ".nu", detail::to_row(p.nu));
    theta = Parameter(name + ".theta", detail::to_row(p.theta));
    B_re = Parameter(name + ".B_re", p.B_re);
    B_im = Parameter(name + ".B_im", p.B_im);
    C_re = Parameter(name + ".C_re", p.C_re);
    C_im = Parameter(name + ".C_im", p.C_im);
    D = Parameter(name + ".D", p.D);
  }

  Var forward(Tape& tape, const Var& x_in, std::size_t T, std::size_t B, const ForwardOptions& opt) override {
    const std::size_t d = nu.value.size();
    Var x = detail::dropout(tape, x_in, opt);
    Var mag = exp(neg(exp(tape.leaf(nu))));
    Var phase = exp(tape.leaf(theta));
    Var lam = concat_cols({mag * cos(phase), mag * sin(phase)});
    Var gamma = sqrt(one_minus(square(mag)));
    Var drive = concat_cols({linear(x, tape.leaf(B_re)) * gamma, linear(x, tape.leaf(B_im)) * gamma});
    Var state = complex_linear_recurrence(lam, drive, T, B);
    Var re = slice_cols(state, 0, d), im = slice_cols(state, d, d);
    return linear(re, tape.leaf(C_re)) - linear(im, tape.leaf(C_im)) + linear(x, tape.leaf(D));
  }

  void collect(NamedParameters& out) override {
    out.insert(out.end(), {&nu, &theta, &B_re, &B_im, &C_re, &C_im, &D});
  }

  CellParams export_params() const override {
    LruParams p;
    p.nu = nu.value.values();
    p.theta = theta.value.values();
    p.B_re = B_re.value;
    p.B_im = B_im.value;
    p.C_re = C_re.value;
    p.C_im = C_im.value;
    p.D = D.value;
    return p;
  }

  std::size_t out_dim() const override { return C_re.value.rows(); }

  Parameter nu, theta, B_re, B_im, C_re, C_im, D;
};

class MinGruLayer final : public RecurrentLayer {
 public:
  MinGruLayer(const std::string& name, std::size_t in, std::size_t d, Rng& rng) {
    const MinGruParams p = init_min_gru(d, in, rng);
    W_z = Parameter(name + ".W_z", p.W_z);
    W_h = Parameter(name + ".W_h", p.W_h);
    b_z = Parameter(name + ".b_z", detail::to_row(p.b_z));
    b_h = Parameter(name + ".b_h", detail::to_row(p.b_h));
  }

  Var forward(Tape& tape, const Var& x_in, std::size_t T, std::size_t B, const ForwardOptions& opt) override {
    Var x = detail::dropout(tape, x_in, opt);
    Var z = sigmoid(linear(x, tape.leaf(W_z), tape.leaf(b_z)));
    Var cand = linear(x, tape.leaf(W_h), tape.leaf(b_h));
    Var h0 = tape.constant(Tensor::matrix(B, out_dim()));
    return linear_recurrence(one_minus(z), z * cand, h0, 0.0, T, B);
  }

  void collect(NamedParameters& out) override { out.insert(out.end(), {&W_z, &W_h, &b_z, &b_h}); }

  CellParams export_params() const override {
    return MinGruParams{W_z.value, W_h.value, b_z.value.values(), b_h.value.values()};
  }

  std::size_t out_dim() const override { return W_z.value.rows(); }

  Parameter W_z, W_h, b_z, b_h;
};

/// Identity "cell", used to check that the software backbone degenerates to
/// a residual MLP when recurrence is removed.
class PassthroughLayer final : public RecurrentLayer {
 public:
  explicit PassthroughLayer(std::size_t width) : width_(width) {}
  Var forward(Tape&, const Var& x, std::size_t, std::size_t, const ForwardOptions&) override { return x; }
  void collect(NamedParameters&) override {}
  CellParams export_params() const override {
    throw precondition_error("passthrough layer has no cell parameters");
  }
  std::size_t out_dim() const override { return width_; }

 private:
  std::size_t width_;
};

inline std::unique_ptr<RecurrentLayer> make_recurrent_layer(CellKind kind, const std::string& name,
                                                            std::size_t in, std::size_t d,
                                                            std::size_t out, Rng& rng) {
  switch (kind) {
    case CellKind::fq_bmru: return std::make_unique<FqBmruLayer>(name, in, d, rng);
    case CellKind::lru: return std::make_unique<LruLayer>(name, in, d, out, rng);
    case CellKind::min_gru: return std::make_unique<MinGruLayer>(name, in, d, rng);
  }
  throw precondition_error("unknown cell kind");
}

// ---------------------------------------------------------------------------
// Hardware-style network

struct HwNetConfig {
  CellKind kind = CellKind::fq_bmru;
  std::size_t n_in = 13;
  std::size_t d = 4;
  std::size_t n_layers = 2;
  std::size_t n_classes = 2;
  bool skip = true;
  std::uint64_t seed = 0;
};

class HardwareNet {
 public:
  explicit HardwareNet(const HwNetConfig& cfg) : cfg_(cfg) {
    if (cfg.n_layers == 0 || cfg.d == 0 || cfg.n_in == 0 || cfg.n_classes < 2) {
      throw precondition_error("HardwareNet: need n_layers, d, n_in >= 1 and n_classes >= 2");
    }
    Rng rng(cfg.seed);
    input_proj_ = LinearLayer("input_proj", cfg.n_in, cfg.d, rng);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      layers_.push_back(make_recurrent_layer(cfg.kind, "layer" + std::to_string(l), cfg.d, cfg.d, cfg.d, rng));
    }
    classifier_ = LinearLayer("classifier", cfg.d, cfg.n_classes, rng);
  }

  const HwNetConfig& config() const { return cfg_; }
  bool uses_eps() const { return cfg_.kind == CellKind::fq_bmru; }

  /// Logits for every row of the batch, (T*B) x n_classes.
  Var forward(Tape& tape, const Batch& batch, const ForwardOptions& opt) {
    Var s = relu(input_proj_(tape, tape.constant(batch.X)));
    for (auto& layer : layers_) {
      Var out = layer->forward(tape, s, batch.T, batch.B, opt);
      s = cfg_.skip ? out + s : out;
    }
    return classifier_(tape, s);
  }

  NamedParameters parameters() {
    NamedParameters out;
    input_proj_.collect(out);
    for (auto& layer : layers_) layer->collect(out);
    classifier_.collect(out);
    return out;
  }

  HardwareBackbone export_backbone() const {
    HardwareBackbone b;
    b.input_proj = input_proj_.export_params();
    for (const auto& layer : layers_) b.layers.push_back(layer->export_params());
    b.skip.assign(layers_.size(), cfg_.skip);
    b.classifier = classifier_.export_params();
    return b;
  }

  Tensor predict_logits(const Tensor& seq) const { return forward_hw(export_backbone(), seq); }

 private:
  HwNetConfig cfg_;
  LinearLayer input_proj_;
  std::vector<std::unique_ptr<RecurrentLayer>> layers_;
  LinearLayer classifier_;
};

// ---------------------------------------------------------------------------
// Software backbone

enum class SwCell { fq_bmru, lru, min_gru, passthrough };

struct SwNetConfig {
  SwCell cell = SwCell::fq_bmru;
  std::size_t n_in = 28;
  std::size_t m = 64;
  std::size_t r = 2;
  std::size_t d = 32;
  std::size_t n_classes = 10;
  std::size_t pe_dim = 32;
  std::uint64_t seed = 0;
};

struct LayerNormLayer {
  LayerNormLayer() = default;
  LayerNormLayer(const std::string& name, std::size_t width)
      : gain(name + ".gain", Tensor::matrix(1, width, 1.0)), bias(name + ".bias", Tensor::matrix(1, width, 0.0)) {}

  Var operator()(Tape& tape, const Var& x) { return layer_norm_rows(x) * tape.leaf(gain) + tape.leaf(bias); }
  void collect(NamedParameters& out) { out.insert(out.end(), {&gain, &bias}); }

  Parameter gain, bias;
};

/// x + W2 ReLU(W1 x + b1) + b2, hidden width 4m.
struct ResidualMlp {
  ResidualMlp() = default;
  ResidualMlp(const std::string& name, std::size_t m, Rng& rng)
      : up(name + ".up", m, 4 * m, rng), down(name + ".down", 4 * m, m, rng) {}

  Var operator()(Tape& tape, const Var& x) { return x + down(tape, relu(up(tape, x))); }
  void collect(NamedParameters& out) {
    up.collect(out);
    down.collect(out);
  }

  LinearLayer up, down;
};

/// a ⊙ σ(b) for x = (a ‖ b) split in halves along columns.
inline Var glu(const Var& x) {
  if (x.cols() % 2 != 0) throw dimension_error("glu: odd width");
  const std::size_t h = x.cols() / 2;
  return slice_cols(x, 0, h) * sigmoid(slice_cols(x, h, h));
}

struct SwBlock {
  // Recurrent sub-layer: Norm(Linear(Cell(u))) ⊙ σ(Linear(u)), u = Norm(x).
  LayerNormLayer rec_norm;
  std::unique_ptr<RecurrentLayer> cell;
  LinearLayer rec_out;
  LayerNormLayer rec_out_norm;
  LinearLayer rec_gate;
  Parameter upsilon_rec;
  // MLP sub-layer: W_out GLU(W_in Norm(x)).
  LayerNormLayer mlp_norm;
  LinearLayer mlp_in;
  LinearLayer mlp_out;
  Parameter upsilon_mlp;
};

class SoftwareNet {
 public:
  explicit SoftwareNet(const SwNetConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.seed);
    const std::size_t m = cfg.m;
    enc_in_ = LinearLayer("encoder.in", cfg.n_in, m, rng);
    enc_mlp_ = ResidualMlp("encoder.mlp", m, rng);
    pe_proj_ = LinearLayer("pe_proj", m + cfg.pe_dim, m, rng);
    for (std::size_t i = 0; i < cfg.r; ++i) {
      const std::string n = "block" + std::to_string(i);
      auto blk = std::make_unique<SwBlock>();
      blk->rec_norm = LayerNormLayer(n + ".rec_norm", m);
      std::size_t cell_out = cfg.d;
      if (cfg.cell == SwCell::passthrough) {
        blk->cell = std::make_unique<PassthroughLayer>(m);
        cell_out = m;
      } else {
        const CellKind k = cfg.cell == SwCell::fq_bmru ? CellKind::fq_bmru
                           : cfg.cell == SwCell::lru  ? CellKind::lru
                                                      : CellKind::min_gru;
        blk->cell = make_recurrent_layer(k, n + ".cell", m, cfg.d, cfg.d, rng);
      }
      blk->rec_out = LinearLayer(n + ".rec_out", cell_out, m, rng);
      blk->rec_out_norm = LayerNormLayer(n + ".rec_out_norm", m);
      blk->rec_gate = LinearLayer(n + ".rec_gate", m, m, rng);
      blk->upsilon_rec = Parameter(n + ".upsilon_rec", Tensor::matrix(1, m, 1.0));
      blk->mlp_norm = LayerNormLayer(n + ".mlp_norm", m);
      blk->mlp_in = LinearLayer(n + ".mlp_in", m, 8 * m, rng);
      blk->mlp_out = LinearLayer(n + ".mlp_out", 4 * m, m, rng);
      blk->upsilon_mlp = Parameter(n + ".upsilon_mlp", Tensor::matrix(1, m, 1.0));
      blocks_.push_back(std::move(blk));
    }
    dec_mlp_ = ResidualMlp("decoder.mlp", m, rng);
    dec_out_ = LinearLayer("decoder.out", m, cfg.n_classes, rng);
  }

  const SwNetConfig& config() const { return cfg_; }
  bool uses_eps() const { return cfg_.cell == SwCell::fq_bmru; }
  std::vector<std::unique_ptr<SwBlock>>& blocks() { return blocks_; }

  Var block_forward(Tape& tape, SwBlock& blk, const Var& x, std::size_t T, std::size_t B,
                    const ForwardOptions& opt) {
    Var u = blk.rec_norm(tape, x);
    Var c = blk.cell->forward(tape, u, T, B, opt);
    Var rec = blk.rec_out_norm(tape, blk.rec_out(tape, c)) * sigmoid(blk.rec_gate(tape, u));
    Var y = tape.leaf(blk.upsilon_rec) * x + rec;
    Var v = blk.mlp_norm(tape, y);
    Var g = detail::dropout(tape, glu(blk.mlp_in(tape, v)), opt);
    return tape.leaf(blk.upsilon_mlp) * y + blk.mlp_out(tape, g);
  }

  Var forward(Tape& tape, const Batch& batch, const ForwardOptions& opt) {
    Var x = enc_mlp_(tape, enc_in_(tape, tape.constant(batch.X)));
    const Tensor pe = sinusoidal_pe(batch.T, cfg_.pe_dim);
    Tensor pe_rows = Tensor::matrix(batch.T * batch.B, cfg_.pe_dim);
    for (std::size_t t = 0; t < batch.T; ++t)
      for (std::size_t b = 0; b < batch.B; ++b)
        for (std::size_t j = 0; j < cfg_.pe_dim; ++j) pe_rows(t * batch.B + b, j) = pe(t, j);
    x = pe_proj_(tape, concat_cols({x, tape.constant(std::move(pe_rows))}));
    for (auto& blk : blocks_) x = block_forward(tape, *blk, x, batch.T, batch.B, opt);
    return dec_out_(tape, dec_mlp_(tape, x));
  }

  NamedParameters parameters() {
    NamedParameters out;
    enc_in_.collect(out);
    enc_mlp_.collect(out);
    pe_proj_.collect(out);
    for (auto& blk : blocks_) {
      blk->rec_norm.collect(out);
      blk->cell->collect(out);
      blk->rec_out.collect(out);
      blk->rec_out_norm.collect(out);
      blk->rec_gate.collect(out);
      out.push_back(&blk->upsilon_rec);
      blk->mlp_norm.collect(out);
      blk->mlp_in.collect(out);
      blk->mlp_out.collect(out);
      out.push_back(&blk->upsilon_mlp);
    }
    dec_mlp_.collect(out);
    dec_out_.collect(out);
    return out;
  }

 private:
  SwNetConfig cfg_;
  LinearLayer enc_in_;
  ResidualMlp enc_mlp_;
  LinearLayer pe_proj_;
  std::vector<std::unique_ptr<SwBlock>> blocks_;
  ResidualMlp dec_mlp_;
  LinearLayer dec_out_;
};

/// Per-timestep logits (T x n_classes) of the software backbone, eval mode.
inline Tensor forward_sw(SoftwareNet& net, const Tensor& seq) {
  Tape tape(false);
  return net.forward(tape, single_sequence_batch(seq), ForwardOptions{}).value();
}

}  // namespace fqbmru
