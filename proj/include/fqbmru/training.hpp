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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fqbmru/autodiff.hpp"
#include "fqbmru/data.hpp"
#include "fqbmru/errors.hpp"
#include "fqbmru/models.hpp"

namespace fqbmru {

struct TrainConfig {
  double lr0 = 1e-3;
  double weight_decay = 1e-4;
  double warmup_frac = 0.01;
  double clip_norm = 1.0;
  std::size_t batch = 64;
  std::size_t max_iters = 2000;
  std::size_t eval_every = 64;
  std::size_t eval_batches = 20;
  double dropout = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool use_eps_schedule = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr0 > 0) || weight_decay < 0 || !(warmup_frac >= 0 && warmup_frac < 1) || !(clip_norm > 0) ||
        batch == 0 || max_iters == 0 || eval_every == 0 || eval_batches == 0 || dropout < 0 ||
        dropout >= 1) {
      throw precondition_error("TrainConfig: invalid value");
    }
  }
};

struct EpsSchedule {
  double hold_frac = 0.05;
  double decay_frac = 0.70;
  double zero_frac = 0.25;
};

/// Linear warm-up from 0 to lr0, then cosine decay to 0 at max_iters.
inline double lr_at(const TrainConfig& cfg, std::size_t iter) {
  if (iter > cfg.max_iters) throw precondition_error("lr_at: iteration beyond max_iters");
  const double warm = std::max(1.0, std::round(cfg.warmup_frac * static_cast<double>(cfg.max_iters)));
  const double it = static_cast<double>(iter);
  if (it < warm) return cfg.lr0 * it / warm;
  const double span = static_cast<double>(cfg.max_iters) - warm;
  const double p = span > 0 ? (it - warm) / span : 1.0;
  return cfg.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

inline double eps_at(const EpsSchedule& s, double frac) {
  if (frac < 0.0 || frac > 1.0) throw precondition_error("eps_at: fraction outside [0, 1]");
  if (frac < s.hold_frac) return 1.0;
  const double end = s.hold_frac + s.decay_frac;
  if (frac >= end) return 0.0;
  return 1.0 - (frac - s.hold_frac) / s.decay_frac;
}

/// Mean over timesteps of -log softmax(logits[t])[label].
inline double ce_loss_over_time(const Tensor& logits, int label) {
  Tape tape(false);
  std::vector<int> labels(logits.rows(), label);
  return cross_entropy_rows(tape.constant(logits), labels).value().item();
}

// ---------------------------------------------------------------------------
// Optimizer

class AdamW {
 public:
  AdamW(NamedParameters params, double weight_decay = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : params_(std::move(params)), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k]->value;
      const auto& g = params_[k]->grad;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
        const double mh = m[i] / c1, vh = v[i] / c2;
        w[i] -= lr * wd_ * w[i];
        w[i] -= lr * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::size_t steps() const { return t_; }

 private:
  NamedParameters params_;
  double wd_, b1_, b2_, eps_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_global_norm(const NamedParameters& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params)
    for (double g : p->grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params)
      for (double& g : p->grad.values()) g *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Loop

struct Checkpoint {
  std::map<std::string, Tensor> tensors;  // raw parameters by name
  std::size_t iteration = 0;
  double val_loss = std::numeric_limits<double>::infinity();
  double eps = 0.0;
  bool valid = false;
};

template <class Model>
Checkpoint snapshot(Model& model, std::size_t iter, double val_loss, double eps) {
  Checkpoint c;
  for (auto* p : model.parameters()) c.tensors[p->name] = p->value;
  c.iteration = iter;
  c.val_loss = val_loss;
  c.eps = eps;
  c.valid = true;
  return c;
}

template <class Model>
void restore(Model& model, const Checkpoint& c) {
  for (auto* p : model.parameters()) {
    auto it = c.tensors.find(p->name);
    if (it == c.tensors.end()) throw format_error("checkpoint lacks tensor '" + p->name + "'", 0);
    if (it->second.shape() != p->value.shape()) {
      throw format_error("checkpoint tensor '" + p->name + "' has shape " + shape_string(it->second.shape()), 0);
    }
    p->value = it->second;
    p->zero_grad();
  }
}

struct TrainLogRow {
  std::size_t iter;
  double loss;
  double val_loss;  // NaN when not evaluated at this iteration
  double eps;
  double lr;
};

inline void write_train_log(std::ostream& os, const std::vector<TrainLogRow>& rows) {
  os << "iter,loss,val_loss,eps,lr\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.iter << ',' << r.loss << ',';
    if (!std::isnan(r.val_loss)) os << r.val_loss;
    os << ',' << r.eps << ',' << r.lr << '\n';
  }
}

struct TrainResult {
  Checkpoint best;
  std::vector<TrainLogRow> log;
};

template <class Model>
double mean_loss(Model& model, const Dataset& data, const std::vector<std::size_t>& order, std::size_t batch,
                 std::size_t n_batches, double eps) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < n_batches; ++k) {
    const std::size_t start = k * batch;
    if (start >= order.size()) break;
    const std::size_t end = std::min(order.size(), start + batch);
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    const Batch b = make_batch(data, idx);
    Tape tape(false);
    ForwardOptions opt;
    opt.eps = eps;
    const auto labels = b.row_labels();
    total += cross_entropy_rows(model.forward(tape, b, opt), labels).value().item() * static_cast<double>(idx.size());
    count += idx.size();
  }
  return count ? total / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

/// Trains `model` in place and leaves it holding the best checkpoint's
/// parameters. Checkpoints are eligible only once eps has reached zero.
template <class Model>
TrainResult train(Model& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const std::string& nan_dump_path = "") {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw precondition_error("train: empty dataset");
  const bool eps_on = cfg.use_eps_schedule && model.uses_eps();
  const EpsSchedule sched;
  Rng rng(cfg.seed);
  auto params = model.parameters();
  AdamW opt(params, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::vector<std::size_t> val_order(val_set.size());
  std::iota(val_order.begin(), val_order.end(), 0);

  TrainResult result;
  for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
    const double frac = static_cast<double>(iter) / static_cast<double>(cfg.max_iters);
    const double eps = eps_on ? eps_at(sched, frac) : 0.0;
    const double lr = lr_at(cfg, iter);

    std::vector<std::size_t> idx;
    while (idx.size() < std::min(cfg.batch, train_set.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const Batch batch = make_batch(train_set, idx);
    const auto labels = batch.row_labels();

    ForwardOptions fo;
    fo.eps = eps;
    fo.training = true;
    fo.dropout = cfg.dropout;
    fo.rng = &rng;
    fo.random_h0 = true;
    double loss = 0.0;
    opt.zero_grad();
    try {
      Tape tape;
      Var l = cross_entropy_rows(model.forward(tape, batch, fo), labels);
      loss = l.value().item();
      tape.backward(l);
    } catch (const numerical_error& e) {
      loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "non-finite training loss at iteration " << iter << " (eps " << eps << ", lr " << lr << ")";
      if (!nan_dump_path.empty()) {
        std::ofstream dump(nan_dump_path);
        dump << msg.str() << "\nbatch indices:";
        for (auto i : idx) dump << ' ' << i;
        dump << "\nlabels:";
        for (auto y : batch.labels) dump << ' ' << y;
        dump << "\nrows " << batch.X.rows() << " cols " << batch.X.cols() << '\n';
        dump.precision(17);
        for (std::size_t r = 0; r < batch.X.rows(); ++r) {
          for (std::size_t c = 0; c < batch.X.cols(); ++c) dump << (c ? "," : "") << batch.X(r, c);
          dump << '\n';
        }
        msg << "; last batch written to " << nan_dump_path;
      }
      throw numerical_error(msg.str());
    }
    clip_global_norm(params, cfg.clip_norm);
    opt.step(lr);

    double val = std::numeric_limits<double>::quiet_NaN();
    const bool last = iter + 1 == cfg.max_iters;
    if ((iter + 1) % cfg.eval_every == 0 || last) {
      val = mean_loss(model, val_set, val_order, cfg.batch, cfg.eval_batches, eps);
      if (eps == 0.0 && (!result.best.valid || val < result.best.val_loss)) {
        result.best = snapshot(model, iter + 1, val, eps);
      }
    }
    result.log.push_back({iter, loss, val, eps, lr});
  }
  if (!result.best.valid) throw precondition_error("train: no evaluation happened with eps = 0");
  restore(model, result.best);
  return result;
}

/// Fraction of sequences whose majority vote matches the label.
inline double accuracy(const HardwareBackbone& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (majority_vote(forward_hw(net, data.sequence(i))).label == data.labels[i]) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

inline double accuracy(SoftwareNet& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (majority_vote(forward_sw(net, data.sequence(i))).label == data.labels[i]) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

}  // namespace fqbmru
