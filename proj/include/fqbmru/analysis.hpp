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

// Robustness studies: per-timestep signal-noise sweeps over trained
// variants, static mismatch Monte Carlo on compiled netlists, and the
// component power model.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "fqbmru/analog.hpp"
#include "fqbmru/backbone.hpp"
#include "fqbmru/data.hpp"

namespace fqbmru {

// ---------------------------------------------------------------------------
// Noise sweep

enum class AmplitudeMode { peak, rms };

struct NoiseSweepConfig {
  std::vector<double> levels{0.0, 0.5, 1.0, 2.0, 4.0};
  std::size_t instantiations = 10;
  double noise_rel = 0.05;  // baseline analog noise, fraction of nominal amplitude
  AmplitudeMode amplitude = AmplitudeMode::peak;
  std::uint64_t seed = 0;

  void validate() const {
    if (levels.empty() || instantiations == 0 || !(noise_rel > 0)) {
      throw precondition_error("NoiseSweepConfig: need levels, instantiations >= 1 and noise_rel > 0");
    }
    for (double l : levels) {
      if (l < 0.0) throw precondition_error("NoiseSweepConfig: negative level");
    }
  }
};

/// Nominal amplitude of every hooked stage over a clean pass of `data`.
inline std::map<std::string, double> stage_amplitudes(const HardwareBackbone& net, const Dataset& data,
                                                      AmplitudeMode mode) {
  std::map<std::string, double> peak, sq;
  std::map<std::string, std::size_t> count;
  for (std::size_t i = 0; i < data.size(); ++i) {
    forward_hw(net, data.sequence(i), nullptr, [&](const std::string& s, std::size_t, std::span<double> v) {
      for (double e : v) {
        peak[s] = std::max(peak[s], std::fabs(e));
        sq[s] += e * e;
      }
      count[s] += v.size();
    });
  }
  if (mode == AmplitudeMode::peak) return peak;
  std::map<std::string, double> rms;
  for (const auto& [s, total] : sq) rms[s] = std::sqrt(total / static_cast<double>(count[s]));
  return rms;
}

struct NoiseRow {
  std::string variant;
  double level = 0.0;
  double accuracy = 0.0;
};

/// Accuracy of one variant when every hooked stage receives i.i.d. Gaussian
/// noise of std level × noise_rel × amplitude(stage) at every timestep.
inline double noisy_accuracy(const HardwareBackbone& net, const Dataset& data,
                             const std::map<std::string, double>& amp, double level, const NoiseSweepConfig& cfg,
                             std::uint64_t seed) {
  if (data.size() == 0) return 0.0;
  if (level == 0.0) return accuracy(net, data);
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const NoiseHook hook = [&](const std::string& s, std::size_t, std::span<double> v) {
    auto it = amp.find(s);
    const double sd = level * cfg.noise_rel * (it == amp.end() ? 0.0 : it->second);
    for (double& e : v) e += sd * g(rng);
  };
  std::size_t ok = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor seq = data.sequence(i);
    for (std::size_t k = 0; k < cfg.instantiations; ++k) {
      if (majority_vote(forward_hw(net, seq, nullptr, hook)).label == data.labels[i]) ++ok;
    }
  }
  return static_cast<double>(ok) / static_cast<double>(data.size() * cfg.instantiations);
}

struct NamedVariant {
  std::string name;
  const HardwareBackbone* net;
};

inline std::vector<NoiseRow> noise_sweep(const std::vector<NamedVariant>& variants, const Dataset& data,
                                         const NoiseSweepConfig& cfg) {
  cfg.validate();
  std::vector<NoiseRow> rows;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const auto amp = stage_amplitudes(*variants[v].net, data, cfg.amplitude);
    for (std::size_t k = 0; k < cfg.levels.size(); ++k) {
      const std::uint64_t seed = cfg.seed * 1000003ULL + v * 1009ULL + k;
      rows.push_back({variants[v].name, cfg.levels[k], noisy_accuracy(*variants[v].net, data, amp, cfg.levels[k], cfg, seed)});
    }
  }
  return rows;
}

inline void write_noise_sweep(std::ostream& os, const std::vector<NoiseRow>& rows) {
  os << "variant,level,accuracy\n";
  os.precision(17);
  for (const auto& r : rows) os << r.variant << ',' << r.level << ',' << r.accuracy << '\n';
}

// ---------------------------------------------------------------------------
// Mismatch Monte Carlo

struct MismatchRun {
  std::size_t draws = 200;
  PerturbationSpec spec;  // spec.seed is the base seed; draw k uses seed + k
};

struct SampleRecord {
  std::size_t sample_id = 0;
  int label = 0;
  int nominal_label = 0;
  int margin = 0;
  std::size_t flips = 0;
  double impaired_rate = 0.0;
};

struct DrawRecord {
  std::size_t draw_id = 0;
  std::size_t flipped = 0;
  double accuracy = 0.0;
};

struct MismatchResult {
  std::vector<SampleRecord> samples;
  std::vector<DrawRecord> draws;
};

/// `sample_ids` index `data`; inputs are network-unit features converted to
/// currents. One die per draw, shared by all samples.
inline MismatchResult mismatch_mc(const Netlist& net, const Dataset& data, const std::vector<std::size_t>& sample_ids,
                                  const MismatchRun& run) {
  if (run.draws == 0) throw precondition_error("mismatch_mc: need at least one draw");
  run.spec.validate();
  MismatchResult res;
  std::vector<Tensor> inputs;
  for (std::size_t id : sample_ids) {
    if (id >= data.size()) throw precondition_error("mismatch_mc: sample id out of range");
    inputs.push_back(to_currents(data.sequence(id)));
    const Vote v = simulate(net, inputs.back()).vote;
    res.samples.push_back({id, data.labels[id], v.label, v.margin, 0, 0.0});
  }
  for (std::size_t k = 0; k < run.draws; ++k) {
    PerturbationSpec spec = run.spec;
    spec.seed = run.spec.seed + k;
    const Netlist die = instantiate_die(net, spec);
    SimOptions opt;
    opt.leakage_floor_pA = spec.leakage_floor_pA;
    DrawRecord d{k, 0, 0.0};
    std::size_t ok = 0;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
      const int pred = simulate(die, inputs[s], opt).vote.label;
      if (pred != res.samples[s].nominal_label) {
        ++res.samples[s].flips;
        ++d.flipped;
      }
      if (pred == res.samples[s].label) ++ok;
    }
    d.accuracy = inputs.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(inputs.size());
    res.draws.push_back(d);
  }
  for (auto& s : res.samples) s.impaired_rate = static_cast<double>(s.flips) / static_cast<double>(run.draws);
  return res;
}

/// n samples spread evenly over the nominal-margin ranking, so the subset
/// covers both boundary and confident cases.
inline std::vector<std::size_t> margin_stratified_subset(const Netlist& net, const Dataset& data, std::size_t n) {
  if (n == 0 || data.size() == 0) return {};
  std::vector<std::pair<int, std::size_t>> ranked;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ranked.push_back({simulate(net, to_currents(data.sequence(i))).vote.margin, i});
  }
  std::stable_sort(ranked.begin(), ranked.end());
  n = std::min(n, ranked.size());
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t pos = n == 1 ? 0 : k * (ranked.size() - 1) / (n - 1);
    out.push_back(ranked[pos].second);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct MarginSummary {
  std::size_t n_flipped = 0, n_never = 0;
  double median_flipped = std::nan(""), median_never = std::nan("");
};

inline MarginSummary margin_summary(const MismatchResult& r) {
  std::vector<double> flipped, never;
  for (const auto& s : r.samples) (s.flips > 0 ? flipped : never).push_back(s.margin);
  return {flipped.size(), never.size(), median(flipped), median(never)};
}

inline void write_mc_inputs(std::ostream& os, const MismatchResult& r) {
  os << "input_id,label,nominal_label,margin,impaired_rate\n";
  os.precision(17);
  for (const auto& s : r.samples) {
    os << s.sample_id << ',' << s.label << ',' << s.nominal_label << ',' << s.margin << ',' << s.impaired_rate << '\n';
  }
}

inline void write_mc_draws(std::ostream& os, const MismatchResult& r) {
  os << "draw_id,flipped,accuracy\n";
  os.precision(17);
  for (const auto& d : r.draws) os << d.draw_id << ',' << d.flipped << ',' << d.accuracy << '\n';
}

// ---------------------------------------------------------------------------
// Power model, referenced to the measured two-layer d = 4 network:
// 40 nW in the cells (linear in d) and 30 nW in FC and skip wiring (∝ d²).

struct PowerRow {
  std::size_t d = 0;
  double p_bmru_nW = 0.0;
  double p_fc_nW = 0.0;
  double share_bmru = 0.0;
  double share_fc = 0.0;
};

inline PowerRow power_report(std::size_t d, std::size_t n_layers = 2) {
  if (d == 0 || n_layers == 0) throw precondition_error("power_report: d and n_layers must be >= 1");
  const double x = static_cast<double>(d) / 4.0, layers = static_cast<double>(n_layers) / 2.0;
  PowerRow r;
  r.d = d;
  r.p_bmru_nW = 40.0 * x * layers;
  r.p_fc_nW = 30.0 * x * x * layers;
  const double total = r.p_bmru_nW + r.p_fc_nW;
  r.share_bmru = r.p_bmru_nW / total;
  r.share_fc = r.p_fc_nW / total;
  return r;
}

inline void write_power_report(std::ostream& os, const std::vector<PowerRow>& rows) {
  os << "d,p_bmru_nW,p_fc_nW,share_bmru,share_fc\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.d << ',' << r.p_bmru_nW << ',' << r.p_fc_nW << ',' << r.share_bmru << ',' << r.share_fc << '\n';
  }
}

}  // namespace fqbmru
