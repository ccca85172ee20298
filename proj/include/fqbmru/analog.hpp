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

// Behavioral current-mode circuit: mirror banks summed by KCL, diode
// ReLU / anti-ReLU outputs, hysteretic bistable cells and skip wires. All
// currents are in pA; 1.0 in the network is 1000 pA.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fqbmru/backbone.hpp"
#include "fqbmru/errors.hpp"
#include "fqbmru/quantization.hpp"

namespace fqbmru {

inline constexpr double kPicoampPerUnit = 1000.0;
inline constexpr double kSupplyVolts = 1.8;

// ---------------------------------------------------------------------------
// Mirrors

enum class Branch { positive, negative };
enum class MirrorMode { ideal, calibrated };

struct Mirror {
  double ratio = 0.0;  // W_out / W_in, ≥ 0
  Branch branch = Branch::positive;
};

/// Measured or synthetic lookup (target ratio, input current) -> effective
/// ratio, bilinear between grid points and clamped at the edges.
class CalibrationTable {
 public:
  CalibrationTable() = default;
  CalibrationTable(std::vector<double> targets, std::vector<double> inputs_pA, std::vector<double> effective)
      : targets_(std::move(targets)), inputs_(std::move(inputs_pA)), eff_(std::move(effective)) {
    check();
  }

  const std::vector<double>& targets() const { return targets_; }
  const std::vector<double>& inputs_pA() const { return inputs_; }
  double effective_at(std::size_t ti, std::size_t ii) const { return eff_[ti * inputs_.size() + ii]; }
  bool empty() const { return eff_.empty(); }

  /// Effective ratio for `target` at input current `I_in`. Targets outside the
  /// grid keep the relative error of the nearest edge.
  double effective(double target, double I_in) const {
    if (target == 0.0) return 0.0;
    const double t = std::clamp(target, targets_.front(), targets_.back());
    const double i = std::clamp(I_in, inputs_.front(), inputs_.back());
    const auto [t0, ft] = locate(targets_, t);
    const auto [i0, fi] = locate(inputs_, i);
    const std::size_t t1 = std::min(t0 + 1, targets_.size() - 1), i1 = std::min(i0 + 1, inputs_.size() - 1);
    auto rel = [&](std::size_t a, std::size_t b) { return effective_at(a, b) / targets_[a]; };
    const double r = (1 - ft) * ((1 - fi) * rel(t0, i0) + fi * rel(t0, i1)) + ft * ((1 - fi) * rel(t1, i0) + fi * rel(t1, i1));
    return target * r;
  }

  /// Largest |effective − target| / target over the grid.
  double worst_relative_error() const {
    double worst = 0.0;
    for (std::size_t a = 0; a < targets_.size(); ++a)
      for (std::size_t b = 0; b < inputs_.size(); ++b) {
        worst = std::max(worst, std::fabs(effective_at(a, b) - targets_[a]) / targets_[a]);
      }
    return worst;
  }

  void write_csv(std::ostream& os) const {
    os << "target_ratio,input_pA,effective_ratio\n";
    os.precision(17);
    for (std::size_t a = 0; a < targets_.size(); ++a)
      for (std::size_t b = 0; b < inputs_.size(); ++b) {
        os << targets_[a] << ',' << inputs_[b] << ',' << effective_at(a, b) << '\n';
      }
  }

  static CalibrationTable read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "target_ratio,input_pA,effective_ratio") {
      throw format_error("calibration CSV: expected header 'target_ratio,input_pA,effective_ratio'", 0);
    }
    std::map<std::pair<double, double>, double> cells;
    std::set<double> ts, is_;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream row(line);
      double v[3];
      char c1 = 0, c2 = 0;
      if (!(row >> v[0] >> c1 >> v[1] >> c2 >> v[2]) || c1 != ',' || c2 != ',') {
        throw format_error("calibration CSV: malformed line " + std::to_string(lineno), lineno);
      }
      if (!(v[0] > 0) || v[1] < 0 || v[2] < 0) {
        throw format_error("calibration CSV: out-of-range value on line " + std::to_string(lineno), lineno);
      }
      cells[{v[0], v[1]}] = v[2];
      ts.insert(v[0]);
      is_.insert(v[1]);
    }
    if (cells.size() != ts.size() * is_.size() || cells.empty()) {
      throw format_error("calibration CSV: grid is incomplete", lineno);
    }
    std::vector<double> eff;
    for (double t : ts)
      for (double i : is_) eff.push_back(cells.at({t, i}));
    return {{ts.begin(), ts.end()}, {is_.begin(), is_.end()}, eff};
  }

 private:
  static std::pair<std::size_t, double> locate(const std::vector<double>& grid, double x) {
    if (grid.size() == 1) return {0, 0.0};
    std::size_t k = static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), x) - grid.begin());
    k = std::clamp<std::size_t>(k, 1, grid.size() - 1) - 1;
    return {k, (x - grid[k]) / (grid[k + 1] - grid[k])};
  }

  void check() const {
    if (targets_.empty() || inputs_.empty() || eff_.size() != targets_.size() * inputs_.size()) {
      throw precondition_error("CalibrationTable: grid shape mismatch");
    }
    if (!std::is_sorted(targets_.begin(), targets_.end()) || !std::is_sorted(inputs_.begin(), inputs_.end()) ||
        targets_.front() <= 0.0) {
      throw precondition_error("CalibrationTable: grid axes must be ascending with positive targets");
    }
    for (std::size_t b = 0; b < inputs_.size(); ++b)
      for (std::size_t a = 1; a < targets_.size(); ++a) {
        if (effective_at(a, b) < effective_at(a - 1, b)) {
          throw precondition_error("CalibrationTable: effective ratio must be monotone in the target");
        }
      }
  }

  std::vector<double> targets_, inputs_, eff_;
};

/// Stand-in for a characterised mirror: the ratio overshoots by a relative
/// 5.25% × min(I_in / 1 nA, 1).
inline CalibrationTable synthetic_calibration() {
  std::vector<double> targets, inputs, eff;
  for (int k = 1; k <= 32; ++k) targets.push_back(0.125 * k);
  for (int k = 0; k <= 20; ++k) inputs.push_back(50.0 * k);
  for (double t : targets)
    for (double i : inputs) eff.push_back(t * (1.0 + 0.0525 * std::min(i / 1000.0, 1.0)));
  return {targets, inputs, eff};
}

// ---------------------------------------------------------------------------
// Bistable cell

struct BistableCellModel {
  double I_thresh = 0.0;  // upper switching point
  double I_width = 0.0;   // hysteresis width; lower switching point is I_thresh − I_width
  double I_gain = 0.0;    // output current when on
  bool on = false;
};

struct CellOutput {
  double I_out = 0.0;
  bool on = false;
};

/// Offsets of a fabricated cell relative to its programmed bias currents.
/// The defaults reproduce the characterised 368 / 216 / 486 pA cell, which
/// switches at 350 and ~150 pA with a 500 pA high level.
struct CellCalibration {
  double thresh_offset_pA = -18.0;
  double width_offset_pA = -15.75;
  double gain_offset_pA = 14.0;
};

inline BistableCellModel calibrated(const BistableCellModel& c, const CellCalibration& k = {}) {
  return {c.I_thresh + k.thresh_offset_pA, c.I_width + k.width_offset_pA, c.I_gain + k.gain_offset_pA, c.on};
}

/// Strict comparisons on both switching points; inside the window the state
/// holds.
inline CellOutput cell_response(const BistableCellModel& c, double I_in) {
  if (I_in < 0.0) throw precondition_error("cell_response: negative input current");
  bool on = c.on;
  if (I_in > c.I_thresh) {
    on = true;
  } else if (I_in < c.I_thresh - c.I_width) {
    on = false;
  }
  return {on ? c.I_gain : 0.0, on};
}

// ---------------------------------------------------------------------------
// Fully connected stages

enum class Activation { relu, anti_relu, relu_pair };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::anti_relu: return "anti_relu";
    case Activation::relu_pair: return "relu_pair";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "anti_relu") return Activation::anti_relu;
  if (s == "relu_pair") return Activation::relu_pair;
  throw format_error("unknown activation '" + s + "'", 0);
}

/// rows x cols mirror bank (row-major), one bias source per output node.
/// relu_pair drives both a ReLU and an anti-ReLU output; the signed result is
/// the positive minus the negative branch.
struct FcBank {
  std::string name;
  std::size_t rows = 0, cols = 0;
  std::vector<Mirror> mirrors;
  Vec bias_pA;  // signed: positive values source, negative values sink
  Activation act = Activation::relu;
};

struct FcOptions {
  MirrorMode mode = MirrorMode::ideal;
  const CalibrationTable* table = nullptr;
};

/// Net node current pos − neg + bias, before the output diodes.
inline Vec fc_net(const FcBank& bank, std::span<const double> I_in, const FcOptions& opt = {}) {
  if (I_in.size() != bank.cols) throw dimension_error("fc stage '" + bank.name + "': input width");
  if (opt.mode == MirrorMode::calibrated && (opt.table == nullptr || opt.table->empty())) {
    throw precondition_error("calibrated mirrors need a calibration table");
  }
  Vec net(bank.rows);
  for (std::size_t r = 0; r < bank.rows; ++r) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t c = 0; c < bank.cols; ++c) {
      const Mirror& m = bank.mirrors[r * bank.cols + c];
      if (I_in[c] < 0.0) throw precondition_error("fc stage '" + bank.name + "': negative branch current");
      const double ratio = opt.mode == MirrorMode::ideal ? m.ratio : opt.table->effective(m.ratio, I_in[c]);
      (m.branch == Branch::positive ? pos : neg) += ratio * I_in[c];
    }
    const double b = bank.bias_pA[r];
    net[r] = b >= 0.0 ? (pos + b) - neg : pos - (neg - b);
  }
  return net;
}

/// Output branch currents. anti_relu reports |min(0, net)|; relu_pair reports
/// the signed difference of its two branches.
inline Vec fc_stage(const FcBank& bank, std::span<const double> I_in, Activation act, const FcOptions& opt = {}) {
  Vec out = fc_net(bank, I_in, opt);
  for (double& v : out) {
    switch (act) {
      case Activation::relu: v = v > 0.0 ? v : 0.0; break;
      case Activation::anti_relu: v = v < 0.0 ? -v : 0.0; break;
      case Activation::relu_pair: break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Netlist

inline constexpr int kNetlistSchemaVersion = 1;

struct Netlist {
  std::size_t n_in = 0, dim = 0, n_classes = 0;
  FcBank input_proj;
  std::vector<FcBank> candidate;                    // per layer
  std::vector<std::vector<BistableCellModel>> cells;  // per layer
  std::vector<bool> skip;
  FcBank classifier;

  std::size_t n_layers() const { return cells.size(); }

  std::vector<std::string> probes() const {
    std::vector<std::string> out{"input_proj"};
    for (std::size_t l = 0; l < n_layers(); ++l) {
      out.push_back(probe_name(l, "candidate"));
      out.push_back(probe_name(l, "state"));
      out.push_back(probe_name(l, "skip"));
    }
    out.push_back("logits");
    return out;
  }

  std::size_t mirror_count() const {
    std::size_t n = input_proj.mirrors.size() + classifier.mirrors.size();
    for (const auto& b : candidate) n += b.mirrors.size();
    return n;
  }
  std::size_t bias_count() const {
    std::size_t n = input_proj.bias_pA.size() + classifier.bias_pA.size();
    for (const auto& b : candidate) n += b.bias_pA.size();
    return n;
  }
  std::size_t cell_count() const {
    std::size_t n = 0;
    for (const auto& c : cells) n += c.size();
    return n;
  }
  /// Programmable elements: one per mirror, one per bias source, and three
  /// bias currents (threshold, width, gain) per cell.
  std::size_t element_count() const { return mirror_count() + bias_count() + 3 * cell_count(); }
};

inline std::size_t trained_parameter_count(const HardwareBackbone& b) {
  std::size_t n = b.input_proj.W.size() + b.input_proj.b.size() + b.classifier.W.size() + b.classifier.b.size();
  for (const auto& layer : b.layers) {
    const auto& p = std::get<FqBmruParams>(layer);
    n += p.W_x.size() + p.b_x.size() + p.beta_lo.size() + p.delta.size() + p.alpha.size();
  }
  return n;
}

namespace detail {

inline FcBank make_bank(const std::string& name, const LinearParams& lin, Activation act) {
  FcBank bank{name, lin.out_dim(), lin.in_dim(), {}, {}, act};
  for (double w : lin.W.values()) bank.mirrors.push_back({std::fabs(w), w < 0.0 ? Branch::negative : Branch::positive});
  for (double b : lin.b) bank.bias_pA.push_back(kPicoampPerUnit * b);
  return bank;
}

}  // namespace detail

/// Maps a trained FQ BMRU hardware backbone onto the circuit, optionally after
/// n-bit quantization.
inline Netlist compile(const HardwareBackbone& model, std::optional<int> bits = std::nullopt) {
  if (model.layers.empty()) throw compile_error("compile: network has no recurrent layers");
  if (model.kind() != CellKind::fq_bmru) {
    throw compile_error(std::string("compile: only FQ BMRU networks map onto the circuit, got ") +
                        cell_kind_name(model.kind()));
  }
  const HardwareBackbone m = bits ? quantize(model, *bits) : model;
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    const auto& p = m.fq(l);
    for (std::size_t i = 0; i < p.dim(); ++i) {
      const std::string cell = "layer" + std::to_string(l) + ".cell" + std::to_string(i);
      if (!(p.beta_lo[i] > 0.0)) {
        throw compile_error("compile: " + cell + " violates bistability (beta_lo = " + std::to_string(p.beta_lo[i]) +
                            " <= 0)");
      }
      if (!(p.delta[i] > 0.0) || !(p.alpha[i] > 0.0)) {
        throw compile_error("compile: " + cell + " needs positive hysteresis width and gain");
      }
    }
  }
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw compile_error(std::string("compile: ") + e.what());
  }

  Netlist net;
  net.n_in = m.n_in();
  net.dim = m.dim();
  net.n_classes = m.n_classes();
  net.input_proj = detail::make_bank("input_proj", m.input_proj, Activation::relu);
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    const auto& p = m.fq(l);
    net.candidate.push_back(detail::make_bank(probe_name(l, "candidate"), {p.W_x, p.b_x}, Activation::relu));
    std::vector<BistableCellModel> cells;
    for (std::size_t i = 0; i < p.dim(); ++i) {
      const double hi = p.beta_lo[i] + p.delta[i];
      cells.push_back({kPicoampPerUnit * hi, kPicoampPerUnit * p.delta[i], kPicoampPerUnit * p.alpha[i], false});
    }
    net.cells.push_back(std::move(cells));
  }
  net.skip = m.skip;
  net.classifier = detail::make_bank("logits", m.classifier, Activation::relu_pair);
  return net;
}

// ---------------------------------------------------------------------------
// Netlist JSON

namespace detail {

inline void append_bank(nlohmann::json& j, const FcBank& b) {
  j["stages"].push_back({{"type", "fc"},
                         {"name", b.name},
                         {"rows", b.rows},
                         {"cols", b.cols},
                         {"activation", activation_name(b.act)},
                         {"mirror_offset", j["mirrors"].size()},
                         {"bias_offset", j["biases_pA"].size()}});
  for (const auto& m : b.mirrors) {
    j["mirrors"].push_back({{"ratio", m.ratio}, {"branch", m.branch == Branch::positive ? "positive" : "negative"}});
  }
  for (double v : b.bias_pA) j["biases_pA"].push_back(v);
}

inline FcBank read_bank(const nlohmann::json& j, const nlohmann::json& st) {
  FcBank b;
  b.name = st.at("name").get<std::string>();
  b.rows = st.at("rows").get<std::size_t>();
  b.cols = st.at("cols").get<std::size_t>();
  b.act = parse_activation(st.at("activation").get<std::string>());
  const std::size_t mo = st.at("mirror_offset").get<std::size_t>(), bo = st.at("bias_offset").get<std::size_t>();
  const auto& mirrors = j.at("mirrors");
  const auto& biases = j.at("biases_pA");
  if (mo + b.rows * b.cols > mirrors.size() || bo + b.rows > biases.size()) {
    throw format_error("netlist stage '" + b.name + "' points past the element tables", 0);
  }
  for (std::size_t k = 0; k < b.rows * b.cols; ++k) {
    const auto& m = mirrors.at(mo + k);
    const std::string br = m.at("branch").get<std::string>();
    if (br != "positive" && br != "negative") throw format_error("bad mirror branch '" + br + "'", 0);
    const double ratio = m.at("ratio").get<double>();
    if (!(ratio >= 0.0)) throw format_error("negative mirror ratio in '" + b.name + "'", 0);
    b.mirrors.push_back({ratio, br == "positive" ? Branch::positive : Branch::negative});
  }
  for (std::size_t k = 0; k < b.rows; ++k) b.bias_pA.push_back(biases.at(bo + k).get<double>());
  return b;
}

}  // namespace detail

inline nlohmann::json to_json(const Netlist& n) {
  nlohmann::json j;
  j["schema_version"] = kNetlistSchemaVersion;
  j["n_in"] = n.n_in;
  j["dim"] = n.dim;
  j["n_classes"] = n.n_classes;
  j["stages"] = nlohmann::json::array();
  j["mirrors"] = nlohmann::json::array();
  j["biases_pA"] = nlohmann::json::array();
  j["cells"] = nlohmann::json::array();
  detail::append_bank(j, n.input_proj);
  for (std::size_t l = 0; l < n.n_layers(); ++l) {
    detail::append_bank(j, n.candidate[l]);
    j["stages"].push_back({{"type", "cells"},
                           {"name", probe_name(l, "state")},
                           {"cell_offset", j["cells"].size()},
                           {"count", n.cells[l].size()}});
    for (const auto& c : n.cells[l]) {
      j["cells"].push_back({{"I_thresh_pA", c.I_thresh}, {"I_width_pA", c.I_width}, {"I_gain_pA", c.I_gain}});
    }
    j["stages"].push_back({{"type", "skip"}, {"name", probe_name(l, "skip")}, {"enabled", static_cast<bool>(n.skip[l])}});
  }
  detail::append_bank(j, n.classifier);
  j["probes"] = n.probes();
  return j;
}

inline Netlist netlist_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kNetlistSchemaVersion) {
      throw format_error("unsupported netlist schema version " + j.at("schema_version").dump(), 0);
    }
    Netlist n;
    n.n_in = j.at("n_in").get<std::size_t>();
    n.dim = j.at("dim").get<std::size_t>();
    n.n_classes = j.at("n_classes").get<std::size_t>();
    const auto& stages = j.at("stages");
    bool have_input = false, have_logits = false;
    for (const auto& st : stages) {
      const std::string type = st.at("type").get<std::string>();
      const std::string name = st.at("name").get<std::string>();
      if (type == "fc") {
        FcBank b = detail::read_bank(j, st);
        if (name == "input_proj") {
          n.input_proj = std::move(b);
          have_input = true;
        } else if (name == "logits") {
          n.classifier = std::move(b);
          have_logits = true;
        } else {
          n.candidate.push_back(std::move(b));
        }
      } else if (type == "cells") {
        const std::size_t off = st.at("cell_offset").get<std::size_t>(), cnt = st.at("count").get<std::size_t>();
        std::vector<BistableCellModel> cells;
        for (std::size_t k = 0; k < cnt; ++k) {
          const auto& c = j.at("cells").at(off + k);
          cells.push_back({c.at("I_thresh_pA").get<double>(), c.at("I_width_pA").get<double>(),
                           c.at("I_gain_pA").get<double>(), false});
        }
        n.cells.push_back(std::move(cells));
      } else if (type == "skip") {
        n.skip.push_back(st.at("enabled").get<bool>());
      } else {
        throw format_error("unknown netlist stage type '" + type + "'", 0);
      }
    }
    if (!have_input || !have_logits || n.candidate.size() != n.cells.size() || n.skip.size() != n.cells.size() ||
        n.cells.empty()) {
      throw format_error("netlist stages are incomplete", 0);
    }
    if (n.input_proj.cols != n.n_in || n.input_proj.rows != n.dim || n.classifier.rows != n.n_classes) {
      throw format_error("netlist stage widths disagree with the header", 0);
    }
    for (std::size_t l = 0; l < n.n_layers(); ++l) {
      if (n.candidate[l].rows != n.dim || n.candidate[l].cols != n.dim || n.cells[l].size() != n.dim) {
        throw format_error("netlist layer " + std::to_string(l) + " has the wrong width", 0);
      }
    }
    return n;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("malformed netlist: ") + e.what(), 0);
  }
}

// ---------------------------------------------------------------------------
// Perturbation

enum class Corner { TT, FF, SS, FS, SF };

inline const char* corner_name(Corner c) {
  switch (c) {
    case Corner::TT: return "TT";
    case Corner::FF: return "FF";
    case Corner::SS: return "SS";
    case Corner::FS: return "FS";
    case Corner::SF: return "SF";
  }
  return "?";
}

inline Corner parse_corner(const std::string& s) {
  for (Corner c : {Corner::TT, Corner::FF, Corner::SS, Corner::FS, Corner::SF}) {
    if (s == corner_name(c)) return c;
  }
  throw precondition_error("unknown corner '" + s + "'");
}

struct CornerShift {
  double thresh = 1.0;  // applied to I_thresh and I_width
  double gain = 1.0;
};

inline CornerShift corner_shift(Corner c, double shift = 0.08) {
  switch (c) {
    case Corner::TT: return {1.0, 1.0};
    case Corner::FF: return {1.0 - shift, 1.0 + shift};
    case Corner::SS: return {1.0 + shift, 1.0 - shift};
    case Corner::FS: return {1.0 - shift, 1.0 - shift};
    case Corner::SF: return {1.0 + shift, 1.0 + shift};
  }
  return {};
}

/// Relative 1σ mismatch per element class, leakage on off cells and a corner.
struct PerturbationSpec {
  double mirror_sigma = 0.02;
  double thresh_sigma = 0.04;  // I_thresh and I_width, drawn independently
  double gain_sigma = 0.03;    // I_gain and bias sources
  double leakage_floor_pA = 3.0;
  Corner corner = Corner::TT;
  double corner_shift = 0.08;
  std::uint64_t seed = 0;

  void validate() const {
    if (mirror_sigma < 0 || thresh_sigma < 0 || gain_sigma < 0 || leakage_floor_pA < 0 || corner_shift < 0) {
      throw precondition_error("PerturbationSpec: sigmas, leakage and corner shift must be non-negative");
    }
  }
};

/// One fabricated die: every element scaled by its own (1 + N(0, σ)) draw,
/// clamped at zero, then shifted by the corner.
inline Netlist instantiate_die(const Netlist& nominal, const PerturbationSpec& spec) {
  spec.validate();
  Netlist die = nominal;
  Rng rng(spec.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto jitter = [&](double v, double sigma) { return std::max(0.0, v * (1.0 + sigma * g(rng))); };
  auto jitter_signed = [&](double v, double sigma) { return v * std::max(0.0, 1.0 + sigma * g(rng)); };
  auto bank = [&](FcBank& b) {
    for (auto& m : b.mirrors) m.ratio = jitter(m.ratio, spec.mirror_sigma);
    for (double& v : b.bias_pA) v = jitter_signed(v, spec.gain_sigma);
  };
  const CornerShift cs = corner_shift(spec.corner, spec.corner_shift);
  bank(die.input_proj);
  for (std::size_t l = 0; l < die.n_layers(); ++l) {
    bank(die.candidate[l]);
    for (auto& c : die.cells[l]) {
      c.I_thresh = jitter(c.I_thresh, spec.thresh_sigma) * cs.thresh;
      c.I_width = jitter(c.I_width, spec.thresh_sigma) * cs.thresh;
      c.I_gain = jitter(c.I_gain, spec.gain_sigma) * cs.gain;
    }
  }
  bank(die.classifier);
  return die;
}

// ---------------------------------------------------------------------------
// Simulation

struct SimOptions {
  FcOptions mirrors;
  bool calibrated_cells = false;
  CellCalibration cell_calibration;
  double leakage_floor_pA = 0.0;  // output of an off cell
  NoiseHook hook;                 // same stages as forward_hw, values in pA
};

struct SimResult {
  Trace trace;          // every probe, pA
  Tensor logits_pA;     // T x n_classes
  Vec power_nW;         // per timestep
  Vote vote;
};

/// Frame-by-frame evaluation of the circuit on a T x n_in current sequence.
inline SimResult simulate(const Netlist& net, const Tensor& seq_pA, const SimOptions& opt = {}) {
  if (seq_pA.rank() != 2 || seq_pA.cols() != net.n_in) {
    throw dimension_error("simulate: input shape " + shape_string(seq_pA.shape()) + " for " +
                          std::to_string(net.n_in) + " input channels");
  }
  for (double v : seq_pA.values()) {
    if (!std::isfinite(v) || v < 0.0) throw precondition_error("simulate: input currents must be finite and >= 0");
  }
  const std::size_t T = seq_pA.rows(), L = net.n_layers(), d = net.dim;
  SimResult res;
  Trace& tr = res.trace;
  for (const auto& p : net.probes()) tr.init(p, T, p == "logits" ? net.n_classes : d);
  res.logits_pA = Tensor::matrix(T, net.n_classes);
  res.power_nW.assign(T, 0.0);

  std::vector<std::vector<BistableCellModel>> cells = net.cells;
  if (opt.calibrated_cells) {
    for (auto& layer : cells)
      for (auto& c : layer) c = calibrated(c, opt.cell_calibration);
  }
  std::vector<std::string> cand_names(L), state_names(L), skip_names(L);
  for (std::size_t l = 0; l < L; ++l) {
    cand_names[l] = probe_name(l, "candidate");
    state_names[l] = probe_name(l, "state");
    skip_names[l] = probe_name(l, "skip");
  }

  for (std::size_t t = 0; t < T; ++t) {
    double branch_pA = 0.0;
    auto bias_draw = [](const FcBank& b) {
      double s = 0.0;
      for (double v : b.bias_pA) s += std::fabs(v);
      return s;
    };
    Vec s = fc_stage(net.input_proj, seq_pA.row_span(t), Activation::relu, opt.mirrors);
    if (opt.hook) {
      opt.hook("input_proj", t, s);
      for (double& v : s) v = std::max(v, 0.0);
    }
    tr.set("input_proj", t, s);
    for (double v : s) branch_pA += v;
    branch_pA += bias_draw(net.input_proj);

    for (std::size_t l = 0; l < L; ++l) {
      Vec cand = fc_stage(net.candidate[l], s, Activation::relu, opt.mirrors);
      if (opt.hook) {
        opt.hook(cand_names[l], t, cand);
        for (double& v : cand) v = std::max(v, 0.0);
      }
      tr.set(cand_names[l], t, cand);
      Vec out(d);
      for (std::size_t i = 0; i < d; ++i) {
        const CellOutput o = cell_response(cells[l][i], cand[i]);
        cells[l][i].on = o.on;
        out[i] = o.on ? o.I_out : opt.leakage_floor_pA;
        branch_pA += cand[i] + cells[l][i].I_thresh + cells[l][i].I_width + out[i];
      }
      branch_pA += bias_draw(net.candidate[l]);
      tr.set(state_names[l], t, out);
      if (net.skip[l]) {
        for (std::size_t i = 0; i < d; ++i) out[i] += s[i];
      }
      if (opt.hook) {
        opt.hook(skip_names[l], t, out);
        for (double& v : out) v = std::max(v, 0.0);
      }
      tr.set(skip_names[l], t, out);
      s = std::move(out);
    }

    Vec z = fc_stage(net.classifier, s, Activation::relu_pair, opt.mirrors);
    if (opt.hook) opt.hook("logits", t, z);
    tr.set("logits", t, z);
    for (double v : z) branch_pA += std::fabs(v);
    branch_pA += bias_draw(net.classifier);
    std::copy(z.begin(), z.end(), res.logits_pA.row_span(t).begin());
    res.power_nW[t] = kSupplyVolts * branch_pA * 1e-3;
  }
  res.vote = majority_vote(res.logits_pA);
  return res;
}

/// Network-unit sequence to input currents.
inline Tensor to_currents(const Tensor& seq) {
  Tensor out = seq;
  for (double& v : out.values()) {
    if (v < 0.0) throw precondition_error("to_currents: hardware inputs must be non-negative");
    v *= kPicoampPerUnit;
  }
  return out;
}

inline void write_trace_csv(std::ostream& os, const Trace& tr) {
  os << "t,probe,value_pA\n";
  os.precision(17);
  for (const auto& name : tr.names) {
    const Tensor& p = tr.at(name);
    for (std::size_t t = 0; t < p.rows(); ++t)
      for (std::size_t i = 0; i < p.cols(); ++i) {
        os << t << ',' << name;
        if (p.cols() > 1) os << '[' << i << ']';
        os << ',' << p(t, i) << '\n';
      }
  }
}

// ---------------------------------------------------------------------------
// Error suppression

struct Suppression {
  double mae_candidate = 0.0;
  double mae_state = 0.0;
  double ratio = 0.0;
};

/// Gaussian noise (std noise_pA, result clamped at 0) added to the candidate
/// currents of one layer; compares candidate and state probes of that layer
/// against the clean ideal run. The noisy run has off-cell leakage.
inline Suppression measure_suppression(const Netlist& net, const Tensor& seq_pA, double noise_pA, std::size_t layer,
                                       std::uint64_t seed, double leakage_floor_pA = 3.0) {
  if (layer >= net.n_layers()) throw precondition_error("measure_suppression: no such layer");
  if (noise_pA < 0.0 || leakage_floor_pA < 0.0) throw precondition_error("measure_suppression: negative noise");
  const SimResult clean = simulate(net, seq_pA);
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::string target = probe_name(layer, "candidate");
  SimOptions opt;
  opt.leakage_floor_pA = leakage_floor_pA;
  opt.hook = [&](const std::string& stage, std::size_t, std::span<double> v) {
    if (stage != target) return;
    for (double& e : v) e = std::max(0.0, e + noise_pA * g(rng));
  };
  const SimResult noisy = simulate(net, seq_pA, opt);
  auto mae = [](const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += std::fabs(a[k] - b[k]);
    return a.size() ? s / static_cast<double>(a.size()) : 0.0;
  };
  Suppression out;
  out.mae_candidate = mae(clean.trace.at(target), noisy.trace.at(target));
  out.mae_state = mae(clean.trace.at(probe_name(layer, "state")), noisy.trace.at(probe_name(layer, "state")));
  const double denom = std::max(out.mae_state, leakage_floor_pA);
  out.ratio = denom > 0.0 ? out.mae_candidate / denom
                          : (out.mae_candidate > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  if (noise_pA == 0.0) out.ratio = std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace fqbmru
