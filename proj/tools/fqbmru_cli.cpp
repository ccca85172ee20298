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

// fqbmru: train -> compile -> sim / analyses, one artifact directory per step.
// Every output directory holds a manifest.json with the SHA-256 of each file
// it wrote; consumers re-hash their inputs against it before use.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "fqbmru/fqbmru.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fqbmru;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumerical = 4 };

struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_bytes(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{md[i]};
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw format_error("cannot open '" + p.string() + "'", 0);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string sha256_file(const fs::path& p) { return sha256_bytes(slurp(p)); }

// ---------------------------------------------------------------------------
// Artifact directories

class OutputDir {
 public:
  OutputDir(const std::string& dir, bool force, std::string command) : dir_(dir), command_(std::move(command)) {
    if (dir.empty()) throw usage_error("--out is required");
    if (fs::exists(dir_)) {
      if (!fs::is_directory(dir_)) throw usage_error("--out '" + dir + "' exists and is not a directory");
      if (!fs::is_empty(dir_) && !force) {
        throw usage_error("--out '" + dir + "' is not empty; pass --force to overwrite");
      }
    }
    fs::create_directories(dir_);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& bytes) {
    std::ofstream f(path(name), std::ios::binary);
    if (!f) throw format_error("cannot create '" + path(name).string() + "'", 0);
    f << bytes;
    outputs_[name] = sha256_bytes(bytes);
  }

  /// Records a file written by a library routine.
  void adopt(const std::string& name) { outputs_[name] = sha256_file(path(name)); }

  json config = json::object();
  json seeds = json::object();
  json inputs = json::object();

  void finish() {
    json m{{"command", command_},
           {"tool_version", kToolVersion},
           {"config", config},
           {"seeds", seeds},
           {"inputs", inputs},
           {"outputs", outputs_}};
    std::ofstream f(path("manifest.json"));
    f << m.dump(2) << '\n';
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::string command_;
  json outputs_ = json::object();
};

/// An artifact directory written by an earlier command, with its digests checked.
struct InputDir {
  fs::path dir;
  json manifest;

  InputDir(const std::string& d, const std::string& expect_command) : dir(d) {
    const fs::path mp = dir / "manifest.json";
    if (!fs::exists(mp)) throw format_error("'" + d + "' has no manifest.json; not an artifact directory", 0);
    try {
      manifest = json::parse(slurp(mp));
    } catch (const json::exception& e) {
      throw format_error("unreadable manifest in '" + d + "': " + e.what(), 0);
    }
    if (!manifest.contains("outputs") || !manifest.contains("command")) {
      throw format_error("manifest in '" + d + "' lacks outputs/command", 0);
    }
    const std::string cmd = manifest["command"].get<std::string>();
    if (!expect_command.empty() && cmd != expect_command) {
      throw usage_error("'" + d + "' was produced by '" + cmd + "', expected '" + expect_command + "'");
    }
    for (const auto& [name, digest] : manifest["outputs"].items()) {
      const fs::path p = dir / name;
      if (!fs::exists(p)) throw format_error("'" + p.string() + "' listed in manifest is missing", 0);
      const std::string actual = sha256_file(p);
      if (actual != digest.get<std::string>()) {
        throw format_error("digest mismatch for '" + p.string() + "': manifest records " +
                               digest.get<std::string>() + ", file hashes to " + actual +
                               "; the file changed after it was written, so downstream results would not be "
                               "traceable. Re-run the producing command.",
                           0);
      }
    }
  }

  fs::path file(const std::string& name) const { return dir / name; }

  std::string digest(const std::string& name) const { return manifest["outputs"].at(name).get<std::string>(); }

  json config_json(const std::string& name) const {
    try {
      return json::parse(slurp(file(name)));
    } catch (const json::exception& e) {
      throw format_error("unreadable '" + file(name).string() + "': " + e.what(), 0);
    }
  }
};

void check_not_same(const OutputDir& out, const std::vector<std::string>& inputs) {
  for (const auto& in : inputs) {
    if (!in.empty() && fs::exists(in) && fs::equivalent(out.dir(), in)) {
      throw usage_error("--out must differ from input directory '" + in + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// Data sources: a path to an .fseq file, or "<task>:<split>".

struct DataContext {
  std::string data_dir;  // --data-dir or $BMRU_DATA_DIR
  int target_class = -1;
  bool permute_row28 = false;
};

std::string require_data_dir(const DataContext& ctx, const std::string& what) {
  if (ctx.data_dir.empty()) {
    throw usage_error(what + " needs a data directory: pass --data-dir or set BMRU_DATA_DIR");
  }
  return ctx.data_dir;
}

Dataset mnist_split(const DataContext& ctx, const std::string& task, const std::string& split) {
  const fs::path dir = require_data_dir(ctx, task);
  const bool test = split == "test";
  const IdxData raw = load_idx((dir / (test ? "t10k-images-idx3-ubyte" : "train-images-idx3-ubyte")).string(),
                               (dir / (test ? "t10k-labels-idx1-ubyte" : "train-labels-idx1-ubyte")).string());
  const PixelMode mode = task == "smnist" ? PixelMode::row28 : PixelMode::permuted;
  Dataset all = pixel_sequences(raw, mode, 0);
  if (test) return all;
  // Last 5000 training images are held out for validation.
  const std::size_t n_val = std::min<std::size_t>(5000, all.size() / 10);
  std::vector<std::size_t> idx;
  if (split == "train") {
    for (std::size_t i = 0; i + n_val < all.size(); ++i) idx.push_back(i);
  } else {
    for (std::size_t i = all.size() - n_val; i < all.size(); ++i) idx.push_back(i);
  }
  return subset(all, idx);
}

struct Source {
  Dataset data;
  std::string digest;  // of the backing file, empty for generated data
};

Source load_source(const std::string& spec, const DataContext& ctx) {
  if (spec.size() > 5 && spec.substr(spec.size() - 5) == ".fseq") {
    return {load_fseq(spec), sha256_file(spec)};
  }
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw usage_error("data '" + spec + "' is neither an .fseq path nor task:split");
  const std::string task = spec.substr(0, colon), split = spec.substr(colon + 1);
  if (split != "train" && split != "val" && split != "test") throw usage_error("unknown split '" + split + "'");
  if (task == "synth") {
    SyntheticTaskConfig c;
    c.n_samples = split == "train" ? 512 : 200;
    c.seed = split == "train" ? 21 : split == "val" ? 22 : 23;
    return {make_synthetic_task(c), ""};
  }
  if (task == "kws") {
    const fs::path p = fs::path(require_data_dir(ctx, "kws")) / ("kws_" + split + ".fseq");
    Dataset d = load_fseq(p.string());
    if (d.n_classes > 2) {
      if (ctx.target_class < 0) throw usage_error("multi-class KWS features need --target-class");
      d = balanced_kws_split(d, ctx.target_class, 0);
    }
    return {std::move(d), sha256_file(p)};
  }
  if (task == "smnist" || task == "pmnist") return {mnist_split(ctx, task, split), ""};
  throw usage_error("unknown task '" + task + "'");
}

std::vector<int> parse_int_list(const std::string& s, const std::string& flag) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw usage_error(flag + ": '" + tok + "' is not an integer");
    }
  }
  if (out.empty()) throw usage_error(flag + " is empty");
  return out;
}

std::string csv(const std::function<void(std::ostream&)>& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

// Preprocessing recorded with a run and carried to its netlist.
Dataset preprocess(Dataset d, const json& normalization) {
  if (normalization.is_null()) return d;
  const MinMax m = minmax_from_json(normalization);
  if (m.lo.size() != d.D()) {
    throw format_error("normalization width " + std::to_string(m.lo.size()) + " does not match data width " +
                           std::to_string(d.D()),
                       0);
  }
  return apply_minmax(std::move(d), m);
}

struct LoadedRun {
  json config;
  HardwareBackbone backbone;
};

LoadedRun load_hw_run(const InputDir& run) {
  LoadedRun r;
  r.config = run.config_json("config.json");
  if (r.config.value("backbone", "") != "hw") {
    throw usage_error("'" + run.dir.string() + "' holds a software-backbone run; only hardware runs map to circuits");
  }
  const HwNetConfig cfg = hw_config_from_json(r.config.at("model"));
  r.backbone = load_hardware_net(cfg, load_checkpoint(run.file("checkpoint.bin").string())).export_backbone();
  return r;
}

// ---------------------------------------------------------------------------
// Commands

struct Common {
  std::string out;
  bool force = false;
  DataContext ctx;
};

struct TrainArgs {
  std::string task = "synth";
  std::string train_data, val_data;
  std::string backbone = "hw";
  std::string cell = "fq-bmru";
  std::size_t d = 4, layers = 2, m = 64, pe_dim = 32;
  bool no_skip = false;
  std::string eps_schedule;  // empty: default for the cell
  std::string normalize = "auto";
  TrainConfig tc;
  std::uint64_t model_seed = 0;
};

int cmd_train(const Common& c, TrainArgs a) {
  const CellKind kind = parse_cell_kind(a.cell);
  if (!a.eps_schedule.empty()) {
    if (kind != CellKind::fq_bmru) throw usage_error("--eps-schedule applies only to fq-bmru cells");
    if (a.eps_schedule != "anneal" && a.eps_schedule != "off") {
      throw usage_error("--eps-schedule must be 'anneal' or 'off'");
    }
  }
  a.tc.use_eps_schedule = a.eps_schedule != "off";
  if (a.backbone != "hw" && a.backbone != "sw") throw usage_error("--backbone must be 'hw' or 'sw'");
  if (a.normalize != "auto" && a.normalize != "minmax" && a.normalize != "none") {
    throw usage_error("--normalize must be auto, minmax or none");
  }
  a.tc.validate();
  OutputDir out(c.out, c.force, "train");

  const std::string train_spec = a.train_data.empty() ? a.task + ":train" : a.train_data;
  const std::string val_spec = a.val_data.empty() ? a.task + ":val" : a.val_data;
  Source tr = load_source(train_spec, c.ctx), va = load_source(val_spec, c.ctx);
  if (tr.data.D() != va.data.D() || tr.data.n_classes != va.data.n_classes) {
    throw format_error("train and val data disagree in width or class count", 0);
  }
  const bool minmax = a.normalize == "minmax" || (a.normalize == "auto" && (a.task == "kws" || !a.train_data.empty()));
  json norm = nullptr;
  if (minmax) {
    norm = to_json(fit_minmax(tr.data));
    tr.data = preprocess(std::move(tr.data), norm);
    va.data = preprocess(std::move(va.data), norm);
  }

  json model_json;
  TrainResult result;
  double val_acc = 0.0;
  const std::string nan_dump = out.path("nan_dump.txt").string();
  if (a.backbone == "hw") {
    HwNetConfig hc;
    hc.kind = kind;
    hc.n_in = tr.data.D();
    hc.d = a.d;
    hc.n_layers = a.layers;
    hc.n_classes = static_cast<std::size_t>(tr.data.n_classes);
    hc.skip = !a.no_skip;
    hc.seed = a.model_seed;
    HardwareNet net(hc);
    result = train(net, tr.data, va.data, a.tc, nan_dump);
    val_acc = accuracy(net.export_backbone(), va.data);
    model_json = to_json(hc);
  } else {
    SwNetConfig sc;
    sc.cell = parse_sw_cell(a.cell);
    sc.n_in = tr.data.D();
    sc.m = a.m;
    sc.r = a.layers;
    sc.d = a.d;
    sc.n_classes = static_cast<std::size_t>(tr.data.n_classes);
    sc.pe_dim = a.pe_dim;
    sc.seed = a.model_seed;
    SoftwareNet net(sc);
    result = train(net, tr.data, va.data, a.tc, nan_dump);
    val_acc = accuracy(net, va.data);
    model_json = to_json(sc);
  }

  const auto ckpt = encode_checkpoint(result.best);
  out.write("checkpoint.bin", std::string(ckpt.begin(), ckpt.end()));
  json config{{"backbone", a.backbone},
              {"model", model_json},
              {"train", to_json(a.tc)},
              {"task", a.task},
              {"data", {{"train", train_spec}, {"val", val_spec}}},
              {"normalization", norm},
              {"best_iteration", result.best.iteration},
              {"val_accuracy", val_acc}};
  out.write("config.json", config.dump(2) + "\n");
  out.write("train_log.csv", csv([&](std::ostream& os) { write_train_log(os, result.log); }));
  out.config = config;
  out.seeds = {{"model", a.model_seed}, {"train", a.tc.seed}};
  if (!tr.digest.empty()) out.inputs[train_spec] = tr.digest;
  if (!va.digest.empty()) out.inputs[val_spec] = va.digest;
  out.finish();
  std::cout << "val_accuracy " << val_acc << "\n";
  return kOk;
}

int cmd_compile(const Common& c, const std::string& run_dir, int bits) {
  const InputDir run(run_dir, "train");
  OutputDir out(c.out, c.force, "compile");
  check_not_same(out, {run_dir});
  const LoadedRun r = load_hw_run(run);
  const Netlist net = bits > 0 ? compile(r.backbone, bits) : compile(r.backbone);
  out.write("netlist.json", to_json(net).dump(2) + "\n");
  out.write("normalization.json", json{{"minmax", r.config.at("normalization")}}.dump(2) + "\n");
  out.config = {{"run", run_dir}, {"bits", bits}};
  out.inputs[run.file("checkpoint.bin").string()] = run.digest("checkpoint.bin");
  out.inputs[run.file("config.json").string()] = run.digest("config.json");
  out.finish();
  std::cout << "elements " << net.element_count() << " (mirrors " << net.mirror_count() << ", biases "
            << net.bias_count() << ", cells " << net.cell_count() << ")\n";
  return kOk;
}

Netlist load_netlist(const InputDir& in) {
  try {
    return netlist_from_json(json::parse(slurp(in.file("netlist.json"))));
  } catch (const json::exception& e) {
    throw format_error(std::string("unreadable netlist: ") + e.what(), 0);
  }
}

struct PerturbArgs {
  bool enabled = false;
  PerturbationSpec spec;
  std::string corner = "TT";
};

json to_json(const PerturbationSpec& p) {
  return {{"mirror_sigma", p.mirror_sigma},       {"thresh_sigma", p.thresh_sigma},
          {"gain_sigma", p.gain_sigma},           {"leakage_floor_pA", p.leakage_floor_pA},
          {"corner", corner_name(p.corner)},      {"corner_shift", p.corner_shift},
          {"seed", p.seed}};
}

void add_perturb_flags(CLI::App* sub, PerturbArgs& p) {
  sub->add_option("--mirror-sigma", p.spec.mirror_sigma, "Relative std of mirror ratios")->capture_default_str();
  sub->add_option("--thresh-sigma", p.spec.thresh_sigma, "Relative std of threshold and width biases")
      ->capture_default_str();
  sub->add_option("--gain-sigma", p.spec.gain_sigma, "Relative std of gains and FC biases")->capture_default_str();
  sub->add_option("--leakage", p.spec.leakage_floor_pA, "Off-cell leakage floor (pA)")->capture_default_str();
  sub->add_option("--corner", p.corner, "Process corner TT/FF/SS/FS/SF")->capture_default_str();
  sub->add_option("--corner-shift", p.spec.corner_shift, "Relative corner shift")->capture_default_str();
  sub->add_option("--die-seed", p.spec.seed, "Seed of the (first) mismatch draw")->capture_default_str();
}

struct SimArgs {
  std::string netlist, data, run, calibration;
  std::string mirrors = "ideal";
  bool calibrated_cells = false;
  int trace_sample = -1;
  PerturbArgs perturb;
};

int cmd_sim(const Common& c, SimArgs a) {
  if (a.mirrors != "ideal" && a.mirrors != "calibrated") throw usage_error("--mirrors must be ideal or calibrated");
  a.perturb.spec.corner = parse_corner(a.perturb.corner);
  if (a.perturb.enabled) a.perturb.spec.validate();
  const InputDir nin(a.netlist, "compile");
  std::optional<InputDir> rin;
  if (!a.run.empty()) rin.emplace(a.run, "train");
  OutputDir out(c.out, c.force, "sim");
  check_not_same(out, {a.netlist, a.run});

  Netlist net = load_netlist(nin);
  const json norm = nin.config_json("normalization.json").at("minmax");
  Source src = load_source(a.data, c.ctx);
  const Dataset data = preprocess(std::move(src.data), norm);
  if (a.trace_sample >= static_cast<int>(data.size())) throw usage_error("--trace-sample out of range");
  if (a.perturb.enabled) net = instantiate_die(net, a.perturb.spec);

  CalibrationTable table = synthetic_calibration();
  if (!a.calibration.empty()) {
    std::ifstream f(a.calibration);
    if (!f) throw format_error("cannot open '" + a.calibration + "'", 0);
    table = CalibrationTable::read_csv(f);
    out.inputs[a.calibration] = sha256_file(a.calibration);
  }
  SimOptions opt;
  opt.mirrors = {a.mirrors == "ideal" ? MirrorMode::ideal : MirrorMode::calibrated, &table};
  opt.calibrated_cells = a.calibrated_cells;
  opt.leakage_floor_pA = a.perturb.enabled ? a.perturb.spec.leakage_floor_pA : 0.0;

  std::optional<HardwareBackbone> sw;
  if (rin) sw = load_hw_run(*rin).backbone;

  std::ostringstream pred;
  pred.precision(17);
  pred << "sample_id,label,hw_pred,hw_margin,mean_power_nW" << (sw ? ",sw_pred" : "") << "\n";
  std::size_t ok = 0, agree = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor seq = data.sequence(i);
    const SimResult r = simulate(net, to_currents(seq), opt);
    double p = 0.0;
    for (double v : r.power_nW) p += v;
    p /= static_cast<double>(std::max<std::size_t>(1, r.power_nW.size()));
    pred << i << ',' << data.labels[i] << ',' << r.vote.label << ',' << r.vote.margin << ',' << p;
    if (r.vote.label == data.labels[i]) ++ok;
    if (sw) {
      const int s = majority_vote(forward_hw(*sw, seq)).label;
      pred << ',' << s;
      if (s == r.vote.label) ++agree;
    }
    pred << '\n';
    if (static_cast<int>(i) == a.trace_sample) {
      out.write("trace_" + std::to_string(i) + ".csv", csv([&](std::ostream& os) { write_trace_csv(os, r.trace); }));
    }
  }
  out.write("predictions.csv", pred.str());
  out.config = {{"netlist", a.netlist}, {"data", a.data},        {"run", a.run},
                {"mirrors", a.mirrors}, {"calibrated_cells", a.calibrated_cells},
                {"perturb", a.perturb.enabled ? to_json(a.perturb.spec) : json(nullptr)}};
  out.seeds = {{"die", a.perturb.enabled ? json(a.perturb.spec.seed) : json(nullptr)}};
  out.inputs[nin.file("netlist.json").string()] = nin.digest("netlist.json");
  if (!src.digest.empty()) out.inputs[a.data] = src.digest;
  out.finish();
  const double n = static_cast<double>(std::max<std::size_t>(1, data.size()));
  std::cout << "accuracy " << static_cast<double>(ok) / n << "\n";
  if (sw) std::cout << "agreement " << static_cast<double>(agree) / n << "\n";
  return kOk;
}

struct SweepArgs {
  std::vector<std::string> runs;
  std::string data;
  std::vector<double> levels{0.0, 0.5, 1.0, 2.0, 4.0};
  std::size_t instantiations = 10;
  double noise_rel = 0.05;
  std::string amplitude = "peak";
  std::uint64_t seed = 0;
};

int cmd_noise_sweep(const Common& c, const SweepArgs& a) {
  if (a.amplitude != "peak" && a.amplitude != "rms") throw usage_error("--amplitude must be peak or rms");
  NoiseSweepConfig cfg;
  cfg.levels = a.levels;
  cfg.instantiations = a.instantiations;
  cfg.noise_rel = a.noise_rel;
  cfg.amplitude = a.amplitude == "peak" ? AmplitudeMode::peak : AmplitudeMode::rms;
  cfg.seed = a.seed;
  cfg.validate();
  std::vector<InputDir> runs;
  for (const auto& r : a.runs) runs.emplace_back(r, "train");
  OutputDir out(c.out, c.force, "noise-sweep");
  check_not_same(out, a.runs);

  std::vector<LoadedRun> loaded;
  for (const auto& r : runs) loaded.push_back(load_hw_run(r));
  for (const auto& l : loaded) {
    if (l.config.at("normalization") != loaded.front().config.at("normalization")) {
      throw usage_error("runs were trained with different input normalization; sweep them separately");
    }
  }
  Source src = load_source(a.data, c.ctx);
  const Dataset data = preprocess(std::move(src.data), loaded.front().config.at("normalization"));
  std::vector<NamedVariant> variants;
  std::map<std::string, int> seen;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    std::string name = loaded[i].config.at("model").at("cell").get<std::string>();
    if (seen[name]++ > 0) name += "#" + std::to_string(seen[name]);
    names.push_back(name);
  }
  for (std::size_t i = 0; i < loaded.size(); ++i) variants.push_back({names[i], &loaded[i].backbone});
  const auto rows = noise_sweep(variants, data, cfg);
  out.write("noise_sweep.csv", csv([&](std::ostream& os) { write_noise_sweep(os, rows); }));
  out.config = {{"runs", a.runs},
                {"data", a.data},
                {"levels", a.levels},
                {"instantiations", a.instantiations},
                {"noise_rel", a.noise_rel},
                {"amplitude", a.amplitude}};
  out.seeds = {{"noise", a.seed}};
  for (const auto& r : runs) out.inputs[r.file("checkpoint.bin").string()] = r.digest("checkpoint.bin");
  if (!src.digest.empty()) out.inputs[a.data] = src.digest;
  out.finish();
  for (const auto& r : rows) std::cout << r.variant << ',' << r.level << ',' << r.accuracy << "\n";
  return kOk;
}

struct McArgs {
  std::string netlist, data;
  std::size_t subset = 20;
  std::size_t samples = 200;
  PerturbArgs perturb;
};

int cmd_mc(const Common& c, McArgs a) {
  if (a.samples == 0) throw usage_error("--samples must be >= 1");
  a.perturb.spec.corner = parse_corner(a.perturb.corner);
  a.perturb.spec.validate();
  const InputDir nin(a.netlist, "compile");
  OutputDir out(c.out, c.force, "mc");
  check_not_same(out, {a.netlist});
  const Netlist net = load_netlist(nin);
  Source src = load_source(a.data, c.ctx);
  const Dataset data = preprocess(std::move(src.data), nin.config_json("normalization.json").at("minmax"));
  const auto ids = margin_stratified_subset(net, data, a.subset);
  MismatchRun run;
  run.draws = a.samples;
  run.spec = a.perturb.spec;
  const MismatchResult r = mismatch_mc(net, data, ids, run);
  out.write("mc_samples.csv", csv([&](std::ostream& os) { write_mc_draws(os, r); }));
  out.write("mc_inputs.csv", csv([&](std::ostream& os) { write_mc_inputs(os, r); }));
  const MarginSummary s = margin_summary(r);
  out.config = {{"netlist", a.netlist}, {"data", a.data}, {"subset", a.subset}, {"samples", a.samples},
                {"perturb", to_json(a.perturb.spec)}};
  out.seeds = {{"first_die", a.perturb.spec.seed}};
  out.inputs[nin.file("netlist.json").string()] = nin.digest("netlist.json");
  if (!src.digest.empty()) out.inputs[a.data] = src.digest;
  out.finish();
  std::cout << "inputs " << ids.size() << " draws " << a.samples << "\n"
            << "flipped " << s.n_flipped << " median_margin " << s.median_flipped << "\n"
            << "never_flipped " << s.n_never << " median_margin " << s.median_never << "\n";
  return kOk;
}

int cmd_power(const Common& c, const std::vector<std::size_t>& ds, std::size_t layers) {
  std::vector<PowerRow> rows;
  for (std::size_t d : ds) rows.push_back(power_report(d, layers));
  for (const auto& r : rows) std::cout << r.p_bmru_nW << ',' << r.p_fc_nW << "\n";
  if (!c.out.empty()) {
    OutputDir out(c.out, c.force, "power");
    out.write("power.csv", csv([&](std::ostream& os) { write_power_report(os, rows); }));
    out.config = {{"d", ds}, {"layers", layers}};
    out.finish();
  }
  return kOk;
}

int cmd_quant_report(const Common& c, const std::string& run_dir, const std::string& data_spec,
                     const std::string& bits) {
  const std::vector<int> bit_list = parse_int_list(bits, "--bits");
  for (int b : bit_list) require_bits(b);
  const InputDir run(run_dir, "train");
  OutputDir out(c.out, c.force, "quant-report");
  check_not_same(out, {run_dir});
  const LoadedRun r = load_hw_run(run);
  Source src = load_source(data_spec, c.ctx);
  const Dataset data = preprocess(std::move(src.data), r.config.at("normalization"));
  const auto rows = quantization_report(r.backbone, data, bit_list);
  out.write("quant_report.csv", csv([&](std::ostream& os) { write_quant_report(os, rows); }));
  out.config = {{"run", run_dir}, {"data", data_spec}, {"bits", bit_list}};
  out.inputs[run.file("checkpoint.bin").string()] = run.digest("checkpoint.bin");
  if (!src.digest.empty()) out.inputs[data_spec] = src.digest;
  out.finish();
  for (const auto& row : rows) std::cout << (row.bits == 0 ? std::string("fp") : std::to_string(row.bits)) << ','
                                         << row.accuracy << "\n";
  return kOk;
}

struct SynthArgs {
  std::string kind = "kws";
  std::size_t n_train = 300, n_val = 48, n_test = 100;
  std::uint64_t seed = 1;
};

int cmd_synth_fseq(const Common& c, const SynthArgs& a) {
  if (a.kind != "kws" && a.kind != "synth") throw usage_error("--kind must be kws or synth");
  OutputDir out(c.out, c.force, "synth-fseq");
  const std::vector<std::pair<std::string, std::size_t>> splits{
      {"train", a.n_train}, {"val", a.n_val}, {"test", a.n_test}};
  for (std::size_t k = 0; k < splits.size(); ++k) {
    Dataset d;
    if (a.kind == "kws") {
      KwsLikeConfig kc;
      kc.n_samples = splits[k].second;
      kc.seed = a.seed + k;
      d = make_kws_like_task(kc);
    } else {
      SyntheticTaskConfig sc;
      sc.n_samples = splits[k].second;
      sc.seed = a.seed + k;
      d = make_synthetic_task(sc);
    }
    const auto bytes = encode_fseq(d);
    out.write(a.kind + "_" + splits[k].first + ".fseq", std::string(bytes.begin(), bytes.end()));
  }
  out.config = {{"kind", a.kind}, {"train", a.n_train}, {"val", a.n_val}, {"test", a.n_test}};
  out.seeds = {{"train", a.seed}, {"val", a.seed + 1}, {"test", a.seed + 2}};
  out.finish();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fqbmru: train, compile and analyse first-quadrant bistable recurrent networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common common;
  if (const char* env = std::getenv("BMRU_DATA_DIR")) common.ctx.data_dir = env;
  auto add_common = [&](CLI::App* sub, bool out_required) {
    auto* o = sub->add_option("--out", common.out, "Output directory (must be new or empty)");
    if (out_required) o->required();
    sub->add_flag("--force", common.force, "Allow writing into a non-empty output directory");
    sub->add_option("--data-dir", common.ctx.data_dir, "Dataset directory (overrides BMRU_DATA_DIR)");
    sub->add_option("--target-class", common.ctx.target_class, "Keyword class for multi-class KWS features");
  };

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a network and write checkpoint.bin, config.json, train_log.csv");
  add_common(train_cmd, true);
  train_cmd->add_option("--task", ta.task, "synth | kws | smnist | pmnist")->capture_default_str();
  train_cmd->add_option("--train-data", ta.train_data, "Training .fseq (overrides --task)");
  train_cmd->add_option("--val-data", ta.val_data, "Validation .fseq (overrides --task)");
  train_cmd->add_option("--backbone", ta.backbone, "hw (circuit-mappable) | sw")->capture_default_str();
  train_cmd->add_option("--cell", ta.cell, "fq-bmru | lru | mingru (sw also: passthrough)")->capture_default_str();
  train_cmd->add_option("--d", ta.d, "State dimension")->capture_default_str();
  train_cmd->add_option("--layers", ta.layers, "Recurrent layers")->capture_default_str();
  train_cmd->add_option("--m", ta.m, "Model width (sw backbone)")->capture_default_str();
  train_cmd->add_option("--pe-dim", ta.pe_dim, "Positional-encoding width (sw backbone)")->capture_default_str();
  train_cmd->add_flag("--no-skip", ta.no_skip, "Disable skip connections (hw backbone)");
  train_cmd->add_option("--eps-schedule", ta.eps_schedule, "anneal | off (fq-bmru only)");
  train_cmd->add_option("--normalize", ta.normalize, "auto | minmax | none")->capture_default_str();
  train_cmd->add_option("--iters", ta.tc.max_iters, "Training iterations")->capture_default_str();
  train_cmd->add_option("--batch", ta.tc.batch, "Batch size")->capture_default_str();
  train_cmd->add_option("--lr", ta.tc.lr0, "Peak learning rate")->capture_default_str();
  train_cmd->add_option("--weight-decay", ta.tc.weight_decay)->capture_default_str();
  train_cmd->add_option("--dropout", ta.tc.dropout)->capture_default_str();
  train_cmd->add_option("--eval-every", ta.tc.eval_every)->capture_default_str();
  train_cmd->add_option("--eval-batches", ta.tc.eval_batches)->capture_default_str();
  train_cmd->add_option("--seed", ta.tc.seed, "Training seed (batches, dropout, initial states)")
      ->capture_default_str();
  train_cmd->add_option("--model-seed", ta.model_seed, "Initialization seed")->capture_default_str();

  std::string run_dir;
  int bits = 0;
  auto* compile_cmd = app.add_subcommand("compile", "Map a trained hw run onto a circuit netlist");
  add_common(compile_cmd, true);
  compile_cmd->add_option("--run", run_dir, "Directory written by 'train'")->required();
  compile_cmd->add_option("--bits", bits, "Quantize parameters to this many bits first (0: off)")
      ->capture_default_str();

  SimArgs sa;
  auto* sim_cmd = app.add_subcommand("sim", "Simulate a netlist over a dataset");
  add_common(sim_cmd, true);
  sim_cmd->add_option("--netlist", sa.netlist, "Directory written by 'compile'")->required();
  sim_cmd->add_option("--data", sa.data, ".fseq path or task:split")->required();
  sim_cmd->add_option("--run", sa.run, "Training run for a software-parity column");
  sim_cmd->add_option("--mirrors", sa.mirrors, "ideal | calibrated")->capture_default_str();
  sim_cmd->add_option("--calibration", sa.calibration, "Mirror calibration CSV (default: built-in table)");
  sim_cmd->add_flag("--calibrated-cells", sa.calibrated_cells, "Apply measured cell offsets");
  sim_cmd->add_option("--trace-sample", sa.trace_sample, "Write the probe trace of this sample");
  sim_cmd->add_flag("--perturb", sa.perturb.enabled, "Simulate one mismatched die");
  add_perturb_flags(sim_cmd, sa.perturb);

  SweepArgs wa;
  auto* sweep_cmd = app.add_subcommand("noise-sweep", "Accuracy under per-timestep signal noise");
  add_common(sweep_cmd, true);
  sweep_cmd->add_option("--run", wa.runs, "Training run (repeatable)")->required();
  sweep_cmd->add_option("--data", wa.data, ".fseq path or task:split")->required();
  sweep_cmd->add_option("--levels", wa.levels, "Multiples of the baseline noise")
      ->delimiter(',')
      ->capture_default_str();
  sweep_cmd->add_option("--instantiations", wa.instantiations, "Noisy runs per sample")->capture_default_str();
  sweep_cmd->add_option("--noise-rel", wa.noise_rel, "Baseline noise, fraction of stage amplitude")
      ->capture_default_str();
  sweep_cmd->add_option("--amplitude", wa.amplitude, "peak | rms")->capture_default_str();
  sweep_cmd->add_option("--seed", wa.seed)->capture_default_str();

  McArgs ma;
  auto* mc_cmd = app.add_subcommand("mc", "Static mismatch Monte Carlo over a margin-stratified subset");
  add_common(mc_cmd, true);
  mc_cmd->add_option("--netlist", ma.netlist, "Directory written by 'compile'")->required();
  mc_cmd->add_option("--data", ma.data, ".fseq path or task:split")->required();
  mc_cmd->add_option("--subset", ma.subset, "Inputs drawn across the margin ranking")->capture_default_str();
  mc_cmd->add_option("--samples", ma.samples, "Monte Carlo dies")->capture_default_str();
  add_perturb_flags(mc_cmd, ma.perturb);

  std::vector<std::size_t> power_d;
  std::size_t power_layers = 2;
  auto* power_cmd = app.add_subcommand("power", "Print BMRU and FC power (nW) per state dimension");
  add_common(power_cmd, false);
  power_cmd->add_option("--d", power_d, "State dimension (repeatable)")->required();
  power_cmd->add_option("--layers", power_layers)->capture_default_str();

  std::string q_data, q_bits = "8,6,4,3,2";
  auto* quant_cmd = app.add_subcommand("quant-report", "Accuracy after post-training quantization");
  add_common(quant_cmd, true);
  quant_cmd->add_option("--run", run_dir, "Directory written by 'train'")->required();
  quant_cmd->add_option("--data", q_data, ".fseq path or task:split")->required();
  quant_cmd->add_option("--bits", q_bits, "Comma-separated bit widths")->capture_default_str();

  SynthArgs ya;
  auto* synth_cmd = app.add_subcommand("synth-fseq", "Generate train/val/test .fseq files");
  add_common(synth_cmd, true);
  synth_cmd->add_option("--kind", ya.kind, "kws | synth")->capture_default_str();
  synth_cmd->add_option("--train", ya.n_train)->capture_default_str();
  synth_cmd->add_option("--val", ya.n_val)->capture_default_str();
  synth_cmd->add_option("--test", ya.n_test)->capture_default_str();
  synth_cmd->add_option("--seed", ya.seed, "Seed of the train split; val and test use seed+1, seed+2")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(common, ta);
    if (*compile_cmd) return cmd_compile(common, run_dir, bits);
    if (*sim_cmd) return cmd_sim(common, sa);
    if (*sweep_cmd) return cmd_noise_sweep(common, wa);
    if (*mc_cmd) return cmd_mc(common, ma);
    if (*power_cmd) return cmd_power(common, power_d, power_layers);
    if (*quant_cmd) return cmd_quant_report(common, run_dir, q_data, q_bits);
    if (*synth_cmd) return cmd_synth_fseq(common, ya);
  } catch (const usage_error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const precondition_error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const numerical_error& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const format_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const compile_error& e) {
    std::cerr << "compile error: " << e.what() << "\n";
    return kData;
  } catch (const dimension_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
