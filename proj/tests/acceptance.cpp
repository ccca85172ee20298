// Acceptance run: one PASS/FAIL line per criterion, thresholds as pinned in
// the project's acceptance list. Desk models are trained from the bundled KWS
// fixtures first (set FQBMRU_DESK_CACHE to a directory to reuse checkpoints).
//
// Exit status: 0 once every criterion has been evaluated, whatever the
// verdicts; 1 if the harness itself could not run.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fqbmru/fqbmru.hpp"
#include "support.hpp"

using namespace fqbmru;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Desk models

struct DeskData {
  Dataset train, val, test;
};

DeskData load_desk_data() {
  const std::string dir = FQBMRU_FIXTURE_DIR;
  DeskData d{load_fseq(dir + "/kws_train.fseq"), load_fseq(dir + "/kws_val.fseq"), load_fseq(dir + "/kws_test.fseq")};
  const MinMax m = fit_minmax(d.train);
  d.train = apply_minmax(std::move(d.train), m);
  d.val = apply_minmax(std::move(d.val), m);
  d.test = apply_minmax(std::move(d.test), m);
  return d;
}

struct DeskModel {
  HardwareBackbone net;
  double val_acc = 0.0;
  std::string recipe;
};

DeskModel train_desk(const DeskData& data, CellKind kind, std::uint64_t model_seed, std::uint64_t train_seed,
                     std::size_t iters) {
  HwNetConfig hc;
  hc.kind = kind;
  hc.n_in = data.train.D();
  hc.d = 4;
  hc.seed = model_seed;
  TrainConfig tc;
  tc.lr0 = 3e-3;
  tc.max_iters = iters;
  tc.seed = train_seed;
  std::ostringstream recipe;
  recipe << cell_kind_name(kind) << " seeds " << model_seed << "/" << train_seed << ", " << iters << " iters";

  HardwareNet net(hc);
  const char* cache = std::getenv("FQBMRU_DESK_CACHE");
  fs::path ckpt;
  if (cache != nullptr) {
    ckpt = fs::path(cache) / (std::string(cell_kind_name(kind)) + "_" + std::to_string(model_seed) + "_" +
                              std::to_string(train_seed) + "_" + std::to_string(iters) + ".ckpt");
  }
  if (!ckpt.empty() && fs::exists(ckpt)) {
    net = load_hardware_net(hc, load_checkpoint(ckpt.string()));
  } else {
    const TrainResult r = train(net, data.train, data.val, tc);
    if (!ckpt.empty()) {
      fs::create_directories(ckpt.parent_path());
      save_checkpoint(r.best, ckpt.string());
    }
  }
  DeskModel m{net.export_backbone(), 0.0, recipe.str()};
  m.val_acc = accuracy(m.net, data.val);
  return m;
}

// FQ BMRU training on this task depends strongly on the seed, so candidates
// are tried in a fixed order and the first to clear the validation bar is kept.
DeskModel train_desk_fq(const DeskData& data) {
  const std::pair<std::uint64_t, std::uint64_t> candidates[] = {{1, 11}, {2, 12}, {3, 13}};
  DeskModel best;
  best.val_acc = -1.0;
  for (const auto& [ms, ts] : candidates) {
    DeskModel m = train_desk(data, CellKind::fq_bmru, ms, ts, 8000);
    std::cout << "  desk " << m.recipe << ": val " << fmt(m.val_acc) << "\n" << std::flush;
    if (m.val_acc > best.val_acc) best = m;
    if (m.val_acc >= 0.9) break;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Criteria

Verdict scan_equivalence() {
  Rng rng(10);
  std::uniform_int_distribution<std::size_t> len(1, 256), dim(1, 6);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::size_t instances = 0, exact_fail = 0, tol_fail = 0;
  double worst = 0.0;
  for (int inst = 0; inst < 30; ++inst) {
    const std::size_t T = len(rng), d = dim(rng), n = dim(rng);
    Tensor x = Tensor::matrix(T, n);
    for (double& v : x.values()) v = u(rng);
    {
      const auto p = init_fq_bmru(d, n, rng);
      Vec h0(d);
      for (std::size_t i = 0; i < d; ++i) h0[i] = i % 2 ? p.alpha[i] : 0.0;
      if (!(scan_parallel(p, x, h0) == scan_sequential(p, x, h0))) ++exact_fail;
      ++instances;
    }
    {
      const auto p = init_bmru(d, n, rng);
      Vec h0(d);
      for (std::size_t i = 0; i < d; ++i) h0[i] = i % 2 ? p.alpha[i] : -p.alpha[i];
      if (!(scan_parallel(p, x, h0) == scan_sequential(p, x, h0))) ++exact_fail;
      ++instances;
    }
    {
      const auto p = init_min_gru(d, n, rng);
      const Vec h0(d, 0.3);
      const Tensor a = scan_parallel(p, x, h0), b = scan_sequential(p, x, h0);
      double w = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, std::fabs(a[i] - b[i]));
      worst = std::max(worst, w);
      if (!(w < 1e-10)) ++tol_fail;
      ++instances;
    }
    {
      const auto p = init_lru(d, n, 2, rng);
      const CVec x0(d, {0.1, -0.2});
      const auto a = scan_parallel(p, x, x0), b = scan_sequential(p, x, x0);
      double w = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < d; ++i) w = std::max(w, std::abs(a[t][i] - b[t][i]));
      worst = std::max(worst, w);
      if (!(w < 1e-10)) ++tol_fail;
      ++instances;
    }
  }
  return {exact_fail == 0 && tol_fail == 0 && instances >= 100,
          std::to_string(instances) + " instances, " + std::to_string(exact_fail) + " inexact FQ/BMRU, " +
              std::to_string(tol_fail) + " LRU/minGRU over 1e-10 (worst " + fmt(worst, 3) + ")"};
}

Verdict proposition1() {
  Rng rng(10);
  std::uniform_real_distribution<double> u(-1.0, 1.0), in(-2.0, 2.0);
  std::bernoulli_distribution coin(0.5);
  double worst = 0.0;
  bool unipolar = true;
  const int trials = 60;
  for (int trial = 0; trial < trials; ++trial) {
    BipolarBmruNet net;
    net.cell = init_bmru(5, 3, rng);
    net.head.W = Tensor::matrix(3, 5);
    for (double& w : net.head.W.values()) w = u(rng);
    net.head.b = Vec(3);
    for (double& v : net.head.b) v = u(rng);
    net.h0 = Vec(5);
    for (std::size_t i = 0; i < 5; ++i) net.h0[i] = coin(rng) ? net.cell.alpha[i] : -net.cell.alpha[i];
    Tensor x = Tensor::matrix(25, 3);
    for (double& v : x.values()) v = in(rng);
    const UnipolarBmruNet uni = reparameterize_prop1(net);
    const Tensor a = forward(net, x), b = forward(uni, x);
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::fabs(a[k] - b[k]));
    const Tensor h = unipolar_states(uni, x);
    for (std::size_t t = 0; t < h.rows(); ++t)
      for (std::size_t i = 0; i < h.cols(); ++i) unipolar = unipolar && (h(t, i) == 0.0 || h(t, i) == uni.cell.alpha[i]);
  }
  return {worst <= 1e-10 && unipolar, std::to_string(trials) + " networks, max |Δlogit| " + fmt(worst, 3) +
                                          (unipolar ? ", states in {0, α}" : ", non-unipolar state seen")};
}

Verdict hw_sw_agreement(const HardwareBackbone& model, const Dataset& data) {
  const Netlist net = compile(model);
  double worst = 0.0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor seq = data.sequence(i);
    Trace sw;
    const Tensor logits = forward_hw(model, seq, &sw);
    const SimResult hw = simulate(net, to_currents(seq));
    if (hw.trace.names != sw.names) return {false, "probe sets differ"};
    for (const auto& name : sw.names) {
      const Tensor& a = sw.at(name);
      const Tensor& c = hw.trace.at(name);
      for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::fabs(c[k] - kPicoampPerUnit * a[k]));
    }
    if (hw.vote.label == majority_vote(logits).label) ++agree;
  }
  return {worst <= 1e-9 && agree == data.size(),
          "max probe deviation " + fmt(worst, 3) + " pA, votes agree " + std::to_string(agree) + "/" +
              std::to_string(data.size())};
}

Verdict error_suppression(const HardwareBackbone& model, const Dataset& data) {
  const Netlist net = compile(model);
  const std::size_t layer = 1;
  double cand = 0.0, state = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Suppression s = measure_suppression(net, to_currents(data.sequence(i)), 60.0, layer, 1000 + i, 3.0);
    cand += s.mae_candidate;
    state += s.mae_state;
  }
  const double ratio = cand / std::max(state, 3.0 * static_cast<double>(data.size()));

  // Structural case: noise clipped so no candidate crosses a threshold.
  Rng rng(77);
  std::normal_distribution<double> g(0.0, 60.0);
  bool untouched = true;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor x = to_currents(data.sequence(i));
    const SimResult clean = simulate(net, x);
    SimOptions opt;
    opt.hook = [&](const std::string& stage, std::size_t t, std::span<double> v) {
      for (std::size_t l = 0; l < net.n_layers(); ++l) {
        if (stage != probe_name(l, "candidate")) continue;
        for (std::size_t k = 0; k < v.size(); ++k) {
          const auto& c = net.cells[l][k];
          const double lo = c.I_thresh - c.I_width, hi = c.I_thresh, I = clean.trace.at(stage)(t, k);
          double down = 0.0, up = 0.0;  // room before the nearest threshold crossing
          if (I > hi) {
            down = 0.9 * (I - hi);
            up = 1e12;
          } else if (I < lo) {
            down = I;
            up = 0.9 * (lo - I);
          } else {
            down = 0.9 * (I - lo);
            up = 0.9 * (hi - I);
          }
          v[k] = I + std::clamp(g(rng), -down, up);
        }
      }
    };
    const SimResult noisy = simulate(net, x, opt);
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
      untouched = untouched && noisy.trace.at(probe_name(l, "state")) == clean.trace.at(probe_name(l, "state"));
    }
  }
  return {ratio >= 10.0 && untouched, "layer-2 candidate MAE " + fmt(cand / static_cast<double>(data.size())) +
                                          " pA, state MAE " + fmt(state / static_cast<double>(data.size())) +
                                          " pA, ratio " + fmt(ratio, 3) + " (need >= 10); in-margin noise " +
                                          (untouched ? "leaves states exact" : "CHANGED a state")};
}

Verdict noise_shape(const HardwareBackbone& fq, const HardwareBackbone& lru, const HardwareBackbone& mingru,
                    const Dataset& data) {
  NoiseSweepConfig cfg;
  cfg.levels = {0.0, 1.0, 4.0};
  cfg.instantiations = 10;
  cfg.seed = 5;
  const auto rows = noise_sweep({{"fq-bmru", &fq}, {"lru", &lru}, {"mingru", &mingru}}, data, cfg);
  auto at = [&](const std::string& v, double level) {
    for (const auto& r : rows)
      if (r.variant == v && r.level == level) return r.accuracy;
    return std::nan("");
  };
  const double fq0 = at("fq-bmru", 0), fq1 = at("fq-bmru", 1), fq4 = at("fq-bmru", 4);
  const double lru0 = at("lru", 0), lru1 = at("lru", 1);
  const bool ok = fq1 >= fq0 - 0.02 && lru1 <= lru0 - 0.20 && fq4 <= fq0 - 0.10;
  return {ok, "fq-bmru " + fmt(fq0) + " -> " + fmt(fq1) + " (1x) -> " + fmt(fq4) + " (4x); lru " + fmt(lru0) +
                  " -> " + fmt(lru1) + " (1x); mingru " + fmt(at("mingru", 0)) + " -> " + fmt(at("mingru", 1)) +
                  " (1x)"};
}

Verdict power_table() {
  struct Cell {
    std::size_t d;
    int bmru, fc, sb, sf;
  };
  const Cell table[] = {{4, 40, 30, 57, 43},
                        {8, 80, 120, 40, 60},
                        {16, 160, 480, 25, 75},
                        {32, 320, 1920, 14, 86},
                        {64, 640, 7680, 8, 92}};
  int matched = 0;
  for (const auto& c : table) {
    const PowerRow r = power_report(c.d);
    matched += r.p_bmru_nW == c.bmru && std::lround(100 * r.share_bmru) == c.sb;
    matched += r.p_fc_nW == c.fc && std::lround(100 * r.share_fc) == c.sf;
  }
  return {matched == 10, std::to_string(matched) + "/10 cells exact"};
}

Verdict quantization(const HardwareBackbone& fq, const Dataset& data) {
  const auto rows = quantization_report(fq, data, {4, 2});
  double fp = 0, q4 = 0, q2 = 0;
  for (const auto& r : rows) (r.bits == 0 ? fp : r.bits == 4 ? q4 : q2) = r.accuracy;
  return {fp - q4 <= 0.05 && fp - q2 >= 0.15,
          "full " + fmt(fp) + ", 4-bit " + fmt(q4) + ", 2-bit " + fmt(q2) + " (need loss <= 0.05 and >= 0.15)"};
}

Verdict training_recipe() {
  auto synthetic = [](std::size_t n, std::uint64_t seed) {
    SyntheticTaskConfig c;
    c.n_samples = n;
    c.seed = seed;
    return make_synthetic_task(c);
  };
  HwNetConfig hc;
  hc.n_in = 8;
  hc.d = 8;
  hc.seed = 14;
  HardwareNet net(hc);
  const Dataset tr = synthetic(512, 21), va = synthetic(200, 22);
  TrainConfig cfg;
  cfg.max_iters = 2000;
  cfg.batch = 32;
  cfg.eval_batches = 4;
  cfg.seed = 15;
  train(net, tr, va, cfg);
  const double acc = accuracy(net.export_backbone(), va);

  const EpsSchedule s;
  const bool eps_ok = eps_at(s, 0.03) == 1.0 && std::fabs(eps_at(s, 0.40) - 0.5) < 1e-12 && eps_at(s, 0.80) == 0.0;
  TrainConfig lc;
  lc.max_iters = 2000;
  const bool lr_ok = lr_at(lc, 0) == 0.0 && lr_at(lc, 20) == lc.lr0 && std::fabs(lr_at(lc, 2000)) < 1e-12;
  std::string gsc = "optional speech-commands check skipped (no features supplied)";
  return {acc >= 0.99 && eps_ok && lr_ok, "d=8 synthetic val " + fmt(acc) + " after 2000 iters; eps spot values " +
                                              (eps_ok ? "ok" : "WRONG") + ", lr endpoints " +
                                              (lr_ok ? "ok" : "WRONG") + "; " + gsc};
}

Verdict mismatch_margin(const HardwareBackbone& fq, const Dataset& data) {
  const Netlist net = compile(fq);
  const auto ids = margin_stratified_subset(net, data, 20);
  MismatchRun run;
  run.draws = 200;
  const MismatchResult r = mismatch_mc(net, data, ids, run);
  const MarginSummary s = margin_summary(r);
  const bool ok = s.n_flipped > 0 && s.n_never > 0 && s.median_flipped < s.median_never;
  return {ok, std::to_string(ids.size()) + " inputs x 200 draws: " + std::to_string(s.n_flipped) +
                  " ever flipped (median margin " + fmt(s.median_flipped) + "), " + std::to_string(s.n_never) +
                  " never flipped (median margin " + fmt(s.median_never) + ")"};
}

Verdict gradient_sanity() {
  std::mt19937_64 rng(5);
  auto random_matrix = [&](std::size_t r, std::size_t c, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t = Tensor::matrix(r, c);
    for (double& v : t.values()) v = u(rng);
    return t;
  };
  const Tensor x = random_matrix(3, 4, 0.2, 1.5), other = random_matrix(3, 4, 0.2, 1.5);
  const Tensor row = random_matrix(1, 4, -1, 1), w = random_matrix(2, 4, -1, 1);
  const Tensor ra = random_matrix(10, 3, 0, 1), rb = random_matrix(10, 3, -1, 1), rh = random_matrix(2, 3, -1, 1),
               rw = random_matrix(10, 3, -1, 1);
  const Tensor lam = random_matrix(1, 4, -0.7, 0.7), cb = random_matrix(12, 4, -1, 1), cw = random_matrix(12, 4, -1, 1);
  using F = std::function<Var(Tape&, const Var&)>;
  const std::vector<std::tuple<const char*, F, const Tensor*>> cases = {
      {"add", [&](Tape& t, const Var& v) { return sum(square(v + t.constant(other))); }, &x},
      {"add_row", [&](Tape& t, const Var& v) { return sum(square(v + t.constant(row))); }, &x},
      {"sub", [&](Tape& t, const Var& v) { return sum(square(t.constant(other) - v)); }, &x},
      {"mul", [&](Tape& t, const Var& v) { return sum(v * t.constant(other) * v); }, &x},
      {"scale", [](Tape&, const Var& v) { return sum(square(scale(v, -2.5))); }, &x},
      {"add_scalar", [](Tape&, const Var& v) { return sum(square(add_scalar(v, 0.3))); }, &x},
      {"one_minus", [](Tape&, const Var& v) { return sum(square(one_minus(v))); }, &x},
      {"sigmoid", [](Tape&, const Var& v) { return sum(sigmoid(v)); }, &x},
      {"tanh", [](Tape&, const Var& v) { return sum(tanh(v)); }, &x},
      {"exp", [](Tape&, const Var& v) { return sum(exp(v)); }, &x},
      {"log", [](Tape&, const Var& v) { return sum(log(v)); }, &x},
      {"softplus", [](Tape&, const Var& v) { return sum(softplus(v)); }, &x},
      {"sin", [](Tape&, const Var& v) { return sum(sin(v)); }, &x},
      {"cos", [](Tape&, const Var& v) { return sum(cos(v)); }, &x},
      {"sqrt", [](Tape&, const Var& v) { return sum(sqrt(v)); }, &x},
      {"abs", [](Tape&, const Var& v) { return sum(square(abs(v))); }, &x},
      {"relu", [](Tape&, const Var& v) { return sum(square(relu(v))); }, &x},
      {"mean", [](Tape&, const Var& v) { return mean(square(v)); }, &x},
      {"matmul", [&](Tape& t, const Var& v) { return sum(square(matmul(v, t.constant(w.transposed())))); }, &x},
      {"linear",
       [&](Tape& t, const Var& v) {
         return sum(square(linear(v, t.constant(w), t.constant(Tensor::row({0.1, -0.2})))));
       },
       &x},
      {"slice_cols", [](Tape&, const Var& v) { return sum(square(slice_cols(v, 1, 2))); }, &x},
      {"concat_cols",
       [](Tape&, const Var& v) { return sum(square(concat_cols({v, scale(v, 2.0), slice_cols(v, 0, 1)}))); }, &x},
      {"layer_norm", [&](Tape& t, const Var& v) { return sum(layer_norm_rows(v) * t.constant(other)); }, &x},
      {"cross_entropy",
       [](Tape&, const Var& v) {
         static const std::vector<int> labels{1, 3, 0};
         return cross_entropy_rows(v, labels);
       },
       &x},
      {"heaviside_smooth",
       [](Tape&, const Var& v) { return sum(heaviside(add_scalar(v, -0.8), HeavisideMode::smooth)); }, &x},
      {"linear_recurrence",
       [&](Tape& t, const Var& v) {
         return sum(linear_recurrence(v, t.constant(rb), t.constant(rh), 0.4, 5, 2) * t.constant(rw));
       },
       &ra},
      {"complex_recurrence",
       [&](Tape& t, const Var& v) { return sum(complex_linear_recurrence(v, t.constant(cb), 6, 2) * t.constant(cw)); },
       &lam},
  };
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, f, at] : cases) {
    const double e = grad_check(f, *at);
    if (!(e <= worst)) {
      worst = e;
      worst_name = name;
    }
  }

  double surrogate_err = 0.0;
  Tensor grid = Tensor::matrix(1, 401);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = -4.0 + 0.02 * static_cast<double>(i);
  Parameter p("x", grid);
  {
    Tape tape;
    tape.backward(sum(heaviside(tape.leaf(p))));
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double expect = 1.0 / (1.0 + std::pow(std::numbers::pi * grid[i], 2));
    surrogate_err = std::max({surrogate_err, std::fabs(heaviside_surrogate(grid[i]) - expect),
                              std::fabs(p.grad[i] - expect)});
  }
  return {worst < 1e-4 && surrogate_err <= 1e-12,
          std::to_string(cases.size()) + " ops, worst relative error " + fmt(worst, 3) + " (" + worst_name +
              "); surrogate max deviation " + fmt(surrogate_err, 3)};
}

}  // namespace

int main() {
  try {
    std::cout << "fqbmru acceptance\n" << std::flush;
    struct Row {
      int id;
      const char* name;
      double limit_s;
      Verdict v;
      double secs;
    };
    std::vector<Row> rows;
    auto run = [&](int id, const char* name, double limit_s, const std::function<Verdict()>& f) {
      const auto t0 = Clock::now();
      Verdict v = f();
      const double s = seconds_since(t0);
      if (s > limit_s) {
        v.pass = false;
        v.detail += "; over the " + fmt(limit_s) + " s budget";
      }
      std::cout << (v.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << v.detail << " [" << fmt(s, 3)
                << " s]\n"
                << std::flush;
      rows.push_back({id, name, limit_s, v, s});
    };

    run(1, "scan-equivalence", 10, scan_equivalence);
    run(2, "proposition-1", 5, proposition1);
    run(6, "power-table", 1, power_table);
    run(10, "gradient-sanity", 60, gradient_sanity);
    run(8, "training-recipe", 300, training_recipe);

    const auto t0 = Clock::now();
    std::cout << "  training desk models on the KWS fixtures\n" << std::flush;
    const DeskData data = load_desk_data();
    const DeskModel fq = train_desk_fq(data);
    const DeskModel lru = train_desk(data, CellKind::lru, 7, 11, 4000);
    const DeskModel mingru = train_desk(data, CellKind::min_gru, 7, 11, 4000);
    std::cout << "  desk models (" << fmt(seconds_since(t0), 3) << " s): " << fq.recipe << " val " << fmt(fq.val_acc)
              << " test " << fmt(accuracy(fq.net, data.test)) << "; " << lru.recipe << " test "
              << fmt(accuracy(lru.net, data.test)) << "; " << mingru.recipe << " test "
              << fmt(accuracy(mingru.net, data.test)) << "\n"
              << std::flush;

    run(3, "hw-sw-agreement", 60, [&] { return hw_sw_agreement(fq.net, data.test); });
    run(4, "error-suppression", 60, [&] { return error_suppression(fq.net, data.test); });
    run(5, "noise-sweep-shape", 900, [&] { return noise_shape(fq.net, lru.net, mingru.net, data.test); });
    run(7, "quantization", 300, [&] { return quantization(fq.net, data.test); });
    run(9, "mismatch-margin", 600, [&] { return mismatch_margin(fq.net, data.test); });

    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });
    int passed = 0;
    std::cout << "summary:";
    for (const auto& r : rows) {
      std::cout << " " << r.id << "=" << (r.v.pass ? "PASS" : "FAIL");
      passed += r.v.pass;
    }
    std::cout << "\n" << passed << "/" << rows.size() << " criteria pass\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "acceptance harness error: " << e.what() << "\n";
    return 1;
  }
}
