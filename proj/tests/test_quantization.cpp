#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fqbmru/checkpoint.hpp"
#include "fqbmru/quantization.hpp"

using namespace fqbmru;

TEST(Quantize, FormulaExample) {
  EXPECT_NEAR(quantize_value(0.2, {-1.0, 1.0}, 2), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(quant_level(0.2, {-1.0, 1.0}, 2), 2.0);
}

TEST(Quantize, EndpointsAreExact) {
  const QuantRange r{-0.37, 1.91};
  for (int bits = 1; bits <= 16; ++bits) {
    EXPECT_EQ(quantize_value(r.w_min, r, bits), r.w_min);
    EXPECT_EQ(quantize_value(r.w_max, r, bits), r.w_max);
  }
}

TEST(Quantize, HalfwayRoundsAwayFromZero) {
  // 1 bit on [0, 1]: levels {0, 1}; 0.5 maps to index round(0.5) = 1.
  EXPECT_EQ(quantize_value(0.5, {0.0, 1.0}, 1), 1.0);
  EXPECT_EQ(quantize_value(0.4999, {0.0, 1.0}, 1), 0.0);
}

TEST(Quantize, DegenerateRangeMapsToMin) {
  std::vector<double> v{0.7, 0.7, 0.7};
  quantize_in_place(v, 3);
  for (double w : v) EXPECT_EQ(w, 0.7);
  EXPECT_EQ(quantize_value(5.0, {2.0, 2.0}, 4), 2.0);
}

TEST(Quantize, RejectsBadBitWidth) {
  EXPECT_THROW(quantize_value(0.1, {0.0, 1.0}, 0), precondition_error);
  std::vector<double> v{1.0, 2.0};
  EXPECT_THROW(quantize_in_place(v, -3), precondition_error);
}

TEST(Quantize, GridMembershipIdempotenceAndRange) {
  Rng rng(1);
  std::normal_distribution<double> g(0.0, 1.5);
  for (int bits : {1, 2, 3, 4, 6, 8}) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> v(37);
      for (double& w : v) w = g(rng);
      const QuantRange r = range_of(v);
      std::vector<double> q = v;
      quantize_in_place(q, bits);
      const double levels = std::ldexp(1.0, bits) - 1.0;
      const double step = (r.w_max - r.w_min) / levels;
      for (double w : q) {
        const double k = (w - r.w_min) / step;
        EXPECT_NEAR(k, std::round(k), 1e-9);
        EXPECT_GE(std::round(k), 0.0);
        EXPECT_LE(std::round(k), levels);
      }
      const QuantRange rq = range_of(q);
      EXPECT_EQ(rq.w_min, r.w_min);
      EXPECT_EQ(rq.w_max, r.w_max);
      std::vector<double> qq = q;
      quantize_in_place(qq, bits);
      EXPECT_EQ(q, qq) << "bits " << bits;
    }
  }
}

TEST(Quantize, BackboneTensorsQuantizedIndependently) {
  HwNetConfig cfg;
  cfg.seed = 2;
  const HardwareBackbone b = HardwareNet(cfg).export_backbone();
  const HardwareBackbone q = quantize(b, 2);
  auto distinct = [](const std::vector<double>& v) {
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    return static_cast<std::size_t>(std::unique(s.begin(), s.end()) - s.begin());
  };
  EXPECT_LE(distinct(q.input_proj.W.values()), 4u);
  EXPECT_LE(distinct(q.fq(0).alpha), 4u);
  EXPECT_EQ(range_of(q.fq(1).beta_lo).w_min, range_of(b.fq(1).beta_lo).w_min);
  EXPECT_EQ(range_of(q.classifier.W.values()).w_max, range_of(b.classifier.W.values()).w_max);
  EXPECT_NO_THROW(q.validate());
  // Quantizing twice changes nothing.
  const HardwareBackbone qq = quantize(q, 2);
  EXPECT_EQ(qq.input_proj.W, q.input_proj.W);
  EXPECT_EQ(qq.fq(0).delta, q.fq(0).delta);
}

TEST(QuantReport, FullPrecisionRowMatchesAccuracyAndCsvLayout) {
  HwNetConfig cfg;
  cfg.n_in = 8;
  cfg.seed = 3;
  const HardwareBackbone b = HardwareNet(cfg).export_backbone();
  SyntheticTaskConfig sc;
  sc.n_samples = 40;
  const Dataset d = make_synthetic_task(sc);
  const auto rows = quantization_report(b, d, {8, 4, 2});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].bits, 0);
  EXPECT_EQ(rows[0].accuracy, accuracy(b, d));
  std::ostringstream os;
  write_quant_report(os, rows);
  EXPECT_EQ(os.str().substr(0, 14), "bits,accuracy\n");
  EXPECT_NE(os.str().find("\n4,"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Checkpoint container

TEST(CheckpointFile, RoundTripIsBitExact) {
  HwNetConfig cfg;
  cfg.seed = 4;
  HardwareNet net(cfg);
  const Checkpoint c = snapshot(net, 1234, 0.25, 0.0);
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  EXPECT_EQ(back.iteration, 1234u);
  EXPECT_EQ(back.val_loss, 0.25);
  EXPECT_EQ(back.eps, 0.0);
  ASSERT_EQ(back.tensors.size(), c.tensors.size());
  for (const auto& [name, t] : c.tensors) EXPECT_EQ(back.tensors.at(name), t) << name;
  const auto bytes = encode_checkpoint(c);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "BMRU1");
}

TEST(CheckpointFile, CorruptionIsReported) {
  HwNetConfig cfg;
  HardwareNet net(cfg);
  auto bytes = encode_checkpoint(snapshot(net, 1, 0.0, 0.0));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), format_error);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  try {
    decode_checkpoint(truncated);
    FAIL() << "expected format_error";
  } catch (const format_error& e) {
    EXPECT_GT(e.offset, 0u);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), format_error);
}

TEST(CheckpointFile, ConfigSidecarRoundTrip) {
  HwNetConfig cfg;
  cfg.kind = CellKind::min_gru;
  cfg.d = 6;
  cfg.seed = 99;
  const HwNetConfig back = hw_config_from_json(to_json(cfg));
  EXPECT_EQ(back.kind, CellKind::min_gru);
  EXPECT_EQ(back.d, 6u);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_THROW(hw_config_from_json(nlohmann::json{{"cell", "lru"}}), format_error);
}
