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

// Checkpoint container. Layout, little-endian throughout:
//
//   "BMRU1"  u32 version  u64 iteration  f64 val_loss  f64 eps  u32 n_tensors
//   per tensor: u32 name_len, name bytes, u32 rank, u64 dims[rank], f64 values
//
// The JSON sidecar (config + metrics) lives next to it as <path>.json.

#pragma once

#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "fqbmru/data.hpp"
#include "fqbmru/training.hpp"

namespace fqbmru {

inline constexpr char kCheckpointMagic[5] = {'B', 'M', 'R', 'U', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  std::vector<unsigned char> b(kCheckpointMagic, kCheckpointMagic + 5);
  detail::put_le<std::uint32_t>(b, kCheckpointVersion);
  detail::put_le<std::uint64_t>(b, c.iteration);
  detail::put_le<double>(b, c.val_loss);
  detail::put_le<double>(b, c.eps);
  detail::put_le<std::uint32_t>(b, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    detail::put_le<std::uint32_t>(b, static_cast<std::uint32_t>(name.size()));
    b.insert(b.end(), name.begin(), name.end());
    detail::put_le<std::uint32_t>(b, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint64_t>(b, d);
    for (double v : t.values()) detail::put_le<double>(b, v);
  }
  return b;
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& b) {
  if (b.size() < 5 || std::memcmp(b.data(), kCheckpointMagic, 5) != 0) {
    throw format_error("not a checkpoint (missing BMRU1 magic)", 0);
  }
  std::size_t off = 5;
  const auto version = detail::read_le<std::uint32_t>(b, off, "checkpoint header");
  if (version != kCheckpointVersion) throw format_error("unsupported checkpoint version " + std::to_string(version), off);
  off += 4;
  Checkpoint c;
  c.iteration = detail::read_le<std::uint64_t>(b, off, "checkpoint header");
  off += 8;
  c.val_loss = detail::read_le<double>(b, off, "checkpoint header");
  off += 8;
  c.eps = detail::read_le<double>(b, off, "checkpoint header");
  off += 8;
  const auto n = detail::read_le<std::uint32_t>(b, off, "checkpoint header");
  off += 4;
  for (std::uint32_t k = 0; k < n; ++k) {
    const auto len = detail::read_le<std::uint32_t>(b, off, "tensor name");
    off += 4;
    if (off + len > b.size()) throw format_error("truncated tensor name", off);
    std::string name(b.begin() + static_cast<std::ptrdiff_t>(off), b.begin() + static_cast<std::ptrdiff_t>(off + len));
    off += len;
    const auto rank = detail::read_le<std::uint32_t>(b, off, "tensor rank");
    off += 4;
    if (rank > 8) throw format_error("implausible tensor rank " + std::to_string(rank), off - 4);
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r, off += 8) {
      shape.push_back(detail::read_le<std::uint64_t>(b, off, "tensor shape"));
      count *= shape.back();
    }
    if (off + 8 * count > b.size()) throw format_error("truncated payload of '" + name + "'", off);
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i, off += 8) v[i] = detail::read_le<double>(b, off, "tensor payload");
    c.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(v)));
  }
  if (off != b.size()) throw format_error("trailing bytes after last tensor", off);
  c.valid = true;
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  detail::write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Sidecar helpers

inline nlohmann::json to_json(const HwNetConfig& c) {
  return {{"cell", cell_kind_name(c.kind)}, {"n_in", c.n_in},       {"d", c.d},      {"n_layers", c.n_layers},
          {"n_classes", c.n_classes},     {"skip", c.skip},       {"seed", c.seed}};
}

inline HwNetConfig hw_config_from_json(const nlohmann::json& j) {
  try {
    HwNetConfig c;
    c.kind = parse_cell_kind(j.at("cell").get<std::string>());
    c.n_in = j.at("n_in").get<std::size_t>();
    c.d = j.at("d").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.skip = j.at("skip").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("bad model config: ") + e.what(), 0);
  }
}

inline const char* sw_cell_name(SwCell c) {
  switch (c) {
    case SwCell::fq_bmru: return "fq-bmru";
    case SwCell::lru: return "lru";
    case SwCell::min_gru: return "mingru";
    case SwCell::passthrough: return "passthrough";
  }
  return "?";
}

inline SwCell parse_sw_cell(const std::string& s) {
  if (s == "passthrough") return SwCell::passthrough;
  switch (parse_cell_kind(s)) {
    case CellKind::fq_bmru: return SwCell::fq_bmru;
    case CellKind::lru: return SwCell::lru;
    case CellKind::min_gru: return SwCell::min_gru;
  }
  throw precondition_error("unknown cell kind '" + s + "'");
}

inline nlohmann::json to_json(const SwNetConfig& c) {
  return {{"cell", sw_cell_name(c.cell)}, {"n_in", c.n_in}, {"m", c.m},           {"r", c.r},
          {"d", c.d},                      {"n_classes", c.n_classes}, {"pe_dim", c.pe_dim}, {"seed", c.seed}};
}

inline SwNetConfig sw_config_from_json(const nlohmann::json& j) {
  try {
    SwNetConfig c;
    c.cell = parse_sw_cell(j.at("cell").get<std::string>());
    c.n_in = j.at("n_in").get<std::size_t>();
    c.m = j.at("m").get<std::size_t>();
    c.r = j.at("r").get<std::size_t>();
    c.d = j.at("d").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.pe_dim = j.at("pe_dim").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("bad model config: ") + e.what(), 0);
  }
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"weight_decay", c.weight_decay},
          {"warmup_frac", c.warmup_frac},
          {"clip_norm", c.clip_norm},
          {"batch", c.batch},
          {"max_iters", c.max_iters},
          {"eval_every", c.eval_every},
          {"eval_batches", c.eval_batches},
          {"dropout", c.dropout},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"use_eps_schedule", c.use_eps_schedule},
          {"seed", c.seed}};
}

inline nlohmann::json to_json(const MinMax& m) { return {{"lo", m.lo}, {"hi", m.hi}}; }

inline MinMax minmax_from_json(const nlohmann::json& j) {
  try {
    MinMax m{j.at("lo").get<Vec>(), j.at("hi").get<Vec>()};
    if (m.lo.size() != m.hi.size()) throw format_error("min-max bounds differ in length", 0);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("bad min-max record: ") + e.what(), 0);
  }
}

/// Rebuilds a hardware-style network from a checkpoint and its model config.
inline HardwareNet load_hardware_net(const HwNetConfig& cfg, const Checkpoint& c) {
  HardwareNet net(cfg);
  restore(net, c);
  return net;
}

}  // namespace fqbmru
