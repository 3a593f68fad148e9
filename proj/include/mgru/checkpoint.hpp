// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary checkpoint container.
//
//   "MGRUCKPT"                     8-byte magic
//   u32 version                    currently 1
//   u64 n, n bytes                 model configuration as JSON
//   u64 tensor count
//   per tensor:
//     u32 n, n bytes               name, e.g. "layer2.w_v1" or "layer1.bn_cell.running_var"
//     u32 rank, rank x u64 extents
//     f64 values                   row-major
//
// Integers and floats are little-endian. Trainable tensors come first in
// visiting order, then BN running statistics.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mgru/errors.hpp"
#include "mgru/network.hpp"

namespace mgru {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'M', 'G', 'R', 'U', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json context = nlohmann::json::array();
  for (const auto& spec : cfg.context.layers) context.push_back(spec.to_string());
  return {
      {"cell", std::string(to_string(cfg.cell))},
      {"layers", cfg.layers},
      {"cells", cfg.cells},
      {"projection", cfg.projection},
      {"input_dim", cfg.input_dim},
      {"output_dim", cfg.output_dim},
      {"bn", {{"gate", std::string(to_string(cfg.bn.gate))}, {"cell", std::string(to_string(cfg.bn.cell))}}},
      {"context", context},
  };
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  const auto kind = parse_cell_kind(j.at("cell").get<std::string>());
  if (!kind) throw CheckpointError("unknown cell kind in checkpoint");
  cfg.cell = *kind;
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.cells = j.at("cells").get<std::size_t>();
  cfg.projection = j.at("projection").get<std::size_t>();
  cfg.input_dim = j.at("input_dim").get<std::size_t>();
  cfg.output_dim = j.at("output_dim").get<std::size_t>();
  const auto gate = parse_gate_bn(j.at("bn").at("gate").get<std::string>());
  const auto cell = parse_cell_bn(j.at("bn").at("cell").get<std::string>());
  if (!gate || !cell) throw CheckpointError("unknown BN mode in checkpoint");
  cfg.bn = {*gate, *cell};
  for (const auto& s : j.at("context")) cfg.context.layers.push_back(parse_context_setting(s.get<std::string>()));
  return cfg;
}

namespace detail {

template <class T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) throw CheckpointError("truncated checkpoint");
  return value;
}

inline std::string read_bytes(std::istream& is, std::uint64_t n) {
  if (n > (std::uint64_t{1} << 32)) throw CheckpointError("implausible field length in checkpoint");
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError("truncated checkpoint");
  return s;
}

template <class F>
void visit_checkpoint_tensors(Model& m, F&& f) {
  Model::visit_trainable(m, f);
  Model::visit_buffers(m, f);
}

template <class F>
void visit_checkpoint_tensors(const Model& m, F&& f) {
  Model::visit_trainable(m, f);
  Model::visit_buffers(m, f);
}

}  // namespace detail

inline void save_checkpoint(const Model& model, std::ostream& os) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
  const std::string header = config_to_json(model.config).dump();
  detail::write_pod<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));

  std::uint64_t count = 0;
  detail::visit_checkpoint_tensors(model, [&](const std::string&, const Tensor&) { ++count; });
  detail::write_pod<std::uint64_t>(os, count);
  detail::visit_checkpoint_tensors(model, [&](const std::string& name, const Tensor& t) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::write_pod<std::uint64_t>(os, e);
    for (Real v : t.data()) detail::write_pod<double>(os, static_cast<double>(v));
  });
  if (!os) throw CheckpointError("failed writing checkpoint");
}

inline Model load_checkpoint(std::istream& is) {
  char magic[sizeof kCheckpointMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::string header = detail::read_bytes(is, detail::read_pod<std::uint64_t>(is));

  ModelConfig cfg;
  try {
    cfg = config_from_json(nlohmann::json::parse(header));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  Model model = Model::init(cfg, 0);

  std::map<std::string, Tensor*> slots;
  detail::visit_checkpoint_tensors(model, [&](const std::string& name, Tensor& t) { slots.emplace(name, &t); });

  const auto count = detail::read_pod<std::uint64_t>(is);
  if (count != slots.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, configuration implies " +
                          std::to_string(slots.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = detail::read_bytes(is, detail::read_pod<std::uint32_t>(is));
    const auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError("unexpected tensor '" + name + "' in checkpoint");
    const auto rank = detail::read_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is));
    Tensor& dst = *it->second;
    if (shape != dst.shape()) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(dst.shape()));
    }
    for (Real& v : dst.data()) v = static_cast<Real>(detail::read_pod<double>(is));
    slots.erase(it);
  }
  return model;
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  save_checkpoint(model, os);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(is);
}

}  // namespace mgru
