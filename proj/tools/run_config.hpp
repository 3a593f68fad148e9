// SPDX-License-Identifier: Apache-2.0
#pragma once

// YAML run configuration for the command-line tool.
//
//   output_dir: runs/lookahead        # relative to the config file
//   model:
//     cell: mgruip-ctx                # mgru | mgruip | mgruip-ctx
//     layers: 3
//     cells: 32
//     projection: 16
//     bn: {gate: itoh, cell: both}    # gate: none|itoh|both, cell: itoh|both
//     context: ["{0;1x1}", "{0;1x1}"] # layers 2.. ; a single string also works
//   task: {kind: lookahead-classify, frames: 40, dim: 8, classes: 4, lookahead: 2, sequences: 200, seed: 1}
//   train: {learning_rate: 0.05, momentum: 0.9, batch_size: 16, epochs: 30, clip: 5, eval_fraction: 0.2, seed: 1}
//
// model.input_dim / model.output_dim default to task.dim / task.classes.
// Unknown keys are errors. Every error carries file:line:column.

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mgru/checkpoint.hpp"
#include "mgru/network.hpp"
#include "mgru/tasks.hpp"
#include "mgru/trainer.hpp"

namespace mgru::cli {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  ModelConfig model;
  TaskSpec task;
  TrainConfig train;
  std::filesystem::path output_dir = "run";
};

namespace detail {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Mark& mark, const std::string& what) const {
    std::ostringstream os;
    os << source_;
    if (!mark.is_null()) os << ':' << mark.line + 1 << ':' << mark.column + 1;
    os << ": " << what;
    throw ConfigError(os.str());
  }

  void require_map(const YAML::Node& node, const std::string& path) const {
    if (!node.IsMap()) fail(node.Mark(), path + " must be a mapping");
  }

  void reject_unknown(const YAML::Node& node, const std::string& path, std::initializer_list<const char*> keys) const {
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& kv : node) {
      const std::string key = kv.first.as<std::string>();
      if (!allowed.count(key)) {
        std::string list;
        for (const auto& k : allowed) list += (list.empty() ? "" : ", ") + k;
        fail(kv.first.Mark(), "unknown key '" + (path.empty() ? key : path + "." + key) + "' (expected one of: " +
                                  list + ")");
      }
    }
  }

  template <class T>
  T scalar(const YAML::Node& node, const std::string& path) const {
    if (!node.IsScalar()) fail(node.Mark(), path + " must be a scalar");
    try {
      return node.as<T>();
    } catch (const YAML::BadConversion&) {
      fail(node.Mark(), path + ": cannot read '" + node.Scalar() + "' as " + type_name<T>());
    }
  }

  std::size_t count(const YAML::Node& node, const std::string& path) const {
    const auto v = scalar<long long>(node, path);
    if (v < 0) fail(node.Mark(), path + " must be >= 0");
    return static_cast<std::size_t>(v);
  }

  template <class T>
  static const char* type_name() {
    if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else return "a string";
  }

 private:
  std::string source_;
};

}  // namespace detail

/// Parses and validates a run configuration. `source` names the text in messages.
inline RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>") {
  detail::Reader r(source);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    r.fail(e.mark, e.msg);
  }
  if (!root.IsDefined() || root.IsNull()) r.fail(YAML::Mark::null_mark(), "configuration is empty");
  r.require_map(root, "configuration");
  r.reject_unknown(root, "", {"output_dir", "model", "task", "train"});
  for (const char* section : {"model", "task"}) {
    if (!root[section]) r.fail(root.Mark(), std::string("missing section '") + section + "'");
  }

  RunConfig cfg;
  if (root["output_dir"]) cfg.output_dir = r.scalar<std::string>(root["output_dir"], "output_dir");

  // task
  const YAML::Node task = root["task"];
  r.require_map(task, "task");
  r.reject_unknown(task, "task", {"kind", "frames", "dim", "classes", "lookahead", "window", "sequences", "seed", "noise"});
  TaskSpec& ts = cfg.task;
  if (task["kind"]) {
    const auto kind = parse_task_kind(r.scalar<std::string>(task["kind"], "task.kind"));
    if (!kind) r.fail(task["kind"].Mark(), "task.kind must be lookahead-classify or slow-signal");
    ts.kind = *kind;
  }
  auto task_count = [&](const char* key, std::size_t& dst, std::size_t min) {
    if (!task[key]) return;
    dst = r.count(task[key], std::string("task.") + key);
    if (dst < min) r.fail(task[key].Mark(), "task." + std::string(key) + " must be >= " + std::to_string(min));
  };
  task_count("frames", ts.frames, 1);
  task_count("dim", ts.dim, 1);
  task_count("classes", ts.classes, 2);
  task_count("lookahead", ts.lookahead, ts.kind == TaskKind::lookahead_classify ? 1 : 0);
  task_count("window", ts.window, ts.kind == TaskKind::slow_signal ? 2 : 0);
  task_count("sequences", ts.sequences, 1);
  if (task["seed"]) ts.seed = r.scalar<std::uint64_t>(task["seed"], "task.seed");
  if (task["noise"]) ts.noise = r.scalar<Real>(task["noise"], "task.noise");
  try {
    ts.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(task.Mark(), std::string("task: ") + e.what());
  }

  // model
  const YAML::Node model = root["model"];
  r.require_map(model, "model");
  r.reject_unknown(model, "model", {"cell", "layers", "cells", "projection", "input_dim", "output_dim", "bn", "context"});
  ModelConfig& mc = cfg.model;
  if (!model["cell"]) r.fail(model.Mark(), "model.cell is required");
  const auto kind = parse_cell_kind(r.scalar<std::string>(model["cell"], "model.cell"));
  if (!kind) r.fail(model["cell"].Mark(), "model.cell must be mgru, mgruip or mgruip-ctx");
  mc.cell = *kind;
  if (model["layers"]) mc.layers = r.count(model["layers"], "model.layers");
  if (!model["cells"]) r.fail(model.Mark(), "model.cells is required");
  mc.cells = r.count(model["cells"], "model.cells");
  if (model["projection"]) mc.projection = r.count(model["projection"], "model.projection");
  mc.input_dim = ts.dim;
  mc.output_dim = ts.classes;
  for (const auto& [key, task_value, dst] :
       {std::tuple{"input_dim", ts.dim, &mc.input_dim}, std::tuple{"output_dim", ts.classes, &mc.output_dim}}) {
    if (!model[key]) continue;
    *dst = r.count(model[key], std::string("model.") + key);
    if (*dst != task_value) {
      r.fail(model[key].Mark(), std::string("model.") + key + " = " + std::to_string(*dst) + " does not match the task (" +
                                    std::to_string(task_value) + ")");
    }
  }
  if (const YAML::Node bn = model["bn"]) {
    r.require_map(bn, "model.bn");
    r.reject_unknown(bn, "model.bn", {"gate", "cell"});
    if (bn["gate"]) {
      const auto g = parse_gate_bn(r.scalar<std::string>(bn["gate"], "model.bn.gate"));
      if (!g) r.fail(bn["gate"].Mark(), "model.bn.gate must be none, itoh or both");
      mc.bn.gate = *g;
    }
    if (bn["cell"]) {
      const auto c = parse_cell_bn(r.scalar<std::string>(bn["cell"], "model.bn.cell"));
      if (!c) r.fail(bn["cell"].Mark(), "model.bn.cell must be itoh or both");
      mc.bn.cell = *c;
    }
  }
  if (const YAML::Node ctx = model["context"]) {
    try {
      if (ctx.IsSequence()) {
        for (const auto& item : ctx) {
          if (!item.IsScalar()) r.fail(item.Mark(), "model.context entries must be quoted strings like \"{0;1x3}\"");
          mc.context.layers.push_back(parse_context_setting(item.Scalar()));
        }
      } else if (ctx.IsScalar()) {
        mc.context = parse_context_plan(ctx.Scalar());
      } else {
        r.fail(ctx.Mark(), "model.context must be a string or a list of quoted strings like \"{0;1x3}\"");
      }
    } catch (const ParseError& e) {
      r.fail(ctx.Mark(), std::string("model.context: ") + e.what());
    }
  }
  try {
    mc.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(model.Mark(), std::string("model: ") + e.what());
  }

  // train
  if (const YAML::Node train = root["train"]) {
    r.require_map(train, "train");
    r.reject_unknown(train, "train",
                     {"learning_rate", "momentum", "batch_size", "epochs", "clip", "eval_fraction", "seed"});
    TrainConfig& tc = cfg.train;
    auto real = [&](const char* key, Real& dst, const std::function<bool(Real)>& ok, const char* rule) {
      if (!train[key]) return;
      dst = r.scalar<Real>(train[key], std::string("train.") + key);
      if (!ok(dst)) r.fail(train[key].Mark(), std::string("train.") + key + " " + rule);
    };
    real("learning_rate", tc.learning_rate, [](Real v) { return v > 0; }, "must be > 0");
    real("momentum", tc.momentum, [](Real v) { return v >= 0 && v < 1; }, "must lie in [0, 1)");
    real("clip", tc.clip, [](Real v) { return v > 0; }, "must be > 0");
    real("eval_fraction", tc.eval_fraction, [](Real v) { return v >= 0 && v < 1; }, "must lie in [0, 1)");
    if (train["batch_size"]) {
      tc.batch_size = r.count(train["batch_size"], "train.batch_size");
      if (tc.batch_size < 2) {
        r.fail(train["batch_size"].Mark(),
               "train.batch_size = " + std::to_string(tc.batch_size) +
                   ": batch size must be >= 2, train-mode batch normalization needs a batch variance");
      }
    }
    if (train["epochs"]) tc.epochs = r.count(train["epochs"], "train.epochs");
    if (train["seed"]) tc.seed = r.scalar<std::uint64_t>(train["seed"], "train.seed");
  }

  // cross-section: the split must leave enough training sequences
  try {
    const std::size_t n = ts.sequences;
    Dataset probe{ts, std::vector<Sequence>(n)};
    const DataSplit split = split_dataset(probe, cfg.train.eval_fraction);
    if (split.train.size() < 2) throw std::invalid_argument("training split needs at least 2 sequences");
  } catch (const std::invalid_argument& e) {
    r.fail(task["sequences"] ? task["sequences"].Mark() : task.Mark(), std::string("task.sequences: ") + e.what());
  }
  return cfg;
}

/// Reads a file; a relative output_dir is resolved against the file's directory.
inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path.string() + ": cannot open configuration");
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig cfg = parse_run_config(ss.str(), path.string());
  if (cfg.output_dir.is_relative()) cfg.output_dir = (path.parent_path() / cfg.output_dir).lexically_normal();
  return cfg;
}

/// Canonical JSON of everything that determines a run's numbers (no output path).
inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  const TaskSpec& t = cfg.task;
  const TrainConfig& tr = cfg.train;
  return {
      {"model", config_to_json(cfg.model)},
      {"task",
       {{"kind", std::string(to_string(t.kind))},
        {"frames", t.frames},
        {"dim", t.dim},
        {"classes", t.classes},
        {"lookahead", t.lookahead},
        {"window", t.window},
        {"sequences", t.sequences},
        {"seed", t.seed},
        {"noise", t.noise}}},
      {"train",
       {{"learning_rate", tr.learning_rate},
        {"momentum", tr.momentum},
        {"batch_size", tr.batch_size},
        {"epochs", tr.epochs},
        {"clip", tr.clip},
        {"eval_fraction", tr.eval_fraction},
        {"seed", tr.seed}}},
  };
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

inline std::string config_hash(const RunConfig& cfg) { return sha256_hex(run_config_to_json(cfg).dump()); }

}  // namespace mgru::cli
