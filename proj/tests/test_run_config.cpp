// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "run_config.hpp"

using namespace mgru;
using namespace mgru::cli;

namespace {

const char* kValid = R"(output_dir: out
model:
  cell: mgruip-ctx
  layers: 3
  cells: 8
  projection: 4
  bn: {gate: itoh, cell: both}
  context: ["{0;1x1}", "{1x2;1x1}"]
task: {kind: lookahead-classify, frames: 10, dim: 4, classes: 3, lookahead: 1, sequences: 20, seed: 5}
train: {batch_size: 4, epochs: 2, seed: 9}
)";

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text, "cfg.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  return text.replace(pos, from.size(), to);
}

}  // namespace

TEST(RunConfig, ValidConfigPopulatesEverySection) {
  const RunConfig cfg = parse_run_config(kValid);
  EXPECT_EQ(cfg.model.cell, CellKind::mgruip_ctx);
  EXPECT_EQ(cfg.model.input_dim, 4u);
  EXPECT_EQ(cfg.model.output_dim, 3u);
  EXPECT_EQ(cfg.model.bn.gate, GateBN::input_only);
  EXPECT_EQ(cfg.model.context.for_layer(3), (ContextSpec{1, 2, 1, 1}));
  EXPECT_EQ(cfg.task.seed, 5u);
  EXPECT_EQ(cfg.train.batch_size, 4u);
  EXPECT_EQ(cfg.train.seed, 9u);
  EXPECT_EQ(cfg.output_dir, "out");
}

TEST(RunConfig, ContextMayBeOneString) {
  const RunConfig cfg =
      parse_run_config(replace(kValid, R"(["{0;1x1}", "{1x2;1x1}"])", R"("{0;1x1} {1x2;1x1}")"));
  EXPECT_EQ(cfg.model.context.layers.size(), 2u);
}

TEST(RunConfig, BatchOfOneCitesBatchNormalization) {
  const std::string msg = error_of(replace(kValid, "batch_size: 4", "batch_size: 1"));
  EXPECT_NE(msg.find("cfg.yaml:10:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("batch normalization"), std::string::npos) << msg;
}

TEST(RunConfig, UnknownKeysAreRejectedWithTheirLine) {
  std::string msg = error_of(replace(kValid, "  cells: 8", "  cells: 8\n  gate_bn: both"));
  EXPECT_NE(msg.find("cfg.yaml:6:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("model.gate_bn"), std::string::npos) << msg;
  msg = error_of(std::string(kValid) + "extra: 1\n");
  EXPECT_NE(msg.find("unknown key 'extra'"), std::string::npos) << msg;
}

TEST(RunConfig, BadValuesAreAnchored) {
  std::string msg = error_of(replace(kValid, "gate: itoh", "gate: maybe"));
  EXPECT_NE(msg.find("cfg.yaml:7:"), std::string::npos) << msg;
  msg = error_of(replace(kValid, "\"{1x2;1x1}\"", "\"{1x2;1y1}\""));
  EXPECT_NE(msg.find("cfg.yaml:8:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'y'"), std::string::npos) << msg;
  msg = error_of(replace(kValid, "cells: 8", "cells: eight"));
  EXPECT_NE(msg.find("cfg.yaml:5:"), std::string::npos) << msg;
  msg = error_of(replace(kValid, "lookahead: 1", "lookahead: 0"));
  EXPECT_NE(msg.find("task.lookahead"), std::string::npos) << msg;
  msg = error_of(replace(kValid, "seed: 9}", "seed: 9, learning_rate: 0}"));
  EXPECT_NE(msg.find("train.learning_rate"), std::string::npos) << msg;
  msg = error_of("model: [1\n");
  EXPECT_NE(msg.find("cfg.yaml:"), std::string::npos) << msg;
}

TEST(RunConfig, CrossFieldChecks) {
  EXPECT_NE(error_of(replace(kValid, "  cells: 8", "  cells: 8\n  input_dim: 5")).find("does not match"),
            std::string::npos);
  EXPECT_NE(error_of(replace(kValid, "projection: 4", "projection: 40")).find("bottleneck"), std::string::npos);
  EXPECT_NE(error_of(replace(kValid, "layers: 3", "layers: 2")).find("context plan"), std::string::npos);
  EXPECT_NE(error_of(replace(kValid, "sequences: 20", "sequences: 2")).find("task.sequences"), std::string::npos);
}

TEST(RunConfig, HashFollowsContentNotOutputDir) {
  const RunConfig a = parse_run_config(kValid);
  const RunConfig b = parse_run_config(replace(kValid, "output_dir: out", "output_dir: elsewhere"));
  const RunConfig c = parse_run_config(replace(kValid, "seed: 9", "seed: 10"));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 64u);
}

TEST(RunConfig, Sha256KnownAnswer) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
