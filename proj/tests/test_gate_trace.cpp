// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "mgru/checkpoint.hpp"
#include "mgru/gate_trace.hpp"
#include "mgru/trainer.hpp"
#include "test_util.hpp"

using namespace mgru;
using mgru::testing::random_tensor;

namespace {

ModelConfig gate_model(GateBN gate, std::size_t layers = 2) {
  ModelConfig cfg;
  cfg.cell = CellKind::mgru;
  cfg.layers = layers;
  cfg.cells = 16;
  cfg.input_dim = 8;
  cfg.output_dim = 4;
  cfg.bn = {gate, CellBN::input_and_hidden};
  return cfg;
}

}  // namespace

TEST(GateTrace, FreshNormalizedGateStaysNearHalf) {
  Rng rng(1);
  const Model model = Model::init(gate_model(GateBN::input_and_hidden), 2);
  const auto records = trace_gate(model, random_tensor({30, 64, 8}, rng), 2);
  ASSERT_EQ(records.size(), 30u);
  for (const auto& r : records) {
    EXPECT_GE(r.mean_gate, 0.4);
    EXPECT_LE(r.mean_gate, 0.6);
    EXPECT_EQ(r.layer, 2u);
  }
}

TEST(GateTrace, ZeroGateWeightsGiveExactlyHalf) {
  Model model = Model::init(gate_model(GateBN::none), 3);
  for (auto& layer : model.layers) {
    auto& p = std::get<MGRUParams>(layer);
    p.w_z.fill(0);
    p.u_z.fill(0);
    p.b_z.fill(0);
  }
  Rng rng(2);
  for (const auto& r : trace_gate(model, random_tensor({10, 4, 8}, rng), 1)) EXPECT_EQ(r.mean_gate, 0.5);
}

TEST(GateTrace, LayerOutOfRange) {
  const Model model = Model::init(gate_model(GateBN::none), 3);
  EXPECT_THROW(trace_gate(model, Tensor({3, 2, 8}), 0), std::out_of_range);
  EXPECT_THROW(trace_gate(model, Tensor({3, 2, 8}), 3), std::out_of_range);
}

TEST(GateTrace, TracingDoesNotTouchTheModel) {
  Model model = Model::init(gate_model(GateBN::input_and_hidden), 4);
  Rng rng(3);
  forward(model, random_tensor({5, 8, 8}, rng));
  std::ostringstream before, after;
  save_checkpoint(model, before);
  trace_gate(model, random_tensor({5, 8, 8}, rng), 1);
  save_checkpoint(model, after);
  EXPECT_EQ(before.str(), after.str());
  EXPECT_EQ(std::get<MGRUParams>(model.layers[0]).bn_gate_x->mode, BNMode::train);
}

TEST(GateTrace, CsvHasOneRowPerFrame) {
  const Model model = Model::init(gate_model(GateBN::none), 5);
  Rng rng(4);
  std::ostringstream os;
  write_trace_csv(os, trace_gate(model, random_tensor({7, 3, 8}, rng), 1));
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,layer,mean_gate");
  int rows = 0;
  while (std::getline(is, line)) {
    EXPECT_EQ(line.rfind(std::to_string(rows) + ",1,", 0), 0u) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 7);
}

TEST(GateTrace, TrainedUnnormalizedGatesMostlyAboveHalf) {
  TaskSpec task;
  task.kind = TaskKind::slow_signal;
  task.window = 16;
  const Dataset ds = gen_task(task);
  const DataSplit split = split_dataset(ds, 0.2);
  const Batch held_out = make_batch(ds, split.eval);
  for (GateBN gate : {GateBN::none, GateBN::input_only}) {
    Model model = Model::init(gate_model(gate), 1);
    train(model, ds, TrainConfig{});
    const auto records = trace_gate(model, held_out.inputs, 2);
    const auto above = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.mean_gate > 0.5; });
    EXPECT_GE(static_cast<double>(above) / static_cast<double>(records.size()), 0.8) << to_string(gate);
  }
}
