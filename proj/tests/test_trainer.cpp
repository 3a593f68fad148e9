// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <limits>
#include <numeric>

#include "mgru/trainer.hpp"

using namespace mgru;

namespace {

TaskSpec lookahead_task() {
  TaskSpec spec;
  spec.frames = 40;
  spec.dim = 8;
  spec.classes = 4;
  spec.lookahead = 2;
  spec.sequences = 200;
  return spec;
}

ModelConfig lookahead_model(bool with_future) {
  ModelConfig cfg;
  cfg.cell = with_future ? CellKind::mgruip_ctx : CellKind::mgruip;
  cfg.layers = 3;
  cfg.cells = 32;
  cfg.projection = 16;
  cfg.input_dim = 8;
  cfg.output_dim = 4;
  if (with_future) cfg.context = parse_context_plan("{0;1x1} {0;1x1}");
  return cfg;
}

ModelConfig small_model() {
  ModelConfig cfg = lookahead_model(true);
  cfg.cells = 6;
  cfg.projection = 4;
  return cfg;
}

TaskSpec small_task() {
  TaskSpec spec = lookahead_task();
  spec.frames = 12;
  spec.sequences = 24;
  return spec;
}

}  // namespace

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  Model model = Model::init(small_model(), 3);
  const Model before = model;
  TrainConfig cfg;
  cfg.learning_rate = 0;
  cfg.epochs = 1;
  train(model, gen_task(small_task()), cfg);
  const auto a = trainable_tensors(before);
  const auto b = trainable_tensors(static_cast<const Model&>(model));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
}

TEST(Trainer, IdenticalSeedsGiveIdenticalRuns) {
  const Dataset ds = gen_task(small_task());
  TrainConfig cfg;
  cfg.epochs = 3;
  Model a = Model::init(small_model(), 5), b = Model::init(small_model(), 5);
  const auto ha = train(a, ds, cfg), hb = train(b, ds, cfg);
  ASSERT_EQ(ha.size(), 6u);
  for (std::size_t i = 0; i < ha.size(); ++i) {
    EXPECT_EQ(ha[i].loss, hb[i].loss);
    EXPECT_EQ(ha[i].accuracy, hb[i].accuracy);
    EXPECT_EQ(ha[i].split, hb[i].split);
  }
  const auto pa = trainable_tensors(static_cast<const Model&>(a));
  const auto pb = trainable_tensors(static_cast<const Model&>(b));
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
}

TEST(Trainer, TrainingLowersTheLoss) {
  Model model = Model::init(small_model(), 6);
  TrainConfig cfg;
  cfg.epochs = 8;
  const auto history = train(model, gen_task(small_task()), cfg);
  EXPECT_LT(history[history.size() - 2].loss, history[0].loss);
}

TEST(Trainer, ConfigurationErrors) {
  TrainConfig cfg;
  cfg.batch_size = 1;
  try {
    cfg.validate();
    FAIL() << "batch size 1 accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("batch normalization"), std::string::npos);
  }
  Model model = Model::init(small_model(), 1);
  TaskSpec wrong = small_task();
  wrong.dim = 5;
  EXPECT_THROW(train(model, gen_task(wrong), TrainConfig{}), DimensionError);
}

TEST(Trainer, NonFiniteLossIsReportedWithTheTensor) {
  Model model = Model::init(small_model(), 1);
  model.w_out[0] = std::numeric_limits<Real>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(model, gen_task(small_task()), cfg);
    FAIL() << "NaN weights trained without error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("logits"), std::string::npos) << e.what();
  }
}

TEST(Trainer, BatchChunksNeverLeaveASingleton) {
  std::vector<std::size_t> order(17);
  std::iota(order.begin(), order.end(), 0);
  const auto chunks = detail::chunk(order, 8);
  ASSERT_EQ(chunks.size(), 2u);
  EXPECT_EQ(chunks[1].size(), 9u);
}

TEST(Trainer, FutureContextSolvesLookaheadAndNoContextCannot) {
  const Dataset ds = gen_task(lookahead_task());
  TrainConfig cfg;
  cfg.epochs = 30;

  Model ctx = Model::init(lookahead_model(true), 1);
  const auto h_ctx = train(ctx, ds, cfg);
  EXPECT_GE(h_ctx.back().accuracy, 0.9);
  EXPECT_EQ(h_ctx.back().split, "eval");

  Model plain = Model::init(lookahead_model(false), 1);
  const auto h_plain = train(plain, ds, cfg);
  EXPECT_LE(h_plain.back().accuracy, 0.35);
}
