// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace mgru::cli;

  CLI::App app{"mgru: gated recurrent models with batch-norm placement and temporal context"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model from a YAML run configuration");
  train->add_option("config", train_args.config, "run configuration file")->required()->check(CLI::ExistingFile);
  train->add_option("--output-dir", train_args.output_dir, "override output_dir from the configuration");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the task of a run configuration");
  eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
  eval->add_option("--config", eval_args.config, "run configuration file")->required();

  LatencyArgs latency_args;
  auto* latency = app.add_subcommand("latency", "latency of layerwise context plans");
  latency->add_option("plans", latency_args.plans,
                      "one quoted plan per model, e.g. \"{0;1x1} {0;1x3}\" for layers 2 and 3");
  latency->add_option("--base", latency_args.base_ms, "base latency in ms")->capture_default_str();
  latency->add_option("--frame", latency_args.frame_ms, "duration of one frame in ms")->capture_default_str();

  TraceArgs trace_args;
  auto* trace = app.add_subcommand("trace-gate", "per-frame mean update gate of one layer as CSV");
  trace->add_option("--checkpoint", trace_args.checkpoint, "model checkpoint")->required();
  trace->add_option("--config", trace_args.config, "run configuration providing the task")->required();
  trace->add_option("--layer", trace_args.layer, "1-based layer index")->required();
  trace->add_option("--output", trace_args.output, "CSV file (default: stdout)");

  GradCheckArgs gc_args;
  auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs central-difference gradients");
  gradcheck->add_option("--cell", gc_args.cell, "mgru | mgruip | mgruip-ctx | all")->capture_default_str();
  gradcheck->add_option("--bn-gate", gc_args.bn_gate, "none | itoh | both | all")->capture_default_str();
  gradcheck->add_option("--bn-cell", gc_args.bn_cell, "itoh | both | all")->capture_default_str();
  gradcheck->add_flag("--full-model", gc_args.full_model, "also check a tiny stacked model per combination");
  gradcheck->add_option("--step", gc_args.step, "difference step")->capture_default_str();
  gradcheck->add_option("--tolerance", gc_args.tolerance, "max relative error")->capture_default_str();
  gradcheck->add_flag("--corrupt-gradient", gc_args.corrupt_gradient)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInvalid;
  }

  if (*train) return cmd_train(train_args, std::cout, std::cerr);
  if (*eval) return cmd_eval(eval_args, std::cout, std::cerr);
  if (*latency) return cmd_latency(latency_args, std::cout, std::cerr);
  if (*trace) return cmd_trace_gate(trace_args, std::cout, std::cerr);
  if (*gradcheck) return cmd_gradcheck(gc_args, std::cout, std::cerr);
  return kInvalid;
}
