// SPDX-License-Identifier: Apache-2.0
#pragma once

// Subcommand implementations. Each returns a process exit code:
// 0 success, 1 validation / parse / usage error, 2 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgru/checkpoint.hpp"
#include "mgru/gate_trace.hpp"
#include "mgru/grad_check.hpp"
#include "mgru/trainer.hpp"
#include "run_config.hpp"

namespace mgru::cli {

enum ExitCode : int { kOk = 0, kInvalid = 1, kNumeric = 2 };

namespace detail {

inline nlohmann::ordered_json metric_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"split", m.split}, {"loss", m.loss}, {"accuracy", m.accuracy}};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << text;
}

/// Held-out sequences of the task, or all of them when nothing is held out.
inline std::vector<std::size_t> eval_indices(const Dataset& ds, Real eval_fraction) {
  DataSplit split = split_dataset(ds, eval_fraction);
  return split.eval.empty() ? split.train : split.eval;
}

inline void check_widths(const Model& model, const TaskSpec& task) {
  if (model.config.input_dim != task.dim || model.config.output_dim != task.classes) {
    throw DimensionError("checkpoint expects input_dim " + std::to_string(model.config.input_dim) + " and " +
                         std::to_string(model.config.output_dim) + " classes, task has dim " +
                         std::to_string(task.dim) + " and " + std::to_string(task.classes) + " classes");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string output_dir;  // overrides the config when set
};

inline int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_run_config(args.config);
    if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  }

  namespace fs = std::filesystem;
  const fs::path dir = cfg.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    err << "error: cannot create output directory '" << dir.string() << "': " << ec.message() << '\n';
    return kInvalid;
  }

  const Dataset ds = gen_task(cfg.task);
  Model model = Model::init(cfg.model, cfg.train.seed);
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  std::vector<EpochMetrics> history;
  try {
    history = train(model, ds, cfg.train, [&](const EpochMetrics& m) {
      metrics << detail::metric_json(m).dump() << '\n';
      out << "epoch " << m.epoch << ' ' << m.split << " loss " << m.loss << " accuracy " << m.accuracy << '\n';
    });
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  }
  metrics.close();
  save_checkpoint(model, (dir / "model.ckpt").string());

  nlohmann::json final_metrics = nlohmann::json::object();
  for (const auto& m : history) final_metrics[m.split] = {{"epoch", m.epoch}, {"loss", m.loss}, {"accuracy", m.accuracy}};
  const nlohmann::json manifest = {
      {"config_sha256", config_hash(cfg)},
      {"data_seed", cfg.task.seed},
      {"init_seed", cfg.train.seed},
      {"parameters", model.parameter_count()},
      {"final_metrics", final_metrics},
      {"config", run_config_to_json(cfg)},
  };
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << (dir / "model.ckpt").string() << ", metrics.jsonl, manifest.json\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string config;
};

inline int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = load_run_config(args.config);
    const Model model = load_checkpoint(args.checkpoint);
    detail::check_widths(model, cfg.task);
    const Dataset ds = gen_task(cfg.task);
    const DataSplit split = split_dataset(ds, cfg.train.eval_fraction);
    for (const auto* part : {&split.train, &split.eval}) {
      if (part->empty()) continue;
      EpochMetrics m = evaluate(model, ds, *part);
      m.split = part == &split.train ? "train" : "eval";
      if (!std::isfinite(m.loss)) {
        err << "numeric failure: non-finite " << m.split << " loss\n";
        return kNumeric;
      }
      nlohmann::ordered_json j = detail::metric_json(m);
      j.erase("epoch");
      out << j.dump() << '\n';
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// latency
// ---------------------------------------------------------------------------

struct LatencyArgs {
  std::vector<std::string> plans;  // one string per model, per-layer settings separated by spaces
  Real base_ms = 70;
  Real frame_ms = 10;
};

inline int cmd_latency(const LatencyArgs& args, std::ostream& out, std::ostream& err) {
  if (!(args.base_ms >= 0) || !(args.frame_ms > 0)) {
    err << "error: --base must be >= 0 and --frame > 0\n";
    return kInvalid;
  }
  std::vector<std::string> plans = args.plans;
  if (plans.empty()) plans.emplace_back();
  std::vector<LayerContextPlan> parsed;
  for (const auto& text : plans) {
    try {
      parsed.push_back(parse_context_plan(text));
    } catch (const ParseError& e) {
      err << "error: plan \"" << text << "\": " << e.what() << '\n';
      return kInvalid;
    }
  }
  const LatencyModel lat{args.base_ms, args.frame_ms};
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    const LayerContextPlan& plan = parsed[i];
    out << "plan " << i + 1 << ": " << (plan.layers.empty() ? "(no context)" : plan.to_string()) << '\n';
    for (std::size_t k = 0; k < plan.layers.size(); ++k) {
      out << "  layer " << k + 2 << "  " << plan.layers[k].to_string() << "  future reach "
          << plan.layers[k].future_reach() << '\n';
    }
    out << "  total future frames: " << future_reach_frames(plan) << '\n';
    out << "  latency: " << model_latency_ms(plan, lat) << " ms\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// trace-gate
// ---------------------------------------------------------------------------

struct TraceArgs {
  std::string checkpoint;
  std::string config;
  std::size_t layer = 0;
  std::string output;  // CSV path; stdout when empty
};

inline int cmd_trace_gate(const TraceArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = load_run_config(args.config);
    const Model model = load_checkpoint(args.checkpoint);
    detail::check_widths(model, cfg.task);
    if (args.layer < 1 || args.layer > model.config.layers) {
      throw std::out_of_range("--layer " + std::to_string(args.layer) + " outside 1.." +
                              std::to_string(model.config.layers));
    }
    const Dataset ds = gen_task(cfg.task);
    const Batch batch = make_batch(ds, detail::eval_indices(ds, cfg.train.eval_fraction));
    const auto records = trace_gate(model, batch.inputs, args.layer);
    if (args.output.empty()) {
      write_trace_csv(out, records);
    } else {
      std::ofstream os(args.output, std::ios::trunc);
      if (!os) throw std::runtime_error("cannot write '" + args.output + "'");
      write_trace_csv(os, records);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradCheckArgs {
  std::string cell = "all";
  std::string bn_gate = "all";
  std::string bn_cell = "all";
  bool full_model = false;
  bool corrupt_gradient = false;
  Real step = Real(1e-5);
  Real tolerance = Real(1e-4);
};

inline int cmd_gradcheck(const GradCheckArgs& args, std::ostream& out, std::ostream& err) {
  std::vector<CellKind> cells;
  std::vector<GateBN> gates;
  std::vector<CellBN> cell_bns;
  if (args.cell == "all") {
    cells = {CellKind::mgru, CellKind::mgruip, CellKind::mgruip_ctx};
  } else if (auto k = parse_cell_kind(args.cell)) {
    cells = {*k};
  } else {
    err << "error: --cell must be mgru, mgruip, mgruip-ctx or all\n";
    return kInvalid;
  }
  if (args.bn_gate == "all") {
    gates = {GateBN::none, GateBN::input_only, GateBN::input_and_hidden};
  } else if (auto g = parse_gate_bn(args.bn_gate)) {
    gates = {*g};
  } else {
    err << "error: --bn-gate must be none, itoh, both or all\n";
    return kInvalid;
  }
  if (args.bn_cell == "all") {
    cell_bns = {CellBN::input_only, CellBN::input_and_hidden};
  } else if (auto c = parse_cell_bn(args.bn_cell)) {
    cell_bns = {*c};
  } else {
    err << "error: --bn-cell must be itoh, both or all\n";
    return kInvalid;
  }

  GradCheckOptions opts;
  opts.step = args.step;
  opts.tolerance = args.tolerance;
  opts.corrupt_analytic = args.corrupt_gradient;

  GradCheckReport worst;
  bool all_passed = true;
  auto report = [&](const GradCheckReport& r) {
    out << (r.passed ? "ok   " : "FAIL ") << r.label << "  max rel err " << std::setprecision(3) << r.max_rel_error
        << " (" << r.coordinates << " coords)\n";
    all_passed = all_passed && r.passed;
    if (worst.worst_name.empty() || r.max_rel_error > worst.max_rel_error) worst = r;
  };
  for (CellKind cell : cells)
    for (GateBN gate : gates)
      for (CellBN cbn : cell_bns) {
        CellCheckSpec spec;
        spec.cell = cell;
        spec.bn = {gate, cbn};
        report(check_cell_gradients(spec, opts));
        if (args.full_model) report(check_model_gradients(tiny_model_config(cell, spec.bn), 6, 3, 1, opts));
      }

  out << "worst: " << worst.label << "  " << worst.worst_name << '[' << worst.worst_index << "]  analytic "
      << std::setprecision(10) << worst.worst_analytic << "  numeric " << worst.worst_numeric << "  rel err "
      << std::setprecision(3) << worst.max_rel_error << "  tolerance " << worst.tolerance << '\n';
  if (!all_passed) {
    err << "gradient check failed\n";
    return kNumeric;
  }
  return kOk;
}

}  // namespace mgru::cli
