// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mgru/cells.hpp"
#include "mgru/context.hpp"
#include "mgru/network.hpp"

namespace mgru {

/// A tensor to perturb together with its analytic gradient.
struct GradProbe {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* analytic = nullptr;
};

struct GradCheckOptions {
  Real step = Real(1e-5);
  Real tolerance = Real(1e-4);
  std::size_t max_coordinates = 10000;  // random subsample above this many
  std::uint64_t seed = 0;
  Real denominator_floor = Real(1e-6);  // |a - n| / max(|a|, |n|, floor)
  bool corrupt_analytic = false;        // detector sanity hook
};

struct GradCheckReport {
  std::string label;
  Real max_rel_error = 0;
  std::string worst_name;
  std::size_t worst_index = 0;
  Real worst_analytic = 0;
  Real worst_numeric = 0;
  std::size_t coordinates = 0;
  Real tolerance = 0;
  bool passed = true;
};

inline Real relative_error(Real analytic, Real numeric, Real floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckReport grad_check(std::span<const GradProbe> probes, const std::function<Real()>& loss,
                                  const GradCheckOptions& opts = {}) {
  struct Coord {
    std::size_t probe, index;
  };
  std::vector<Coord> coords;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    if (probes[p].value->shape() != probes[p].analytic->shape()) {
      throw DimensionError("grad_check: analytic gradient for '" + probes[p].name + "' has the wrong shape");
    }
    for (std::size_t i = 0; i < probes[p].value->size(); ++i) coords.push_back({p, i});
  }
  if (coords.size() > opts.max_coordinates) {
    Rng rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.max_coordinates);
  }

  GradCheckReport report;
  report.tolerance = opts.tolerance;
  report.coordinates = coords.size();
  bool first = true;
  for (const auto& [p, i] : coords) {
    Tensor& value = *probes[p].value;
    const Real saved = value[i];
    value[i] = saved + opts.step;
    const Real up = loss();
    value[i] = saved - opts.step;
    const Real down = loss();
    value[i] = saved;

    const Real numeric = (up - down) / (Real(2) * opts.step);
    Real analytic = (*probes[p].analytic)[i];
    if (opts.corrupt_analytic && first) analytic += Real(1e-2) * (Real(1) + std::abs(analytic));
    first = false;

    Real err = relative_error(analytic, numeric, opts.denominator_floor);
    if (!std::isfinite(err)) err = std::numeric_limits<Real>::infinity();
    if (report.worst_name.empty() || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_name = probes[p].name;
      report.worst_index = i;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

// ---------------------------------------------------------------------------
// Ready-made instances
// ---------------------------------------------------------------------------

/// One random cell step; the loss is sum(h * R) for a fixed random R.
struct CellCheckSpec {
  CellKind cell = CellKind::mgru;
  BNConfig bn;
  std::size_t batch = 4;
  std::size_t input_dim = 3;
  std::size_t cells = 5;
  std::size_t projection = 3;
  ContextSpec context{1, 1, 1, 2};  // mGRUIP-Ctx only
  std::size_t frames = 6;           // mGRUIP-Ctx only: length of the spliced source sequence
  std::uint64_t seed = 7;
};

inline std::string describe(const CellCheckSpec& s) {
  return std::string(to_string(s.cell)) + " gate=" + std::string(to_string(s.bn.gate)) +
         " cell=" + std::string(to_string(s.bn.cell));
}

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, Real scale = 1) {
  std::normal_distribution<Real> normal(0, scale);
  Tensor t(std::move(shape));
  for (Real& v : t.data()) v = normal(rng);
  return t;
}

template <class Params>
void add_param_probes(std::vector<GradProbe>& probes, Params& params, const Params& grads) {
  std::vector<std::pair<std::string, Tensor*>> values;
  std::vector<const Tensor*> analytic;
  Params::visit_trainable(params, [&](const std::string& n, Tensor& t) { values.emplace_back(n, &t); });
  Params::visit_trainable(grads, [&](const std::string&, const Tensor& t) { analytic.push_back(&t); });
  for (std::size_t i = 0; i < values.size(); ++i) probes.push_back({values[i].first, values[i].second, analytic[i]});
}

inline Real weighted_sum(const Tensor& h, const Tensor& r) { return sum(mul(h, r)); }

}  // namespace detail

inline GradCheckReport check_cell_gradients(const CellCheckSpec& spec, const GradCheckOptions& opts = {}) {
  Rng rng(spec.seed);
  const std::size_t B = spec.batch, N = spec.cells;
  Tensor h_prev = detail::random_tensor({B, N}, rng);
  Tensor weights = detail::random_tensor({B, N}, rng);
  std::vector<GradProbe> probes;
  GradCheckReport report;

  if (spec.cell == CellKind::mgru) {
    MGRUParams params = MGRUParams::init(spec.input_dim, N, spec.bn, rng);
    Tensor x = detail::random_tensor({B, spec.input_dim}, rng);
    auto step = mgru_step(x, h_prev, params, spec.bn);
    const MGRUGrads g = mgru_backward(weights, step.cache, params, spec.bn);
    detail::add_param_probes(probes, params, g.params);
    probes.push_back({"x", &x, &g.x});
    probes.push_back({"h_prev", &h_prev, &g.h_prev});
    report = grad_check(probes, [&] { return detail::weighted_sum(mgru_step(x, h_prev, params, spec.bn).h, weights); },
                        opts);
  } else if (spec.cell == CellKind::mgruip) {
    MGRUIPParams params = MGRUIPParams::init(spec.input_dim, N, spec.projection, spec.bn, rng);
    Tensor x = detail::random_tensor({B, spec.input_dim}, rng);
    auto step = mgruip_step(x, h_prev, params, spec.bn);
    const MGRUIPGrads g = mgruip_backward(weights, step.cache, params, spec.bn);
    detail::add_param_probes(probes, params, g.params);
    probes.push_back({"x", &x, &g.x});
    probes.push_back({"h_prev", &h_prev, &g.h_prev});
    report = grad_check(
        probes, [&] { return detail::weighted_sum(mgruip_step(x, h_prev, params, spec.bn).h, weights); }, opts);
  } else {
    // The step consumes frame t of a spliced sequence; the check runs through the splice.
    const std::size_t T = spec.frames, t = T / 2;
    Tensor below = detail::random_tensor({T, B, spec.input_dim}, rng);
    const std::size_t width = spliced_width(spec.input_dim, spec.input_dim, spec.context);
    MGRUIPParams params = MGRUIPParams::init(width, N, spec.projection, spec.bn, rng);
    auto run = [&] { return mgruip_ctx_step(splice(below, below, spec.context).frame(t), h_prev, params, spec.bn); };
    auto step = run();
    const MGRUIPGrads g = mgruip_ctx_backward(weights, step.cache, params, spec.bn);
    Tensor grad_spliced({T, B, width});
    grad_spliced.set_frame(t, g.x);
    Tensor grad_below = Tensor::zeros_like(below);
    Tensor grad_current = Tensor::zeros_like(below);
    splice_backward(grad_spliced, spec.context, grad_below, grad_current);
    add_inplace(grad_below, grad_current);
    detail::add_param_probes(probes, params, g.params);
    probes.push_back({"h_below", &below, &grad_below});
    probes.push_back({"h_prev", &h_prev, &g.h_prev});
    report = grad_check(probes, [&] { return detail::weighted_sum(run().h, weights); }, opts);
  }
  report.label = describe(spec);
  return report;
}

/// Whole stack plus softmax head on a random sequence with random labels.
inline GradCheckReport check_model_gradients(const ModelConfig& cfg, std::size_t frames, std::size_t batch,
                                             std::uint64_t seed, const GradCheckOptions& opts = {}) {
  Model model = Model::init(cfg, seed);
  Rng rng(seed + 1);
  Tensor inputs = detail::random_tensor({frames, batch, cfg.input_dim}, rng);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(cfg.output_dim) - 1);
  std::vector<int> labels(frames * batch);
  for (int& y : labels) y = pick(rng);

  const ForwardResult fwd = forward(model, inputs);
  const LossResult loss = cross_entropy(fwd.probs, labels);
  ModelGrads grads = backward(model, fwd.cache, loss.grad_logits);

  std::vector<GradProbe> probes;
  std::vector<std::pair<std::string, Tensor*>> values;
  model.for_each_trainable([&](const std::string& n, Tensor& t) { values.emplace_back(n, &t); });
  const std::vector<Tensor*> analytic = trainable_tensors(grads.params);
  for (std::size_t i = 0; i < values.size(); ++i) probes.push_back({values[i].first, values[i].second, analytic[i]});
  probes.push_back({"inputs", &inputs, &grads.inputs});

  GradCheckReport report =
      grad_check(probes, [&] { return cross_entropy(forward(model, inputs).probs, labels).loss; }, opts);
  report.label = "model " + std::string(to_string(cfg.cell)) + " gate=" + std::string(to_string(cfg.bn.gate)) +
                 " cell=" + std::string(to_string(cfg.bn.cell)) +
                 (cfg.context.layers.empty() ? "" : " plan=" + cfg.context.to_string());
  return report;
}

/// Tiny stacked model used by the sweep: L=2, N=4, P=3, plan {1x1; 1x2}.
inline ModelConfig tiny_model_config(CellKind cell, const BNConfig& bn) {
  ModelConfig cfg;
  cfg.cell = cell;
  cfg.layers = 2;
  cfg.cells = 4;
  cfg.projection = cell == CellKind::mgru ? 0 : 3;
  cfg.input_dim = 3;
  cfg.output_dim = 3;
  cfg.bn = bn;
  if (cell == CellKind::mgruip_ctx) cfg.context.layers = {ContextSpec{1, 1, 1, 2}};
  return cfg;
}

}  // namespace mgru
