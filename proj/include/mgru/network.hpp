// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "mgru/cells.hpp"
#include "mgru/context.hpp"
#include "mgru/errors.hpp"
#include "mgru/tensor.hpp"

namespace mgru {

enum class CellKind { mgru, mgruip, mgruip_ctx };

inline std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::mgru: return "mgru";
    case CellKind::mgruip: return "mgruip";
    case CellKind::mgruip_ctx: return "mgruip-ctx";
  }
  return "?";
}

inline std::optional<CellKind> parse_cell_kind(std::string_view s) {
  if (s == "mgru") return CellKind::mgru;
  if (s == "mgruip") return CellKind::mgruip;
  if (s == "mgruip-ctx") return CellKind::mgruip_ctx;
  return std::nullopt;
}

struct ModelConfig {
  CellKind cell = CellKind::mgruip_ctx;
  std::size_t layers = 1;
  std::size_t cells = 0;
  std::size_t projection = 0;  // must stay 0 for mGRU
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  BNConfig bn;
  LayerContextPlan context;  // only for mGRUIP-Ctx

  /// Width of the vector entering 1-based layer `l` (after splicing).
  std::size_t layer_input_dim(std::size_t l) const {
    if (l == 1) return input_dim;
    return spliced_width(cells, cells, context.for_layer(l));
  }

  void validate() const {
    if (layers < 1) throw std::invalid_argument("model needs at least one layer");
    if (cells == 0) throw std::invalid_argument("model needs cells > 0");
    if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("model needs input_dim and output_dim > 0");
    if (cell == CellKind::mgru && projection != 0) {
      throw std::invalid_argument("mgru has no input projection; projection must be 0");
    }
    if (cell != CellKind::mgru) {
      if (projection == 0) throw std::invalid_argument(std::string(to_string(cell)) + " needs projection > 0");
      for (std::size_t l = 1; l <= layers; ++l) {
        if (projection >= layer_input_dim(l) + cells) {
          throw std::invalid_argument("projection " + std::to_string(projection) + " is not a bottleneck for layer " +
                                      std::to_string(l));
        }
      }
    }
    if (cell != CellKind::mgruip_ctx && !context.layers.empty()) {
      throw std::invalid_argument("context plan is only valid for mgruip-ctx");
    }
    if (context.layers.size() > layers - 1) {
      throw std::invalid_argument("context plan has " + std::to_string(context.layers.size()) +
                                  " entries but only layers 2.." + std::to_string(layers) + " can splice");
    }
  }
};

using LayerParams = std::variant<MGRUParams, MGRUIPParams>;
using StepCache = std::variant<MGRUCache, MGRUIPCache>;

struct Model {
  ModelConfig config;
  std::vector<LayerParams> layers;
  Tensor w_out;  // N x C
  Tensor b_out;  // C

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Model m;
    m.config = cfg;
    for (std::size_t l = 1; l <= cfg.layers; ++l) {
      const std::size_t in = cfg.layer_input_dim(l);
      if (cfg.cell == CellKind::mgru) {
        m.layers.emplace_back(MGRUParams::init(in, cfg.cells, cfg.bn, rng));
      } else {
        m.layers.emplace_back(MGRUIPParams::init(in, cfg.cells, cfg.projection, cfg.bn, rng));
      }
    }
    m.w_out = glorot_uniform(cfg.cells, cfg.output_dim, rng);
    m.b_out = Tensor({cfg.output_dim});
    return m;
  }

  /// Visits every trainable tensor as ("layer<l>.<name>", tensor).
  template <class Self, class F>
  static void visit_trainable(Self& self, F&& f) {
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      const std::string prefix = "layer" + std::to_string(i + 1) + ".";
      std::visit(
          [&](auto& layer) {
            std::decay_t<decltype(layer)>::visit_trainable(layer, [&](const std::string& n, auto& t) { f(prefix + n, t); });
          },
          self.layers[i]);
    }
    f(std::string("output.w"), self.w_out);
    f(std::string("output.b"), self.b_out);
  }

  /// Visits BN running statistics.
  template <class Self, class F>
  static void visit_buffers(Self& self, F&& f) {
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      const std::string prefix = "layer" + std::to_string(i + 1) + ".";
      std::visit(
          [&](auto& layer) {
            std::decay_t<decltype(layer)>::visit_buffers(layer, [&](const std::string& n, auto& t) { f(prefix + n, t); });
          },
          self.layers[i]);
    }
  }

  template <class F>
  void for_each_trainable(F&& f) { visit_trainable(*this, f); }
  template <class F>
  void for_each_trainable(F&& f) const { visit_trainable(*this, f); }

  void set_bn_mode(BNMode mode) {
    for (auto& layer : layers) std::visit([mode](auto& p) { p.set_bn_mode(mode); }, layer);
  }

  Model zeros_like() const {
    Model g;
    g.config = config;
    for (const auto& layer : layers) {
      std::visit([&](const auto& p) { g.layers.emplace_back(p.zeros_like()); }, layer);
    }
    g.w_out = Tensor::zeros_like(w_out);
    g.b_out = Tensor::zeros_like(b_out);
    return g;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_trainable([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }
};

/// Pointers to the trainable tensors of `m`, in visiting order.
inline std::vector<Tensor*> trainable_tensors(Model& m) {
  std::vector<Tensor*> out;
  m.for_each_trainable([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

inline std::vector<const Tensor*> trainable_tensors(const Model& m) {
  std::vector<const Tensor*> out;
  m.for_each_trainable([&](const std::string&, const Tensor& t) { out.push_back(&t); });
  return out;
}

struct LayerTrace {
  ContextSpec context;
  Tensor input;   // T x B x D_l, spliced when the layer has context
  Tensor output;  // T x B x N
  std::vector<StepCache> steps;
};

struct ForwardCache {
  Tensor inputs;
  std::vector<LayerTrace> layers;
};

struct ForwardResult {
  Tensor logits;  // T x B x C
  Tensor probs;   // T x B x C, rows sum to 1
  ForwardCache cache;
};

struct ModelGrads {
  Model params;
  Tensor inputs;
};

namespace detail {

inline void accumulate_layer(LayerParams& acc, const LayerParams& g) {
  std::vector<Tensor*> dst;
  std::vector<const Tensor*> src;
  std::visit(
      [&](auto& p) { std::decay_t<decltype(p)>::visit_trainable(p, [&](const std::string&, Tensor& t) { dst.push_back(&t); }); },
      acc);
  std::visit(
      [&](const auto& p) {
        std::decay_t<decltype(p)>::visit_trainable(p, [&](const std::string&, const Tensor& t) { src.push_back(&t); });
      },
      g);
  for (std::size_t i = 0; i < dst.size(); ++i) add_inplace(*dst[i], *src[i]);
}

}  // namespace detail

/// Runs the stack layer by layer over the whole sequence (future splicing needs
/// every frame of the layer below), then an affine + softmax head per frame.
inline ForwardResult forward(Model& model, const Tensor& inputs, const StepOptions& opts = {}) {
  const ModelConfig& cfg = model.config;
  if (inputs.rank() != 3) throw DimensionError("forward expects inputs of shape T x B x D");
  if (inputs.dim(0) < 1) throw DimensionError("forward needs at least one frame");
  if (inputs.dim(2) != cfg.input_dim) {
    throw DimensionError("forward: input width " + std::to_string(inputs.dim(2)) + " but model expects " +
                         std::to_string(cfg.input_dim));
  }
  const std::size_t frames = inputs.dim(0), batch = inputs.dim(1);

  ForwardResult result;
  result.cache.inputs = inputs;
  const Tensor* below = &inputs;

  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    LayerTrace trace;
    trace.context = cfg.context.for_layer(l);
    trace.input = trace.context.empty() ? *below : splice(*below, *below, trace.context);
    trace.output = Tensor({frames, batch, cfg.cells});
    trace.steps.reserve(frames);

    Tensor h({batch, cfg.cells});
    for (std::size_t t = 0; t < frames; ++t) {
      const Tensor x_t = trace.input.frame(t);
      std::visit(
          [&](auto& params) {
            using P = std::decay_t<decltype(params)>;
            if constexpr (std::is_same_v<P, MGRUParams>) {
              auto step = mgru_step(x_t, h, params, cfg.bn, opts);
              h = std::move(step.h);
              trace.steps.emplace_back(std::move(step.cache));
            } else {
              auto step = mgruip_ctx_step(x_t, h, params, cfg.bn, opts);
              h = std::move(step.h);
              trace.steps.emplace_back(std::move(step.cache));
            }
          },
          model.layers[l - 1]);
      trace.output.set_frame(t, h);
    }
    result.cache.layers.push_back(std::move(trace));
    below = &result.cache.layers.back().output;
  }

  result.logits = Tensor({frames, batch, cfg.output_dim});
  result.probs = Tensor({frames, batch, cfg.output_dim});
  for (std::size_t t = 0; t < frames; ++t) {
    const Tensor logits = add_row_vector(matmul(below->frame(t), model.w_out), model.b_out);
    result.logits.set_frame(t, logits);
    result.probs.set_frame(t, softmax_rows(logits));
  }
  return result;
}

/// Backpropagation through time for every layer, given dLoss/dlogits.
inline ModelGrads backward(const Model& model, const ForwardCache& cache, const Tensor& grad_logits) {
  const ModelConfig& cfg = model.config;
  if (cache.layers.size() != cfg.layers || cache.inputs.rank() != 3) {
    throw ContractViolation("backward: forward cache does not belong to this model");
  }
  const std::size_t frames = cache.inputs.dim(0), batch = cache.inputs.dim(1);
  if (grad_logits.shape() != Shape{frames, batch, cfg.output_dim}) {
    throw ContractViolation("backward: upstream gradient shape " + shape_str(grad_logits.shape()) +
                            " does not match the forward pass");
  }

  ModelGrads grads{model.zeros_like(), Tensor()};
  const Tensor& top = cache.layers.back().output;
  Tensor grad_h({frames, batch, cfg.cells});
  for (std::size_t t = 0; t < frames; ++t) {
    const Tensor g = grad_logits.frame(t);
    const Tensor h = top.frame(t);
    add_inplace(grads.params.w_out, matmul_tn(h, g));
    add_inplace(grads.params.b_out, column_sums(g));
    grad_h.set_frame(t, matmul_nt(g, model.w_out));
  }

  for (std::size_t l = cfg.layers; l >= 1; --l) {
    const LayerTrace& trace = cache.layers[l - 1];
    if (trace.steps.size() != frames) throw ContractViolation("backward: truncated layer cache");
    Tensor grad_input = Tensor::zeros_like(trace.input);
    Tensor carry({batch, cfg.cells});

    for (std::size_t t = frames; t-- > 0;) {
      Tensor g = grad_h.frame(t);
      add_inplace(g, carry);
      std::visit(
          [&](const auto& params) {
            using P = std::decay_t<decltype(params)>;
            if constexpr (std::is_same_v<P, MGRUParams>) {
              auto sg = mgru_backward(g, std::get<MGRUCache>(trace.steps[t]), params, cfg.bn);
              detail::accumulate_layer(grads.params.layers[l - 1], LayerParams(std::move(sg.params)));
              grad_input.set_frame(t, sg.x);
              carry = std::move(sg.h_prev);
            } else {
              auto sg = mgruip_ctx_backward(g, std::get<MGRUIPCache>(trace.steps[t]), params, cfg.bn);
              detail::accumulate_layer(grads.params.layers[l - 1], LayerParams(std::move(sg.params)));
              grad_input.set_frame(t, sg.x);
              carry = std::move(sg.h_prev);
            }
          },
          model.layers[l - 1]);
    }

    const Tensor& source = (l == 1) ? cache.inputs : cache.layers[l - 2].output;
    if (trace.context.empty()) {
      grad_h = std::move(grad_input);
    } else {
      // Both splice operands are the layer below, so their gradients add up.
      Tensor grad_below = Tensor::zeros_like(source);
      Tensor grad_current = Tensor::zeros_like(source);
      splice_backward(grad_input, trace.context, grad_below, grad_current);
      add_inplace(grad_below, grad_current);
      grad_h = std::move(grad_below);
    }
    if (l == 1) break;
  }
  grads.inputs = std::move(grad_h);
  return grads;
}

struct LossResult {
  Real loss = 0;            // mean cross-entropy over all frames
  Tensor grad_logits;       // dLoss/dlogits
  std::size_t correct = 0;  // argmax hits
  std::size_t frames = 0;
};

/// Frame-level cross-entropy; labels are indexed t * B + b.
inline LossResult cross_entropy(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 3) throw DimensionError("cross_entropy expects T x B x C probabilities");
  const std::size_t frames = probs.dim(0), batch = probs.dim(1), classes = probs.dim(2);
  if (labels.size() != frames * batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(frames * batch) + " frames");
  }
  LossResult r;
  r.grad_logits = probs;
  r.frames = frames * batch;
  const Real inv = Real(1) / static_cast<Real>(r.frames);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      const int label = labels[t * batch + b];
      if (label < 0 || static_cast<std::size_t>(label) >= classes) throw DimensionError("label out of range");
      const std::size_t y = static_cast<std::size_t>(label);
      r.loss -= std::log(std::max(probs.at(t, b, y), std::numeric_limits<Real>::min())) * inv;
      std::size_t best = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        if (probs.at(t, b, c) > probs.at(t, b, best)) best = c;
        r.grad_logits.at(t, b, c) = (probs.at(t, b, c) - (c == y ? Real(1) : Real(0))) * inv;
      }
      if (best == y) ++r.correct;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Latency and receptive field
// ---------------------------------------------------------------------------

/// Latency = base + frame duration * total future reach of the plan.
struct LatencyModel {
  Real base_latency_ms = 70;
  Real frame_ms = 10;
};

inline std::size_t future_reach_frames(const LayerContextPlan& plan) {
  std::size_t frames = 0;
  for (const auto& spec : plan.layers) frames += spec.future_reach();
  return frames;
}

inline Real model_latency_ms(const LayerContextPlan& plan, const LatencyModel& lat = {}) {
  return lat.base_latency_ms + lat.frame_ms * static_cast<Real>(future_reach_frames(plan));
}

struct ReceptiveField {
  std::size_t past_frames = 0;  // reach through splicing alone
  bool unbounded_past = true;   // the recurrence sees every earlier frame
  std::size_t future_frames = 0;
};

inline ReceptiveField receptive_field(const LayerContextPlan& plan) {
  ReceptiveField rf;
  for (const auto& spec : plan.layers) rf.past_frames += spec.history_reach();
  rf.future_frames = future_reach_frames(plan);
  return rf;
}

}  // namespace mgru
