// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal gated recurrent cells.
//
//   mGRU:    z   = sigmoid(x W_z + h_prev U_z + b_z)
//            c   = relu(BN(x W_h) + BN(h_prev U_h))
//            h   = z * h_prev + (1 - z) * c
//
//   mGRUIP:  v   = x W_v1 + h_prev W_v2            (projection bottleneck, width P)
//            z   = sigmoid(v W_z + b_z)
//            c   = relu(BN(v W_h))
//            h   = z * h_prev + (1 - z) * c
//
// The normalization sites on the gate and candidate paths are switched by
// BNConfig. Whenever BN covers the input path of the gate, b_z is dropped
// since beta already provides the shift.

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "mgru/batch_norm.hpp"
#include "mgru/errors.hpp"
#include "mgru/tensor.hpp"

namespace mgru {

enum class GateBN { none, input_only, input_and_hidden };
enum class CellBN { input_only, input_and_hidden };

struct BNConfig {
  GateBN gate = GateBN::input_only;
  CellBN cell = CellBN::input_and_hidden;
  bool operator==(const BNConfig&) const = default;
};

inline std::string_view to_string(GateBN mode) {
  switch (mode) {
    case GateBN::none: return "none";
    case GateBN::input_only: return "itoh";
    case GateBN::input_and_hidden: return "both";
  }
  return "?";
}

inline std::string_view to_string(CellBN mode) {
  return mode == CellBN::input_only ? "itoh" : "both";
}

inline std::optional<GateBN> parse_gate_bn(std::string_view s) {
  if (s == "none") return GateBN::none;
  if (s == "itoh") return GateBN::input_only;
  if (s == "both") return GateBN::input_and_hidden;
  return std::nullopt;
}

inline std::optional<CellBN> parse_cell_bn(std::string_view s) {
  if (s == "itoh") return CellBN::input_only;
  if (s == "both") return CellBN::input_and_hidden;
  return std::nullopt;
}

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const Real a = std::sqrt(Real(6) / static_cast<Real>(fan_in + fan_out));
  std::uniform_real_distribution<Real> dist(-a, a);
  Tensor w({fan_in, fan_out});
  for (Real& v : w.data()) v = dist(rng);
  return w;
}

/// Test and diagnostic hook: pin the update gate to a constant.
struct StepOptions {
  std::optional<Real> forced_gate;
};

namespace detail {

template <class F, class BN>
void visit_bn(std::string_view site, BN& bn, F& f) {
  if (!bn) return;
  const std::string s(site);
  f(s + ".gamma", bn->gamma);
  f(s + ".beta", bn->beta);
}

template <class F, class BN>
void visit_bn_buffers(std::string_view site, BN& bn, F& f) {
  if (!bn) return;
  const std::string s(site);
  f(s + ".running_mean", bn->running_mean);
  f(s + ".running_var", bn->running_var);
}

inline Tensor apply_bn(const Tensor& x, std::optional<BNState>& bn, BNCache& cache) {
  return batch_norm(x, *bn, &cache);
}

inline Tensor gate_from(const Tensor& pre, const StepOptions& opts) {
  if (opts.forced_gate) return Tensor(pre.shape(), *opts.forced_gate);
  return sigmoid(pre);
}

inline Tensor blend(const Tensor& z, const Tensor& h_prev, const Tensor& candidate) {
  Tensor h = Tensor::zeros_like(z);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = z[i] * h_prev[i] + (Real(1) - z[i]) * candidate[i];
  return h;
}

inline void set_bn_mode(std::optional<BNState>& bn, BNMode mode) {
  if (bn) bn->mode = mode;
}

inline void zero_bn(std::optional<BNState>& bn) {
  if (!bn) return;
  bn->gamma.fill(0);
  bn->beta.fill(0);
  bn->running_mean.fill(0);
  bn->running_var.fill(0);
}

inline void store_bn_grads(std::optional<BNState>& slot, const BNGrads& g) {
  add_inplace(slot->gamma, g.gamma);
  add_inplace(slot->beta, g.beta);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// mGRU
// ---------------------------------------------------------------------------

struct MGRUParams {
  Tensor w_z;  // D_in x N
  Tensor u_z;  // N x N
  Tensor b_z;  // N, only used when the gate input path is not normalized
  Tensor w_h;  // D_in x N
  Tensor u_h;  // N x N
  std::optional<BNState> bn_gate_x;
  std::optional<BNState> bn_gate_h;
  std::optional<BNState> bn_cell_x;
  std::optional<BNState> bn_cell_h;

  static MGRUParams init(std::size_t input_dim, std::size_t cells, const BNConfig& cfg, Rng& rng) {
    if (input_dim == 0 || cells == 0) throw DimensionError("mGRU needs input_dim > 0 and cells > 0");
    MGRUParams p;
    p.w_z = glorot_uniform(input_dim, cells, rng);
    p.u_z = glorot_uniform(cells, cells, rng);
    p.b_z = Tensor({cells});
    p.w_h = glorot_uniform(input_dim, cells, rng);
    p.u_h = glorot_uniform(cells, cells, rng);
    if (cfg.gate != GateBN::none) p.bn_gate_x = BNState::fresh(cells);
    if (cfg.gate == GateBN::input_and_hidden) p.bn_gate_h = BNState::fresh(cells);
    p.bn_cell_x = BNState::fresh(cells);
    if (cfg.cell == CellBN::input_and_hidden) p.bn_cell_h = BNState::fresh(cells);
    return p;
  }

  std::size_t input_dim() const { return w_z.dim(0); }
  std::size_t cells() const { return w_z.dim(1); }

  BNConfig bn_config() const {
    BNConfig cfg;
    cfg.gate = bn_gate_h ? GateBN::input_and_hidden : (bn_gate_x ? GateBN::input_only : GateBN::none);
    cfg.cell = bn_cell_h ? CellBN::input_and_hidden : CellBN::input_only;
    return cfg;
  }

  template <class Self, class F>
  static void visit_trainable(Self& self, F&& f) {
    f(std::string("w_z"), self.w_z);
    f(std::string("u_z"), self.u_z);
    if (!self.bn_gate_x) f(std::string("b_z"), self.b_z);
    f(std::string("w_h"), self.w_h);
    f(std::string("u_h"), self.u_h);
    detail::visit_bn("bn_gate_x", self.bn_gate_x, f);
    detail::visit_bn("bn_gate_h", self.bn_gate_h, f);
    detail::visit_bn("bn_cell_x", self.bn_cell_x, f);
    detail::visit_bn("bn_cell_h", self.bn_cell_h, f);
  }

  template <class Self, class F>
  static void visit_buffers(Self& self, F&& f) {
    detail::visit_bn_buffers("bn_gate_x", self.bn_gate_x, f);
    detail::visit_bn_buffers("bn_gate_h", self.bn_gate_h, f);
    detail::visit_bn_buffers("bn_cell_x", self.bn_cell_x, f);
    detail::visit_bn_buffers("bn_cell_h", self.bn_cell_h, f);
  }

  void set_bn_mode(BNMode mode) {
    detail::set_bn_mode(bn_gate_x, mode);
    detail::set_bn_mode(bn_gate_h, mode);
    detail::set_bn_mode(bn_cell_x, mode);
    detail::set_bn_mode(bn_cell_h, mode);
  }

  /// Same layout, every tensor zero; used as a gradient accumulator.
  MGRUParams zeros_like() const {
    MGRUParams g = *this;
    for (Tensor* t : {&g.w_z, &g.u_z, &g.b_z, &g.w_h, &g.u_h}) t->fill(0);
    detail::zero_bn(g.bn_gate_x);
    detail::zero_bn(g.bn_gate_h);
    detail::zero_bn(g.bn_cell_x);
    detail::zero_bn(g.bn_cell_h);
    return g;
  }
};

struct MGRUCache {
  Tensor x;
  Tensor h_prev;
  Tensor gate_pre;
  Tensor z;
  Tensor candidate_pre;
  Tensor candidate;
  BNCache bn_gate_x, bn_gate_h, bn_cell_x, bn_cell_h;
  bool gate_forced = false;
};

struct MGRUGrads {
  Tensor x;
  Tensor h_prev;
  MGRUParams params;
};

template <class Cache>
struct StepResult {
  Tensor h;
  Cache cache;
};

namespace detail {

inline void check_step_shapes(const Tensor& x, const Tensor& h_prev, std::size_t input_dim, std::size_t cells,
                              const char* cell) {
  if (x.rank() != 2 || h_prev.rank() != 2) throw DimensionError(std::string(cell) + ": inputs must be B x D matrices");
  if (x.dim(1) != input_dim) {
    throw DimensionError(std::string(cell) + ": input width " + std::to_string(x.dim(1)) + " but weights expect " +
                         std::to_string(input_dim));
  }
  if (h_prev.dim(1) != cells) {
    throw DimensionError(std::string(cell) + ": state width " + std::to_string(h_prev.dim(1)) + " but layer has " +
                         std::to_string(cells) + " cells");
  }
  if (x.dim(0) != h_prev.dim(0)) throw DimensionError(std::string(cell) + ": batch extents of x and h_prev differ");
}

template <class Params>
void check_bn_config(const Params& params, const BNConfig& cfg, const char* cell) {
  if (!(params.bn_config() == cfg)) {
    throw ContractViolation(std::string(cell) + ": parameters were built for a different BN configuration");
  }
}

}  // namespace detail

inline StepResult<MGRUCache> mgru_step(const Tensor& x, const Tensor& h_prev, MGRUParams& params, const BNConfig& cfg,
                                       const StepOptions& opts = {}) {
  detail::check_step_shapes(x, h_prev, params.input_dim(), params.cells(), "mgru_step");
  detail::check_bn_config(params, cfg, "mgru_step");
  MGRUCache c;
  c.x = x;
  c.h_prev = h_prev;
  c.gate_forced = opts.forced_gate.has_value();

  Tensor gx = matmul(x, params.w_z);
  Tensor gh = matmul(h_prev, params.u_z);
  switch (cfg.gate) {
    case GateBN::none:
      c.gate_pre = add_row_vector(add(gx, gh), params.b_z);
      break;
    case GateBN::input_only:
      c.gate_pre = add(detail::apply_bn(gx, params.bn_gate_x, c.bn_gate_x), gh);
      break;
    case GateBN::input_and_hidden:
      c.gate_pre = add(detail::apply_bn(gx, params.bn_gate_x, c.bn_gate_x),
                       detail::apply_bn(gh, params.bn_gate_h, c.bn_gate_h));
      break;
  }
  c.z = detail::gate_from(c.gate_pre, opts);

  Tensor cx = detail::apply_bn(matmul(x, params.w_h), params.bn_cell_x, c.bn_cell_x);
  Tensor ch = matmul(h_prev, params.u_h);
  if (cfg.cell == CellBN::input_and_hidden) ch = detail::apply_bn(ch, params.bn_cell_h, c.bn_cell_h);
  c.candidate_pre = add(cx, ch);
  c.candidate = relu(c.candidate_pre);

  Tensor h = detail::blend(c.z, h_prev, c.candidate);
  return {std::move(h), std::move(c)};
}

inline MGRUGrads mgru_backward(const Tensor& grad_h, const MGRUCache& cache, const MGRUParams& params,
                               const BNConfig& cfg) {
  if (cache.x.rank() != 2 || cache.x.dim(1) != params.input_dim() || cache.h_prev.dim(1) != params.cells() ||
      grad_h.shape() != cache.h_prev.shape()) {
    throw ContractViolation("mgru_backward: cache does not match parameters or upstream gradient");
  }
  detail::check_bn_config(params, cfg, "mgru_backward");

  MGRUGrads g{Tensor::zeros_like(cache.x), mul(grad_h, cache.z), params.zeros_like()};
  auto& gp = g.params;

  Tensor grad_z = Tensor::zeros_like(grad_h);
  Tensor grad_cand = Tensor::zeros_like(grad_h);
  for (std::size_t i = 0; i < grad_h.size(); ++i) {
    grad_z[i] = grad_h[i] * (cache.h_prev[i] - cache.candidate[i]);
    grad_cand[i] = grad_h[i] * (Real(1) - cache.z[i]);
  }

  // Candidate path.
  const Tensor grad_cand_pre = relu_backward(grad_cand, cache.candidate_pre);
  const BNGrads bn_cx = batch_norm_backward(grad_cand_pre, cache.bn_cell_x, *params.bn_cell_x);
  detail::store_bn_grads(gp.bn_cell_x, bn_cx);
  Tensor grad_ch = grad_cand_pre;
  if (cfg.cell == CellBN::input_and_hidden) {
    const BNGrads bn_ch = batch_norm_backward(grad_cand_pre, cache.bn_cell_h, *params.bn_cell_h);
    detail::store_bn_grads(gp.bn_cell_h, bn_ch);
    grad_ch = bn_ch.input;
  }
  gp.w_h = matmul_tn(cache.x, bn_cx.input);
  gp.u_h = matmul_tn(cache.h_prev, grad_ch);
  add_inplace(g.x, matmul_nt(bn_cx.input, params.w_h));
  add_inplace(g.h_prev, matmul_nt(grad_ch, params.u_h));

  // Gate path; a pinned gate has no parameter dependence.
  if (!cache.gate_forced) {
    const Tensor grad_gate_pre = sigmoid_backward(grad_z, cache.z);
    Tensor grad_gx = grad_gate_pre;
    Tensor grad_gh = grad_gate_pre;
    if (cfg.gate == GateBN::none) {
      gp.b_z = column_sums(grad_gate_pre);
    } else {
      const BNGrads bn_gx = batch_norm_backward(grad_gate_pre, cache.bn_gate_x, *params.bn_gate_x);
      detail::store_bn_grads(gp.bn_gate_x, bn_gx);
      grad_gx = bn_gx.input;
      if (cfg.gate == GateBN::input_and_hidden) {
        const BNGrads bn_gh = batch_norm_backward(grad_gate_pre, cache.bn_gate_h, *params.bn_gate_h);
        detail::store_bn_grads(gp.bn_gate_h, bn_gh);
        grad_gh = bn_gh.input;
      }
    }
    gp.w_z = matmul_tn(cache.x, grad_gx);
    gp.u_z = matmul_tn(cache.h_prev, grad_gh);
    add_inplace(g.x, matmul_nt(grad_gx, params.w_z));
    add_inplace(g.h_prev, matmul_nt(grad_gh, params.u_z));
  }
  return g;
}

// ---------------------------------------------------------------------------
// mGRUIP
// ---------------------------------------------------------------------------

struct MGRUIPParams {
  Tensor w_v1;  // D_in x P
  Tensor w_v2;  // N x P
  Tensor w_z;   // P x N, shared by both halves of the projection
  Tensor b_z;   // N
  Tensor w_h;   // P x N
  std::optional<BNState> bn_gate;  // on v1 W_z (input_only) or v W_z (input_and_hidden)
  std::optional<BNState> bn_cell;  // on v1 W_h (input_only) or v W_h (input_and_hidden)
  CellBN cell_mode = CellBN::input_and_hidden;
  GateBN gate_mode = GateBN::input_only;

  static MGRUIPParams init(std::size_t input_dim, std::size_t cells, std::size_t projection, const BNConfig& cfg,
                           Rng& rng) {
    if (input_dim == 0 || cells == 0 || projection == 0) {
      throw DimensionError("mGRUIP needs input_dim, cells and projection all > 0");
    }
    if (projection >= input_dim + cells) {
      throw DimensionError("mGRUIP projection " + std::to_string(projection) + " must be a bottleneck (< " +
                           std::to_string(input_dim + cells) + ")");
    }
    MGRUIPParams p;
    p.w_v1 = glorot_uniform(input_dim, projection, rng);
    p.w_v2 = glorot_uniform(cells, projection, rng);
    p.w_z = glorot_uniform(projection, cells, rng);
    p.b_z = Tensor({cells});
    p.w_h = glorot_uniform(projection, cells, rng);
    if (cfg.gate != GateBN::none) p.bn_gate = BNState::fresh(cells);
    p.bn_cell = BNState::fresh(cells);
    p.gate_mode = cfg.gate;
    p.cell_mode = cfg.cell;
    return p;
  }

  std::size_t input_dim() const { return w_v1.dim(0); }
  std::size_t projection() const { return w_v1.dim(1); }
  std::size_t cells() const { return w_z.dim(1); }
  BNConfig bn_config() const { return {gate_mode, cell_mode}; }

  template <class Self, class F>
  static void visit_trainable(Self& self, F&& f) {
    f(std::string("w_v1"), self.w_v1);
    f(std::string("w_v2"), self.w_v2);
    f(std::string("w_z"), self.w_z);
    if (!self.bn_gate) f(std::string("b_z"), self.b_z);
    f(std::string("w_h"), self.w_h);
    detail::visit_bn("bn_gate", self.bn_gate, f);
    detail::visit_bn("bn_cell", self.bn_cell, f);
  }

  template <class Self, class F>
  static void visit_buffers(Self& self, F&& f) {
    detail::visit_bn_buffers("bn_gate", self.bn_gate, f);
    detail::visit_bn_buffers("bn_cell", self.bn_cell, f);
  }

  void set_bn_mode(BNMode mode) {
    detail::set_bn_mode(bn_gate, mode);
    detail::set_bn_mode(bn_cell, mode);
  }

  MGRUIPParams zeros_like() const {
    MGRUIPParams g = *this;
    for (Tensor* t : {&g.w_v1, &g.w_v2, &g.w_z, &g.b_z, &g.w_h}) t->fill(0);
    detail::zero_bn(g.bn_gate);
    detail::zero_bn(g.bn_cell);
    return g;
  }
};

struct MGRUIPCache {
  Tensor x;
  Tensor h_prev;
  Tensor v1, v2, v;
  Tensor gate_pre;
  Tensor z;
  Tensor candidate_pre;
  Tensor candidate;
  BNCache bn_gate, bn_cell;
  bool gate_forced = false;
};

struct MGRUIPGrads {
  Tensor x;
  Tensor h_prev;
  MGRUIPParams params;
};

inline StepResult<MGRUIPCache> mgruip_step(const Tensor& x, const Tensor& h_prev, MGRUIPParams& params,
                                           const BNConfig& cfg, const StepOptions& opts = {}) {
  detail::check_step_shapes(x, h_prev, params.input_dim(), params.cells(), "mgruip_step");
  detail::check_bn_config(params, cfg, "mgruip_step");
  MGRUIPCache c;
  c.x = x;
  c.h_prev = h_prev;
  c.gate_forced = opts.forced_gate.has_value();
  c.v1 = matmul(x, params.w_v1);
  c.v2 = matmul(h_prev, params.w_v2);
  c.v = add(c.v1, c.v2);

  switch (cfg.gate) {
    case GateBN::none:
      c.gate_pre = add_row_vector(matmul(c.v, params.w_z), params.b_z);
      break;
    case GateBN::input_only:
      c.gate_pre = add(detail::apply_bn(matmul(c.v1, params.w_z), params.bn_gate, c.bn_gate),
                       matmul(c.v2, params.w_z));
      break;
    case GateBN::input_and_hidden:
      c.gate_pre = detail::apply_bn(matmul(c.v, params.w_z), params.bn_gate, c.bn_gate);
      break;
  }
  c.z = detail::gate_from(c.gate_pre, opts);

  if (cfg.cell == CellBN::input_and_hidden) {
    c.candidate_pre = detail::apply_bn(matmul(c.v, params.w_h), params.bn_cell, c.bn_cell);
  } else {
    c.candidate_pre = add(detail::apply_bn(matmul(c.v1, params.w_h), params.bn_cell, c.bn_cell),
                          matmul(c.v2, params.w_h));
  }
  c.candidate = relu(c.candidate_pre);

  Tensor h = detail::blend(c.z, h_prev, c.candidate);
  return {std::move(h), std::move(c)};
}

inline MGRUIPGrads mgruip_backward(const Tensor& grad_h, const MGRUIPCache& cache, const MGRUIPParams& params,
                                   const BNConfig& cfg) {
  if (cache.x.rank() != 2 || cache.x.dim(1) != params.input_dim() || cache.h_prev.dim(1) != params.cells() ||
      grad_h.shape() != cache.h_prev.shape() || cache.v.dim(1) != params.projection()) {
    throw ContractViolation("mgruip_backward: cache does not match parameters or upstream gradient");
  }
  detail::check_bn_config(params, cfg, "mgruip_backward");

  MGRUIPGrads g{Tensor(), mul(grad_h, cache.z), params.zeros_like()};
  auto& gp = g.params;

  Tensor grad_z = Tensor::zeros_like(grad_h);
  Tensor grad_cand = Tensor::zeros_like(grad_h);
  for (std::size_t i = 0; i < grad_h.size(); ++i) {
    grad_z[i] = grad_h[i] * (cache.h_prev[i] - cache.candidate[i]);
    grad_cand[i] = grad_h[i] * (Real(1) - cache.z[i]);
  }

  Tensor grad_v1 = Tensor::zeros_like(cache.v1);
  Tensor grad_v2 = Tensor::zeros_like(cache.v2);

  // Shared routine for a path "pre = BN?(v1 W) + [v2 W]" or "pre = BN?(v W)".
  auto through_projection = [&](const Tensor& grad_pre, const Tensor& w, Tensor& grad_w, std::optional<BNState>& bn_grad,
                                const std::optional<BNState>& bn, const BNCache& bn_cache, bool split) {
    Tensor grad_in = grad_pre;
    if (bn) {
      const BNGrads bg = batch_norm_backward(grad_pre, bn_cache, *bn);
      detail::store_bn_grads(bn_grad, bg);
      grad_in = bg.input;
    }
    if (split) {
      // BN on the input half only; the recurrent half bypasses normalization.
      grad_w = add(matmul_tn(cache.v1, grad_in), matmul_tn(cache.v2, grad_pre));
      add_inplace(grad_v1, matmul_nt(grad_in, w));
      add_inplace(grad_v2, matmul_nt(grad_pre, w));
    } else {
      grad_w = matmul_tn(cache.v, grad_in);
      const Tensor grad_v = matmul_nt(grad_in, w);
      add_inplace(grad_v1, grad_v);
      add_inplace(grad_v2, grad_v);
    }
  };

  const Tensor grad_cand_pre = relu_backward(grad_cand, cache.candidate_pre);
  through_projection(grad_cand_pre, params.w_h, gp.w_h, gp.bn_cell, params.bn_cell, cache.bn_cell,
                     cfg.cell == CellBN::input_only);

  if (!cache.gate_forced) {
    const Tensor grad_gate_pre = sigmoid_backward(grad_z, cache.z);
    if (cfg.gate == GateBN::none) gp.b_z = column_sums(grad_gate_pre);
    through_projection(grad_gate_pre, params.w_z, gp.w_z, gp.bn_gate, params.bn_gate, cache.bn_gate,
                       cfg.gate == GateBN::input_only);
  }

  gp.w_v1 = matmul_tn(cache.x, grad_v1);
  gp.w_v2 = matmul_tn(cache.h_prev, grad_v2);
  g.x = matmul_nt(grad_v1, params.w_v1);
  add_inplace(g.h_prev, matmul_nt(grad_v2, params.w_v2));
  return g;
}

/// mGRUIP step whose input is a temporally spliced frame (see context.hpp).
/// Identical to mgruip_step; the width check names the splice explicitly.
inline StepResult<MGRUIPCache> mgruip_ctx_step(const Tensor& x_spliced, const Tensor& h_prev, MGRUIPParams& params,
                                               const BNConfig& cfg, const StepOptions& opts = {}) {
  if (x_spliced.rank() == 2 && x_spliced.dim(1) != params.input_dim()) {
    throw DimensionError("mgruip_ctx_step: spliced width " + std::to_string(x_spliced.dim(1)) +
                         " does not match projection input " + std::to_string(params.input_dim()));
  }
  return mgruip_step(x_spliced, h_prev, params, cfg, opts);
}

inline MGRUIPGrads mgruip_ctx_backward(const Tensor& grad_h, const MGRUIPCache& cache, const MGRUIPParams& params,
                                       const BNConfig& cfg) {
  return mgruip_backward(grad_h, cache, params, cfg);
}

}  // namespace mgru
