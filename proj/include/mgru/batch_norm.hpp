// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mgru/errors.hpp"
#include "mgru/tensor.hpp"

namespace mgru {

enum class BNMode { train, eval };

/// Affine parameters and running statistics for one normalization site.
///
/// In train mode the input is normalized with the mean and (biased) variance of
/// the current batch, per channel; running statistics follow an exponential
/// moving average with the unbiased variance. In eval mode the running
/// statistics are used and nothing is mutated.
struct BNState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  Real momentum = Real(0.1);
  Real epsilon = Real(1e-5);
  BNMode mode = BNMode::train;

  static BNState fresh(std::size_t channels) {
    return BNState{Tensor({channels}, Real(1)), Tensor({channels}), Tensor({channels}), Tensor({channels}, Real(1))};
  }

  std::size_t channels() const { return gamma.size(); }
};

struct BNCache {
  Tensor normalized;        // x_hat, B x D
  std::vector<Real> inv_std;  // per channel
  BNMode mode = BNMode::train;
};

struct BNGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

inline void check_bn_input(const Tensor& x, const BNState& state) {
  if (x.rank() != 2) throw DimensionError("batch_norm expects a B x D matrix, got " + shape_str(x.shape()));
  if (x.dim(1) != state.channels()) {
    throw DimensionError("batch_norm channel mismatch: input has " + std::to_string(x.dim(1)) +
                         " channels, state has " + std::to_string(state.channels()));
  }
  if (state.mode == BNMode::train && x.dim(0) < 2) {
    throw InsufficientBatchError("batch_norm in train mode needs batch size >= 2, got " + std::to_string(x.dim(0)));
  }
}

/// Normalizes `x` (B x D) per channel. Train mode updates the running statistics.
inline Tensor batch_norm(const Tensor& x, BNState& state, BNCache* cache = nullptr) {
  check_bn_input(x, state);
  const std::size_t rows = x.dim(0), channels = x.dim(1);
  Tensor out = Tensor::zeros_like(x);
  Tensor normalized = Tensor::zeros_like(x);
  std::vector<Real> inv_std(channels);

  for (std::size_t c = 0; c < channels; ++c) {
    Real mean, var;
    if (state.mode == BNMode::train) {
      mean = 0;
      for (std::size_t r = 0; r < rows; ++r) mean += x.at(r, c);
      mean /= static_cast<Real>(rows);
      var = 0;
      for (std::size_t r = 0; r < rows; ++r) var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
      var /= static_cast<Real>(rows);
      const Real unbiased = var * static_cast<Real>(rows) / static_cast<Real>(rows - 1);
      state.running_mean[c] = (Real(1) - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] = (Real(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = Real(1) / std::sqrt(var + state.epsilon);
    for (std::size_t r = 0; r < rows; ++r) {
      normalized.at(r, c) = (x.at(r, c) - mean) * inv_std[c];
      out.at(r, c) = state.gamma[c] * normalized.at(r, c) + state.beta[c];
    }
  }

  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->mode = state.mode;
  }
  return out;
}

/// Eval-mode normalization on a const state.
inline Tensor batch_norm_eval(const Tensor& x, const BNState& state) {
  BNState frozen = state;
  frozen.mode = BNMode::eval;
  return batch_norm(x, frozen);
}

inline BNGrads batch_norm_backward(const Tensor& grad_out, const BNCache& cache, const BNState& state) {
  const Tensor& xhat = cache.normalized;
  detail::require_same_shape(grad_out, xhat, "batch_norm_backward");
  if (cache.inv_std.size() != state.channels()) throw ContractViolation("batch_norm cache does not match state");
  const std::size_t rows = xhat.dim(0), channels = xhat.dim(1);
  BNGrads g{Tensor::zeros_like(xhat), Tensor({channels}), Tensor({channels})};

  for (std::size_t c = 0; c < channels; ++c) {
    Real sum_g = 0, sum_g_xhat = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      sum_g += grad_out.at(r, c);
      sum_g_xhat += grad_out.at(r, c) * xhat.at(r, c);
    }
    g.beta[c] = sum_g;
    g.gamma[c] = sum_g_xhat;
    const Real scale_c = state.gamma[c] * cache.inv_std[c];
    if (cache.mode == BNMode::eval) {
      for (std::size_t r = 0; r < rows; ++r) g.input.at(r, c) = grad_out.at(r, c) * scale_c;
    } else {
      const Real n = static_cast<Real>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        g.input.at(r, c) = scale_c / n * (n * grad_out.at(r, c) - sum_g - xhat.at(r, c) * sum_g_xhat);
      }
    }
  }
  return g;
}

}  // namespace mgru
