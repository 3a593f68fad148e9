// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgru/errors.hpp"
#include "mgru/network.hpp"
#include "mgru/tasks.hpp"

namespace mgru {

struct TrainConfig {
  Real learning_rate = Real(0.05);
  Real momentum = Real(0.9);
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  Real clip = Real(5);  // global gradient-norm threshold
  Real eval_fraction = Real(0.2);
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate >= 0)) throw std::invalid_argument("learning rate must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (batch_size < 2) {
      throw std::invalid_argument("batch size must be >= 2: train-mode batch normalization needs a batch variance");
    }
    if (!(clip > 0)) throw std::invalid_argument("clip threshold must be > 0");
    if (!(eval_fraction >= 0 && eval_fraction < 1)) throw std::invalid_argument("eval fraction must lie in [0, 1)");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;  // "train" or "eval"
  Real loss = 0;
  Real accuracy = 0;
};

struct Batch {
  Tensor inputs;            // T x B x D
  std::vector<int> labels;  // t * B + b
};

/// Stacks the chosen sequences along the batch axis.
inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch needs at least one sequence");
  const std::size_t frames = ds.spec.frames, dim = ds.spec.dim, batch = indices.size();
  Batch out{Tensor({frames, batch, dim}), std::vector<int>(frames * batch)};
  for (std::size_t b = 0; b < batch; ++b) {
    const Sequence& seq = ds.sequences.at(indices[b]);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t d = 0; d < dim; ++d) out.inputs.at(t, b, d) = seq.inputs.at(t, d);
      out.labels[t * batch + b] = seq.labels[t];
    }
  }
  return out;
}

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

/// The last `eval_fraction` of the sequences are held out.
inline DataSplit split_dataset(const Dataset& ds, Real eval_fraction) {
  const std::size_t n = ds.sequences.size();
  std::size_t n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<Real>(n)));
  if (eval_fraction > 0 && n_eval == 0) n_eval = 1;
  if (n_eval >= n) throw std::invalid_argument("eval split leaves no training sequences");
  DataSplit s;
  for (std::size_t i = 0; i < n; ++i) (i < n - n_eval ? s.train : s.eval).push_back(i);
  return s;
}

/// Loss and frame accuracy with BN in eval mode; the model is not touched.
inline EpochMetrics evaluate(const Model& model, const Dataset& ds, std::span<const std::size_t> indices) {
  Model frozen = model;
  frozen.set_bn_mode(BNMode::eval);
  const Batch batch = make_batch(ds, indices);
  const ForwardResult fwd = forward(frozen, batch.inputs);
  const LossResult lr = cross_entropy(fwd.probs, batch.labels);
  return {0, "", lr.loss, static_cast<Real>(lr.correct) / static_cast<Real>(lr.frames)};
}

namespace detail {

inline std::string first_non_finite(const ForwardResult& fwd) {
  for (std::size_t l = 0; l < fwd.cache.layers.size(); ++l) {
    if (!all_finite(fwd.cache.layers[l].output)) return "layer" + std::to_string(l + 1) + ".output";
  }
  if (!all_finite(fwd.logits)) return "logits";
  return "probs";
}

inline Real global_norm(const std::vector<Tensor*>& grads) {
  Real sq = 0;
  for (const Tensor* g : grads)
    for (Real v : g->data()) sq += v * v;
  return std::sqrt(sq);
}

/// Consecutive chunks of `batch_size`; a trailing single sequence joins the previous chunk.
inline std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].insert(out[out.size() - 2].end(), out.back().begin(), out.back().end());
    out.pop_back();
  }
  return out;
}

}  // namespace detail

/// Minibatch SGD with momentum and global-norm clipping on frame-level
/// cross-entropy. After every epoch both splits are scored in eval mode and
/// reported through `on_metric` (if set) and the returned list.
inline std::vector<EpochMetrics> train(Model& model, const Dataset& ds, const TrainConfig& cfg,
                                       const std::function<void(const EpochMetrics&)>& on_metric = {}) {
  cfg.validate();
  if (ds.spec.dim != model.config.input_dim || ds.spec.classes != model.config.output_dim) {
    throw DimensionError("dataset (dim " + std::to_string(ds.spec.dim) + ", classes " + std::to_string(ds.spec.classes) +
                         ") does not match model (input " + std::to_string(model.config.input_dim) + ", output " +
                         std::to_string(model.config.output_dim) + ")");
  }
  const DataSplit split = split_dataset(ds, cfg.eval_fraction);
  if (split.train.size() < 2) throw std::invalid_argument("training split needs at least 2 sequences");

  Rng rng(cfg.seed);
  Model velocity = model.zeros_like();
  std::vector<Tensor*> params = trainable_tensors(model);
  std::vector<Tensor*> vel = trainable_tensors(velocity);
  std::vector<std::string> names;
  model.for_each_trainable([&](const std::string& n, const Tensor&) { names.push_back(n); });

  std::vector<EpochMetrics> history;
  std::vector<std::size_t> order = split.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t batch_no = 0;
    for (const auto& ids : detail::chunk(order, cfg.batch_size)) {
      ++batch_no;
      model.set_bn_mode(BNMode::train);
      const Batch batch = make_batch(ds, ids);
      const ForwardResult fwd = forward(model, batch.inputs);
      const LossResult loss = cross_entropy(fwd.probs, batch.labels);
      if (!std::isfinite(loss.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) +
                           "; first non-finite tensor: " + detail::first_non_finite(fwd));
      }
      ModelGrads grads = backward(model, fwd.cache, loss.grad_logits);
      std::vector<Tensor*> g = trainable_tensors(grads.params);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!all_finite(*g[i])) {
          throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no) + "; first non-finite tensor: grad " + names[i]);
        }
      }
      const Real norm = detail::global_norm(g);
      const Real shrink = norm > cfg.clip ? cfg.clip / norm : Real(1);
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->data();
        auto v = vel[i]->data();
        auto gi = g[i]->data();
        for (std::size_t k = 0; k < p.size(); ++k) {
          v[k] = cfg.momentum * v[k] + shrink * gi[k];
          p[k] -= cfg.learning_rate * v[k];
        }
      }
    }

    for (const auto* part : {&split.train, &split.eval}) {
      if (part->empty()) continue;
      EpochMetrics m = evaluate(model, ds, *part);
      m.epoch = epoch;
      m.split = part == &split.train ? "train" : "eval";
      if (!std::isfinite(m.loss)) {
        throw NumericError("non-finite " + m.split + " loss after epoch " + std::to_string(epoch));
      }
      history.push_back(m);
      if (on_metric) on_metric(m);
    }
  }
  model.set_bn_mode(BNMode::eval);
  return history;
}

}  // namespace mgru
