// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic sequence-labelling tasks.
//
// lookahead-classify: every frame is a noisy copy of one of C class prototypes;
//   the label at t is the class of frame min(t + d, T - 1). Only a model that
//   sees d frames into the future can beat chance.
// slow-signal: the inputs are white noise; the label at t is the quantile bin
//   of the length-w moving average of channel 0 over frames t-w+1..t. The
//   model has to integrate its input over time to recover the slow signal.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mgru/tensor.hpp"

namespace mgru {

enum class TaskKind { lookahead_classify, slow_signal };

inline std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::lookahead_classify ? "lookahead-classify" : "slow-signal";
}

inline std::optional<TaskKind> parse_task_kind(std::string_view s) {
  if (s == "lookahead-classify") return TaskKind::lookahead_classify;
  if (s == "slow-signal") return TaskKind::slow_signal;
  return std::nullopt;
}

struct TaskSpec {
  TaskKind kind = TaskKind::lookahead_classify;
  std::size_t frames = 40;     // T
  std::size_t dim = 8;         // D
  std::size_t classes = 4;     // C
  std::size_t lookahead = 2;   // d, lookahead-classify only
  std::size_t window = 8;      // w, slow-signal only
  std::size_t sequences = 200;
  std::uint64_t seed = 1;
  Real noise = Real(0.3);      // per-coordinate std of the frame noise, lookahead-classify only

  void validate() const {
    if (frames == 0 || dim == 0 || sequences == 0) throw std::invalid_argument("task needs frames, dim, sequences > 0");
    if (classes < 2) throw std::invalid_argument("task needs at least 2 classes");
    if (kind == TaskKind::lookahead_classify && lookahead < 1) {
      throw std::invalid_argument("lookahead-classify needs lookahead >= 1");
    }
    if (kind == TaskKind::slow_signal && window < 2) throw std::invalid_argument("slow-signal needs window >= 2");
  }
};

struct Sequence {
  Tensor inputs;                  // T x D
  std::vector<int> labels;        // T
  std::vector<int> frame_classes;  // lookahead-classify: class drawn for each frame
};

struct Dataset {
  TaskSpec spec;
  std::vector<Sequence> sequences;
};

namespace detail {

inline Dataset gen_lookahead(const TaskSpec& spec) {
  Rng rng(spec.seed);
  std::normal_distribution<Real> normal(0, 1);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(spec.classes) - 1);

  Tensor prototypes({spec.classes, spec.dim});
  for (Real& v : prototypes.data()) v = normal(rng);

  Dataset ds{spec, {}};
  ds.sequences.reserve(spec.sequences);
  for (std::size_t n = 0; n < spec.sequences; ++n) {
    Sequence seq{Tensor({spec.frames, spec.dim}), std::vector<int>(spec.frames), std::vector<int>(spec.frames)};
    for (std::size_t t = 0; t < spec.frames; ++t) {
      const int c = pick(rng);
      seq.frame_classes[t] = c;
      for (std::size_t d = 0; d < spec.dim; ++d) {
        seq.inputs.at(t, d) = prototypes.at(static_cast<std::size_t>(c), d) + spec.noise * normal(rng);
      }
    }
    for (std::size_t t = 0; t < spec.frames; ++t) {
      seq.labels[t] = seq.frame_classes[std::min(t + spec.lookahead, spec.frames - 1)];
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

inline Dataset gen_slow_signal(const TaskSpec& spec) {
  Rng rng(spec.seed);
  std::normal_distribution<Real> normal(0, 1);
  const std::size_t warmup = spec.window - 1;

  Dataset ds{spec, {}};
  ds.sequences.reserve(spec.sequences);
  std::vector<Real> smooth;
  smooth.reserve(spec.sequences * spec.frames);
  for (std::size_t n = 0; n < spec.sequences; ++n) {
    Tensor raw({warmup + spec.frames, spec.dim});
    for (Real& v : raw.data()) v = normal(rng);
    Sequence seq{Tensor({spec.frames, spec.dim}), std::vector<int>(spec.frames), {}};
    for (std::size_t t = 0; t < spec.frames; ++t) {
      for (std::size_t d = 0; d < spec.dim; ++d) seq.inputs.at(t, d) = raw.at(t + warmup, d);
      Real acc = 0;
      for (std::size_t k = 0; k < spec.window; ++k) acc += raw.at(t + k, 0);
      smooth.push_back(acc / static_cast<Real>(spec.window));
    }
    ds.sequences.push_back(std::move(seq));
  }

  // Bin edges at the empirical quantiles of the smoothed signal over the whole dataset.
  std::vector<Real> sorted = smooth;
  std::sort(sorted.begin(), sorted.end());
  std::vector<Real> edges;
  for (std::size_t c = 1; c < spec.classes; ++c) edges.push_back(sorted[c * sorted.size() / spec.classes]);
  std::size_t i = 0;
  for (auto& seq : ds.sequences) {
    for (std::size_t t = 0; t < spec.frames; ++t, ++i) {
      seq.labels[t] = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), smooth[i]) - edges.begin());
    }
  }
  return ds;
}

}  // namespace detail

/// Deterministic in `spec.seed`.
inline Dataset gen_task(const TaskSpec& spec) {
  spec.validate();
  return spec.kind == TaskKind::lookahead_classify ? detail::gen_lookahead(spec) : detail::gen_slow_signal(spec);
}

}  // namespace mgru
