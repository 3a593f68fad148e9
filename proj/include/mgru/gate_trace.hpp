// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "mgru/network.hpp"

namespace mgru {

/// Update-gate activation of one layer at one frame, averaged over cells and batch.
struct TraceRecord {
  std::size_t t = 0;
  std::size_t layer = 0;  // 1-based
  Real mean_gate = 0;
};

/// Runs `inputs` (T x B x D) through a copy of `model` with BN in eval mode and
/// reports the mean update gate of `layer` for every frame.
inline std::vector<TraceRecord> trace_gate(const Model& model, const Tensor& inputs, std::size_t layer) {
  if (layer < 1 || layer > model.config.layers) {
    throw std::out_of_range("trace layer " + std::to_string(layer) + " outside 1.." +
                            std::to_string(model.config.layers));
  }
  Model frozen = model;
  frozen.set_bn_mode(BNMode::eval);
  const ForwardResult fwd = forward(frozen, inputs);
  const LayerTrace& trace = fwd.cache.layers[layer - 1];

  std::vector<TraceRecord> records;
  records.reserve(trace.steps.size());
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const Tensor& z = std::visit([](const auto& c) -> const Tensor& { return c.z; }, trace.steps[t]);
    records.push_back({t, layer, sum(z) / static_cast<Real>(z.size())});
  }
  return records;
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& records) {
  os << "t,layer,mean_gate\n";
  const auto old_precision = os.precision(17);
  for (const auto& r : records) os << r.t << ',' << r.layer << ',' << r.mean_gate << '\n';
  os.precision(old_precision);
}

}  // namespace mgru
