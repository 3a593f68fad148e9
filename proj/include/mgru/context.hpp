// SPDX-License-Identifier: Apache-2.0
#pragma once

// Temporal-convolution context module.
//
// A layer l > 1 may replace its input frame x_t with the concatenation
//
//   [x_t; h_{t - s1}; ...; h_{t - K1 s1}; h_{t + s2}; ...; h_{t + K2 s2}]
//
// where h is the output sequence of layer l - 1. Settings are written
// "{K1xs1; K2xs2}" with "0" for an empty side, e.g. "{0; 1x3}" or "{1x6; 2x3}".
// Indices that fall outside the sequence are clamped to the first or last frame.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "mgru/errors.hpp"
#include "mgru/tensor.hpp"

namespace mgru {

struct ContextSpec {
  std::size_t k1 = 0;  // history order
  std::size_t s1 = 1;  // history stride
  std::size_t k2 = 0;  // future order
  std::size_t s2 = 1;  // future stride

  bool empty() const { return k1 == 0 && k2 == 0; }
  std::size_t order() const { return k1 + k2; }
  std::size_t history_reach() const { return k1 * s1; }
  std::size_t future_reach() const { return k2 * s2; }

  /// Strides of an empty side do not participate in equality.
  bool operator==(const ContextSpec& o) const {
    return k1 == o.k1 && k2 == o.k2 && (k1 == 0 || s1 == o.s1) && (k2 == 0 || s2 == o.s2);
  }

  std::string to_string() const {
    auto side = [](std::size_t k, std::size_t s) {
      return k == 0 ? std::string("0") : std::to_string(k) + "x" + std::to_string(s);
    };
    return "{" + side(k1, s1) + "; " + side(k2, s2) + "}";
  }
};

namespace detail {

class ContextLexer {
 public:
  explicit ContextLexer(std::string_view text) : text_(text) {}

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool at_end() {
    skip_space();
    return pos_ >= text_.size();
  }

  std::size_t pos() const { return pos_; }

  /// Text of the token starting at the cursor, for error messages.
  std::string peek_token() {
    skip_space();
    if (pos_ >= text_.size()) return "<end of input>";
    std::size_t end = pos_;
    if (std::isdigit(static_cast<unsigned char>(text_[end]))) {
      while (end < text_.size() && std::isdigit(static_cast<unsigned char>(text_[end]))) ++end;
    } else if (text_.compare(end, kTimes.size(), kTimes) == 0) {
      end += kTimes.size();
    } else {
      ++end;
    }
    return std::string(text_.substr(pos_, end - pos_));
  }

  [[noreturn]] void fail(const std::string& expected) {
    const std::size_t at = (skip_space(), pos_);
    throw ParseError("context setting '" + std::string(text_) + "': unexpected token '" + peek_token() +
                     "' at offset " + std::to_string(at) + ", expected " + expected);
  }

  void expect(char c) {
    skip_space();
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("'") + c + "'");
    ++pos_;
  }

  std::size_t integer() {
    skip_space();
    if (pos_ >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_]))) fail("an integer");
    const std::string token = peek_token();
    if (token.size() > 9) fail("an integer below 1e9");
    pos_ += token.size();
    return static_cast<std::size_t>(std::stoul(token));
  }

  bool times() {
    skip_space();
    if (text_.compare(pos_, kTimes.size(), kTimes) == 0) {
      pos_ += kTimes.size();
      return true;
    }
    if (pos_ < text_.size() && (text_[pos_] == 'x' || text_[pos_] == 'X' || text_[pos_] == '*')) {
      ++pos_;
      return true;
    }
    return false;
  }

  /// "0" or "KxS" with positive K and S.
  std::pair<std::size_t, std::size_t> side() {
    skip_space();
    const std::size_t start = pos_;
    const std::size_t k = integer();
    if (!times()) {
      if (k == 0) return {0, 1};
      fail("'x' after context order");
    }
    const std::size_t s = integer();
    if (k == 0 || s == 0) {
      pos_ = start;
      fail("positive order and stride in 'KxS' (use a bare 0 for no context)");
    }
    return {k, s};
  }

 private:
  static constexpr std::string_view kTimes = "\xC3\x97";  // U+00D7 MULTIPLICATION SIGN
  std::string_view text_;
  std::size_t pos_ = 0;
};

inline ContextSpec parse_context_group(ContextLexer& lex) {
  ContextSpec spec;
  lex.expect('{');
  std::tie(spec.k1, spec.s1) = lex.side();
  lex.expect(';');
  std::tie(spec.k2, spec.s2) = lex.side();
  lex.expect('}');
  return spec;
}

}  // namespace detail

/// Parses one "{K1xs1; K2xs2}" setting.
inline ContextSpec parse_context_setting(std::string_view text) {
  detail::ContextLexer lex(text);
  ContextSpec spec = detail::parse_context_group(lex);
  if (!lex.at_end()) lex.fail("end of input");
  return spec;
}

/// Context settings for layers 2..L. Layer 1 never splices.
struct LayerContextPlan {
  std::vector<ContextSpec> layers;  // layers[i] applies to layer i + 2

  bool empty() const {
    for (const auto& s : layers)
      if (!s.empty()) return false;
    return true;
  }

  /// Setting for 1-based layer `l`; layer 1 and layers past the plan get none.
  ContextSpec for_layer(std::size_t l) const {
    if (l < 2 || l - 2 >= layers.size()) return {};
    return layers[l - 2];
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < layers.size(); ++i) out += (i ? " " : "") + layers[i].to_string();
    return out;
  }

  bool operator==(const LayerContextPlan&) const = default;
};

/// Parses a whitespace- or comma-separated list of settings, one per layer
/// starting at layer 2. Empty text is the empty plan.
inline LayerContextPlan parse_context_plan(std::string_view text) {
  detail::ContextLexer lex(text);
  LayerContextPlan plan;
  while (!lex.at_end()) {
    plan.layers.push_back(detail::parse_context_group(lex));
    lex.skip_space();
    if (!lex.at_end() && lex.peek_token() == ",") {
      lex.expect(',');
      if (lex.at_end()) lex.fail("'{'");
    }
  }
  return plan;
}

inline std::size_t spliced_width(std::size_t input_width, std::size_t below_width, const ContextSpec& spec) {
  return input_width + below_width * spec.order();
}

/// Source frames for output frame t: history nearest first, then future nearest first.
/// The current frame is not listed; it enters as the leading block.
inline std::vector<std::size_t> splice_indices(std::size_t t, std::size_t frames, const ContextSpec& spec) {
  if (t >= frames) {
    throw std::out_of_range("splice_indices: frame " + std::to_string(t) + " outside sequence of length " +
                            std::to_string(frames));
  }
  std::vector<std::size_t> idx;
  idx.reserve(spec.order());
  for (std::size_t i = 1; i <= spec.k1; ++i) idx.push_back(spec.s1 * i >= t ? 0 : t - spec.s1 * i);
  for (std::size_t j = 1; j <= spec.k2; ++j) idx.push_back(std::min(t + spec.s2 * j, frames - 1));
  return idx;
}

namespace detail {

inline void check_splice_operands(const Tensor& h_below, const Tensor& x_layer) {
  if (h_below.rank() != 3 || x_layer.rank() != 3) throw DimensionError("splice operands must be T x B x D");
  if (h_below.dim(0) != x_layer.dim(0) || h_below.dim(1) != x_layer.dim(1)) {
    throw DimensionError("splice: time/batch extents differ: " + shape_str(h_below.shape()) + " vs " +
                         shape_str(x_layer.shape()));
  }
}

}  // namespace detail

/// Builds the spliced input sequence: row t is [x_layer[t]; h_below[splice_indices(t)]].
inline Tensor splice(const Tensor& h_below, const Tensor& x_layer, const ContextSpec& spec) {
  detail::check_splice_operands(h_below, x_layer);
  const std::size_t frames = x_layer.dim(0), batch = x_layer.dim(1);
  const std::size_t dx = x_layer.dim(2), dh = h_below.dim(2);
  const std::size_t width = spliced_width(dx, dh, spec);
  Tensor out({frames, batch, width});
  for (std::size_t t = 0; t < frames; ++t) {
    const auto idx = splice_indices(t, frames, spec);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t d = 0; d < dx; ++d) out.at(t, b, d) = x_layer.at(t, b, d);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        for (std::size_t d = 0; d < dh; ++d) out.at(t, b, dx + k * dh + d) = h_below.at(idx[k], b, d);
      }
    }
  }
  return out;
}

/// Future-only splice [x_t; h_{t+s}; ...; h_{t+Ks}], written out directly.
inline Tensor splice_future(const Tensor& h_below, const Tensor& x_layer, std::size_t order, std::size_t stride) {
  detail::check_splice_operands(h_below, x_layer);
  if (order > 0 && stride == 0) throw std::invalid_argument("splice_future: stride must be >= 1");
  const std::size_t frames = x_layer.dim(0), batch = x_layer.dim(1);
  const std::size_t dx = x_layer.dim(2), dh = h_below.dim(2);
  Tensor out({frames, batch, dx + order * dh});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t col = 0;
      for (std::size_t d = 0; d < dx; ++d) out.at(t, b, col++) = x_layer.at(t, b, d);
      for (std::size_t i = 1; i <= order; ++i) {
        const std::size_t src = std::min(t + stride * i, frames - 1);
        for (std::size_t d = 0; d < dh; ++d) out.at(t, b, col++) = h_below.at(src, b, d);
      }
    }
  }
  return out;
}

/// Scatter-adds a gradient on the spliced sequence back onto its two sources.
inline void splice_backward(const Tensor& grad_spliced, const ContextSpec& spec, Tensor& grad_h_below,
                            Tensor& grad_x_layer) {
  detail::check_splice_operands(grad_h_below, grad_x_layer);
  const std::size_t frames = grad_x_layer.dim(0), batch = grad_x_layer.dim(1);
  const std::size_t dx = grad_x_layer.dim(2), dh = grad_h_below.dim(2);
  if (grad_spliced.shape() != Shape{frames, batch, spliced_width(dx, dh, spec)}) {
    throw DimensionError("splice_backward: gradient " + shape_str(grad_spliced.shape()) + " does not match setting " +
                         spec.to_string());
  }
  for (std::size_t t = 0; t < frames; ++t) {
    const auto idx = splice_indices(t, frames, spec);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t d = 0; d < dx; ++d) grad_x_layer.at(t, b, d) += grad_spliced.at(t, b, d);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        for (std::size_t d = 0; d < dh; ++d) grad_h_below.at(idx[k], b, d) += grad_spliced.at(t, b, dx + k * dh + d);
      }
    }
  }
}

}  // namespace mgru
