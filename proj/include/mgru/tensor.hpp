// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mgru/errors.hpp"

namespace mgru {

#ifdef MGRU_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of rank 1..3. Sequences are laid out as
/// (time, batch, channel); matrices as (rows, cols).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  /// Builds a matrix from nested row lists.
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<Real> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::initializer_list<Real> values) {
    return Tensor({values.size()}, std::vector<Real>(values));
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  const std::vector<Real>& values() const noexcept { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  Real& at(std::size_t t, std::size_t b, std::size_t d) {
    return data_[(t * shape_[1] + b) * shape_[2] + d];
  }
  Real at(std::size_t t, std::size_t b, std::size_t d) const {
    return data_[(t * shape_[1] + b) * shape_[2] + d];
  }

  /// Row `t` of a rank-3 tensor as a (batch, channel) matrix.
  Tensor frame(std::size_t t) const {
    require_rank(3, "frame");
    const std::size_t stride = shape_[1] * shape_[2];
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(t * stride);
    return Tensor({shape_[1], shape_[2]}, std::vector<Real>(first, first + static_cast<std::ptrdiff_t>(stride)));
  }

  void set_frame(std::size_t t, const Tensor& m) {
    check_frame(m, "set_frame");
    std::copy(m.data_.begin(), m.data_.end(), data_.begin() + static_cast<std::ptrdiff_t>(t * m.size()));
  }

  void add_to_frame(std::size_t t, const Tensor& m) {
    check_frame(m, "add_to_frame");
    const std::size_t off = t * m.size();
    for (std::size_t i = 0; i < m.size(); ++i) data_[off + i] += m.data_[i];
  }

  /// Keeps the first `frames` time steps of a rank-3 tensor.
  Tensor leading_frames(std::size_t frames) const {
    require_rank(3, "leading_frames");
    if (frames > shape_[0]) throw DimensionError("leading_frames beyond sequence length");
    const std::size_t stride = shape_[1] * shape_[2];
    return Tensor({frames, shape_[1], shape_[2]},
                  std::vector<Real>(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(frames * stride)));
  }

  void fill(Real value) { std::fill(data_.begin(), data_.end(), value); }

  bool operator==(const Tensor& other) const = default;

 private:
  static std::size_t count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }

  void require_rank(std::size_t r, const char* op) const {
    if (rank() != r) {
      throw DimensionError(std::string(op) + " needs rank " + std::to_string(r) + ", got " + shape_str(shape_));
    }
  }

  void check_frame(const Tensor& m, const char* op) const {
    require_rank(3, op);
    if (m.rank() != 2 || m.shape_[0] != shape_[1] || m.shape_[1] != shape_[2]) {
      throw DimensionError(std::string(op) + ": frame " + shape_str(m.shape_) + " vs sequence " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<Real> data_;
};

namespace detail {

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " must be a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class F>
Tensor map(const Tensor& x, F&& f) {
  Tensor out = Tensor::zeros_like(x);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F&& f) {
  require_same_shape(a, b, op);
  Tensor out = Tensor::zeros_like(a);
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

}  // namespace detail

/// a[B x M] * w[M x N]
inline Tensor matmul(const Tensor& a, const Tensor& w) {
  detail::require_matrix(a, "matmul lhs");
  detail::require_matrix(w, "matmul rhs");
  const std::size_t rows = a.dim(0), inner = a.dim(1), cols = w.dim(1);
  if (w.dim(0) != inner) {
    throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " * " + shape_str(w.shape()));
  }
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = 0; k < inner; ++k) {
      const Real aik = a.at(i, k);
      if (aik == Real(0)) continue;
      for (std::size_t j = 0; j < cols; ++j) out.at(i, j) += aik * w.at(k, j);
    }
  }
  return out;
}

/// a^T * b, used for weight gradients.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_tn lhs");
  detail::require_matrix(b, "matmul_tn rhs");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn row extents differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t rows = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < m; ++i) {
      const Real ari = a.at(r, i);
      if (ari == Real(0)) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += ari * b.at(r, j);
    }
  }
  return out;
}

/// a * b^T, used to push gradients back through a weight.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt lhs");
  detail::require_matrix(b, "matmul_nt rhs");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt column extents differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(0);
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      Real acc = 0;
      for (std::size_t k = 0; k < inner; ++k) acc += a.at(i, k) * b.at(j, k);
      out.at(i, j) = acc;
    }
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "add", [](Real x, Real y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "sub", [](Real x, Real y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "mul", [](Real x, Real y) { return x * y; });
}
inline Tensor scale(const Tensor& a, Real s) {
  return detail::map(a, [s](Real x) { return x * s; });
}

inline void add_inplace(Tensor& acc, const Tensor& x) {
  detail::require_same_shape(acc, x, "add_inplace");
  auto dst = acc.data();
  auto src = x.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline void axpy_inplace(Tensor& acc, Real alpha, const Tensor& x) {
  detail::require_same_shape(acc, x, "axpy_inplace");
  auto dst = acc.data();
  auto src = x.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

/// Adds a length-N vector to every row of a B x N matrix.
inline Tensor add_row_vector(const Tensor& m, const Tensor& v) {
  detail::require_matrix(m, "add_row_vector");
  if (v.size() != m.dim(1)) {
    throw DimensionError("row vector of length " + std::to_string(v.size()) + " vs matrix " + shape_str(m.shape()));
  }
  Tensor out = m;
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) out.at(i, j) += v[j];
  return out;
}

/// Sum over rows, yielding a length-N vector.
inline Tensor column_sums(const Tensor& m) {
  detail::require_matrix(m, "column_sums");
  Tensor out({m.dim(1)});
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) out[j] += m.at(i, j);
  return out;
}

/// Logistic function, clamped to the open interval (0, 1): the nearest
/// representable values stand in for 0 and 1 once exp under- or overflows.
inline Real sigmoid(Real x) {
  constexpr Real lo = std::numeric_limits<Real>::min();
  constexpr Real hi = Real(1) - std::numeric_limits<Real>::epsilon() / 2;
  Real s;
  if (x >= 0) {
    s = Real(1) / (Real(1) + std::exp(-x));
  } else {
    const Real e = std::exp(x);
    s = e / (Real(1) + e);
  }
  return std::clamp(s, lo, hi);
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::map(x, [](Real v) { return sigmoid(v); });
}

/// dL/da for z = sigmoid(a), given z and dL/dz.
inline Tensor sigmoid_backward(const Tensor& grad, const Tensor& z) {
  return detail::zip(grad, z, "sigmoid_backward", [](Real g, Real s) { return g * s * (Real(1) - s); });
}

inline Tensor relu(const Tensor& x) {
  return detail::map(x, [](Real v) { return v > Real(0) ? v : Real(0); });
}

/// Subgradient at exactly zero is taken as 0.
inline Tensor relu_backward(const Tensor& grad, const Tensor& pre_activation) {
  return detail::zip(grad, pre_activation, "relu_backward",
                     [](Real g, Real a) { return a > Real(0) ? g : Real(0); });
}

/// Row-wise softmax of a B x C matrix.
inline Tensor softmax_rows(const Tensor& logits) {
  detail::require_matrix(logits, "softmax_rows");
  Tensor out = Tensor::zeros_like(logits);
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    Real top = logits.at(i, 0);
    for (std::size_t j = 1; j < logits.dim(1); ++j) top = std::max(top, logits.at(i, j));
    Real total = 0;
    for (std::size_t j = 0; j < logits.dim(1); ++j) {
      out.at(i, j) = std::exp(logits.at(i, j) - top);
      total += out.at(i, j);
    }
    for (std::size_t j = 0; j < logits.dim(1); ++j) out.at(i, j) /= total;
  }
  return out;
}

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](Real v) { return std::isfinite(v); });
}

inline Real sum(const Tensor& t) { return std::accumulate(t.data().begin(), t.data().end(), Real(0)); }

inline Real max_abs(const Tensor& t) {
  Real m = 0;
  for (Real v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace mgru
