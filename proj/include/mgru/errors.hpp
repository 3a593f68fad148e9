// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mgru {

/// Shape or width disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Train-mode batch normalization needs at least two rows to estimate a variance.
class InsufficientBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed context-setting or plan text.
class ParseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A cache handed to a backward pass does not belong to the matching forward call.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite loss or tensor encountered while training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mgru
