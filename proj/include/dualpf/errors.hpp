#pragma once

#include <stdexcept>
#include <string>

namespace dualpf {

// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Token id or coordinate outside its valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Caller violated an operation precondition (missing SOS, non-scalar loss, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid user configuration: bad key, bad value, unsatisfiable spec.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf detected; the message names the offending parameter or loss component.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt, truncated or version-mismatched persisted state.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint was produced by a different training mode than requested.
class ModeMismatchError : public IntegrityError {
 public:
  using IntegrityError::IntegrityError;
};

}  // namespace dualpf
