#pragma once

#include <stdexcept>
#include <string>

namespace pisa {

// Shapes of operands disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller-side precondition was violated (non-scalar loss, size mismatch...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Set cardinality or key index exceeds the onehot key width.
class CapacityError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Key is not occupied in a latent state.
class KeyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Statistic is undefined for the given data (e.g. zero variance).
class UndefinedError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointHeaderError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace pisa
