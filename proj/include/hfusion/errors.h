#pragma once

#include <stdexcept>
#include <string>

namespace hfusion {

// Input that fails a contract (bad schema, out-of-range value, bad flag).
// The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RangeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class BoundsError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Failures while doing work on valid input (I/O, numerics). Exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class DegenerateEmbeddingError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class NonFiniteLossError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace hfusion
