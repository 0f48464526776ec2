#pragma once

#include <stdexcept>
#include <string>

namespace sarpf {

/// Raised when tensor or kernel dimensions are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a precondition that is not about shapes is violated.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical evaluation produces a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a parameter file cannot be decoded. tensor() names the
/// offending entry when one is known.
class LoadError : public std::runtime_error {
 public:
  LoadError(const std::string& tensor, const std::string& what)
      : std::runtime_error(tensor.empty() ? what : "tensor '" + tensor + "': " + what),
        tensor_(tensor) {}

  const std::string& tensor() const noexcept { return tensor_; }

 private:
  std::string tensor_;
};

}  // namespace sarpf
