#pragma once

#include <stdexcept>
#include <string>

namespace tatrans {

/// Bad input, bad configuration, or a violated precondition. Maps to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while doing work that was valid to start. Maps to exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite gradient detected during an optimizer step.
class DivergenceError : public RuntimeError {
 public:
  DivergenceError(const std::string& param_name, const std::string& what)
      : RuntimeError(what), param_name_(param_name) {}

  const std::string& param_name() const noexcept { return param_name_; }

 private:
  std::string param_name_;
};

}  // namespace tatrans
