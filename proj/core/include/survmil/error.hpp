#pragma once

#include <stdexcept>
#include <string>

namespace survmil {

// Validation errors are bad inputs; numerical errors are failures of a
// well-formed computation (separation, singular systems, blowup).
enum class ErrorKind { kValidation, kNumerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error ValidationError(const std::string& what) {
  return Error(ErrorKind::kValidation, what);
}

inline Error NumericalError(const std::string& what) {
  return Error(ErrorKind::kNumerical, what);
}

}  // namespace survmil
