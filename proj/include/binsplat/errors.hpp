#pragma once

#include <stdexcept>
#include <string>

namespace binsplat {

// Malformed or unreadable file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that parses but violates a semantic rule (mask nesting, view/camera mismatch, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values encountered during optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

inline void require_valid(bool condition, const std::string& what) {
  if (!condition) throw ValidationError(what);
}

}  // namespace binsplat
