#pragma once

#include <stdexcept>
#include <string>

namespace persona {

// Caller broke a documented precondition (bad shape, out-of-range id, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or unusable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or failed numerical verification.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Out-of-order or forbidden action in an evaluation session.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace persona
