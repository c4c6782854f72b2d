#pragma once

#include <stdexcept>
#include <string>

namespace saig {

// Base of every error the library raises. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape / extent disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Precondition violated by the caller (bad argument value, misuse of the tape).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed JSON document or checkpoint header.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace saig
