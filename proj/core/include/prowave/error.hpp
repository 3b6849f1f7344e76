#pragma once

#include <stdexcept>
#include <string>

namespace prowave {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument is outside its allowed range (stride, model width, lambda, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API contract (non-scalar loss, wrong critic output, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A value outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents: WAV headers, checkpoints, config, ratings.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace prowave
