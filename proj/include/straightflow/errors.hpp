#pragma once

#include <stdexcept>
#include <string>

namespace straightflow {

// Base of every error raised by the library. Callers that only care about
// "something went wrong" catch this; the subclasses mirror the failure
// classes documented on each operation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidCoupling : public Error {
 public:
  using Error::Error;
};

// Marginal covariance is numerically singular at the requested time.
class DegenerateMarginal : public Error {
 public:
  using Error::Error;
};

// Sample slice without spread (e.g. zero variance) where spread is required.
class DegenerateData : public Error {
 public:
  using Error::Error;
};

// Kernel estimate refused: too little kernel mass near the query point.
class LowDensity : public Error {
 public:
  LowDensity(const std::string& what, double effective_n)
      : Error(what), effective_n_(effective_n) {}
  double effective_n() const noexcept { return effective_n_; }

 private:
  double effective_n_;
};

class InconsistentMoments : public Error {
 public:
  using Error::Error;
};

class InvalidGrid : public Error {
 public:
  using Error::Error;
};

// Non-finite positions, velocities or tensor entries reached an estimator.
class NonFiniteInput : public Error {
 public:
  using Error::Error;
};

// An operation needs a closed form the process does not admit
// (e.g. analytic fields for an empirical coupling).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace straightflow
