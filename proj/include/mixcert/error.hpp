#pragma once

#include <stdexcept>
#include <string>

namespace mixcert {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments: dimension mismatch, out-of-range parameters, invalid class index.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed files (model schema, CSV, config).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The mixing weight puts too much authority on the accurate model for any certificate.
class NotCertifiableError : public Error {
 public:
  using Error::Error;
};

/// Smoothed probabilities hit 0 or 1 where the randomized-smoothing radius needs (0,1).
class AssumptionViolation : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace mixcert
