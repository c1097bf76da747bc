#pragma once

#include <stdexcept>
#include <string>

namespace signflip {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// IRLS exhausted its iteration budget before the score tolerance was met.
class NonConvergence : public Error {
 public:
  using Error::Error;
};

// Binomial fitted means pinned at 0/1 with a numerically singular Z'WZ.
class SeparationDetected : public Error {
 public:
  using Error::Error;
};

class SingularDesign : public Error {
 public:
  using Error::Error;
};

// A flipped variance is too small to standardize by.
class DegenerateVariance : public Error {
 public:
  using Error::Error;
};

class TooLarge : public Error {
 public:
  using Error::Error;
};

class TooManyHypotheses : public Error {
 public:
  using Error::Error;
};

class SingularCovariance : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace signflip
