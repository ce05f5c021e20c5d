#pragma once

#include <stdexcept>
#include <string>

namespace psvrt {

// Base for every error raised by the library. The CLI maps the subclasses
// onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// (m, n, k) cannot be realized: items do not fit, too few distinct patterns,
// or placement sampling hit its redraw cap.
class InfeasibleParams : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf appeared in a tensor or gradient.
class NumericFault : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace psvrt
