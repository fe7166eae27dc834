#pragma once

#include <stdexcept>
#include <string>

namespace spcrf {

// Base of every exception raised by the library. The CLI maps these to
// exit code 2 (data error); UsageError maps to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Sizes of two inputs disagree, or a size is degenerate.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A value lies outside its admissible range (label >= L, negative index, ...).
class RangeError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// An instance exceeds a hard size guard (exact enumeration, sequential sweep).
class TooLargeError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration or command-line flags.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace spcrf
