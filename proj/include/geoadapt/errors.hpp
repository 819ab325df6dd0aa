#pragma once

#include <stdexcept>
#include <string>

namespace geoadapt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or widths that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf was produced, or a value left its numeric domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid arguments, configuration values or file contents.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Access to information the active protocol hides (e.g. target labels under UDA).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Local PCA on a neighbourhood with no spread.
class DegenerateFrameError : public NumericError {
 public:
  using NumericError::NumericError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace geoadapt
