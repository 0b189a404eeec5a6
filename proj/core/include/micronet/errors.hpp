#pragma once

#include <stdexcept>
#include <string>

namespace micronet {

/// Root of the exception hierarchy thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (out-of-range parameter, bad enum).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Two rasters or tensors that must agree in shape do not.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Decode/encode failure or missing file.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Image statistics make an operation undefined (constant channel, zero power).
class DegenerateImage : public Error {
 public:
  using Error::Error;
};

}  // namespace micronet
