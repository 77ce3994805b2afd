#pragma once

#include <stdexcept>
#include <string>

namespace rtknet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or weight bundles.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class EncodingError : public Error {
 public:
  using Error::Error;
};

class AssignmentError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent on-disk artifacts.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace rtknet
