#pragma once

#include <stdexcept>
#include <string>

namespace clustertab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad values handed to a public operation (non-finite coordinates, bad extents).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidAnnotation : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace clustertab
