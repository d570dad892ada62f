#pragma once

#include <stdexcept>
#include <string>

namespace mtb {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or contract-level argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf showed up where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Dataset content or provenance problems (tags, overlaps, sizes).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtb
