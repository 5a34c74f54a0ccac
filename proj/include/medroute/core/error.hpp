#pragma once

#include <stdexcept>
#include <string>

namespace medroute {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (dataset lines, pool files, world files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Configuration or usage problem detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace medroute
