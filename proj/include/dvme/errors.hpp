#pragma once

#include <stdexcept>
#include <string>

namespace dvme {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Usage and configuration problems (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};
class ParameterError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};
class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};
class CapacityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};
class IoError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// A backward pass was handed a cache produced for different parameters.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

// Metric is mathematically undefined for the given input (single class, degenerate marginals).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient, failed gradient check (CLI exit code 4).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or corrupted data files (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};
class MagicError : public DataError {
 public:
  using DataError::DataError;
};
class VersionError : public DataError {
 public:
  using DataError::DataError;
};
class CrcError : public DataError {
 public:
  using DataError::DataError;
};
class TruncationError : public DataError {
 public:
  using DataError::DataError;
};
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace dvme
