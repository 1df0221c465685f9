#pragma once

#include <stdexcept>
#include <string>

namespace basup {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, unreadable, or unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset layout or content violations.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Mismatched array shapes between arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// An instance-mask provider could not be reached or returned garbage.
class ProviderError : public Error {
 public:
  using Error::Error;
};

}  // namespace basup
