#pragma once

#include <stdexcept>
#include <string>

namespace e3net {

// Base for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatches. Messages name the offending axis.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration (bad hyperparameters, mismatched embedding size,
// malformed train config).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// File and format problems: WAV decoding, checkpoint parsing, missing paths.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// API misuse relative to an object's lifecycle (push after close, backward
// before forward, double flush).
class StateError : public Error {
 public:
  explicit StateError(const std::string& msg) : Error(msg) {}
};

// Numerical failure that must abort a run (NaN loss). Never clamped away.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace e3net
