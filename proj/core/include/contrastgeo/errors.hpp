#pragma once

#include <stdexcept>
#include <string>

namespace contrastgeo {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not line up (matmul inner dims, fuse inputs, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An API precondition was violated by the caller (non-scalar backward,
/// token id out of range, missing prediction, tape reuse).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is invalid (unknown pooling method, M > K-1,
/// dim not divisible by heads, bad axis name).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A prompt template is malformed (missing or duplicated class marker).
class TemplateError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Input data is unusable (empty corpus, label out of range,
/// insufficient samples for the requested shot count).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A corpus line could not be parsed; message carries file and line number.
class ParseError : public DataError {
 public:
  using DataError::DataError;
};

/// Referential integrity between posts and locations is broken.
class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

/// A probability argument does not form a distribution (rows not summing
/// to one in cross_entropy).
class DistributionError : public Error {
 public:
  using Error::Error;
};

/// An input is mathematically degenerate (zero-norm embedding in cosine
/// similarity).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures (unwritable output directory, unreadable checkpoint).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace contrastgeo
