#pragma once

#include <stdexcept>
#include <string>

namespace ipd {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid argument values (bad shape params, bad schedule bounds, ...).
struct ParamError : Error {
  using Error::Error;
};

/// Array/cloud dimensions that do not line up.
struct ShapeError : Error {
  using Error::Error;
};

/// API misuse: a call sequence or argument combination the contract forbids.
struct ContractError : Error {
  using Error::Error;
};

/// Non-finite values encountered during computation.
struct NumericError : Error {
  using Error::Error;
};

/// Malformed on-disk data (bad magic, truncated payload, ...).
struct FormatError : Error {
  using Error::Error;
};

/// Bad configuration file contents.
struct ConfigError : Error {
  using Error::Error;
};

/// Checkpoint does not match the expected network configuration.
struct IncompatibleCheckpointError : Error {
  using Error::Error;
};

/// Filesystem failures.
struct IoError : Error {
  using Error::Error;
};

/// UDF filtering removed every point; retry with a larger threshold.
struct EmptyExtractionError : Error {
  using Error::Error;
};

/// A cloud with zero spread where variance is required.
struct DegenerateCloudError : Error {
  using Error::Error;
};

/// A view direction that culls every point.
struct DegenerateViewError : Error {
  using Error::Error;
};

}  // namespace ipd
