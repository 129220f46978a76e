#pragma once

#include <stdexcept>
#include <string>

namespace lungseg {

// Error taxonomy shared across the toolkit. The CLI maps these onto exit
// codes: usage/config/shape -> 1, io/format -> 2, numeric -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor/raster dimensions.
struct ShapeError : Error {
    using Error::Error;
};

// API misuse: bad argument values, wrong call sequence.
struct UsageError : Error {
    using Error::Error;
};

// Invalid model/run configuration.
struct ConfigError : UsageError {
    using UsageError::UsageError;
};

// Malformed file contents (checkpoints, images, manifests).
struct FormatError : Error {
    using Error::Error;
};

// Filesystem-level failures.
struct IoError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace lungseg
