#pragma once

#include <stdexcept>
#include <string>

namespace ticl {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up for the requested operation.
struct ShapeError : Error {
    using Error::Error;
};

/// A forward pass produced a non-finite value, or an optimizer precondition failed.
struct NumericError : Error {
    using Error::Error;
};

/// Dataset files are missing, truncated, or contain invalid records.
struct DataError : Error {
    using Error::Error;
};

/// A checkpoint file is missing, truncated, or has a bad magic/version.
struct CheckpointError : Error {
    using Error::Error;
};

/// Invalid experiment configuration.
struct ConfigError : Error {
    using Error::Error;
};

/// Learner lifecycle misuse (e.g. beginning a step while one is open).
struct StateError : Error {
    using Error::Error;
};

/// Training tried to touch data outside the current step.
struct RehearsalError : StateError {
    using StateError::StateError;
};

} // namespace ticl
