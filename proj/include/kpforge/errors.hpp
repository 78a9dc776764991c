#pragma once

#include <stdexcept>
#include <string>

namespace kpforge {

/// Base class for all toolkit errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input file / record (names the offending line where known).
struct ParseError : Error {
    using Error::Error;
};

/// A value violates a documented invariant (names the offending field).
struct ValidationError : Error {
    using Error::Error;
};

/// Keypoint schema inconsistency (unknown name, overlapping groups, ...).
struct SchemaError : Error {
    using Error::Error;
};

/// Invalid configuration (sizes, level lists, option ranges).
struct ConfigError : Error {
    using Error::Error;
};

/// Filesystem / image IO failure.
struct IoError : Error {
    using Error::Error;
};

/// Iterative solver failed to reach its tolerance; carries the residual.
struct SolveError : Error {
    double residual;
    SolveError(const std::string& msg, double residual_norm)
        : Error(msg), residual(residual_norm) {}
};

/// Training aborted (non-finite loss, bad dataset, ...).
struct TrainingError : Error {
    using Error::Error;
};

}  // namespace kpforge
