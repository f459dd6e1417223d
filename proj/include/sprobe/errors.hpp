#pragma once

#include <stdexcept>
#include <string>

namespace sprobe {

// Base of every error raised by the library. The CLI maps each subclass to
// an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

// Invalid configuration, shapes or hyperparameters.
class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

// Upstream artifact absent or produced by a different configuration.
class MissingArtifactError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

// Non-finite values, non-convergence, undefined metrics.
class NumericError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

// Metric undefined for this input (e.g. an all-zero attribution map); such
// samples are excluded from aggregates and counted.
class UndefinedMetricError : public NumericError {
public:
    using NumericError::NumericError;
};

// API misuse, e.g. backward on a trace recorded in the wrong mode.
class UsageError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace sprobe
