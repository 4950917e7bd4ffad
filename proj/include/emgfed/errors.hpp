#pragma once

#include <stdexcept>

namespace emgfed {

// Invalid configuration or parameters (non-positive rates, bad fractions, ...).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed file content; message carries line/field position where known.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite value produced by a numeric operation.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Gradient descent diverged; the step size is too large.
struct StepSizeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Singular linear system (ridge solve with lambda_w = 0 on degenerate data).
struct SingularityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input data too short / missing snapshots / insufficient samples.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace emgfed
