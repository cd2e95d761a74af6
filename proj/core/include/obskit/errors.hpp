#pragma once

#include <stdexcept>
#include <string>

namespace obskit {

/// Base class for all obskit errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Zero or mismatched dimensions (d, B, vector lengths).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Non-positive dampening constant.
class DampeningError : public Error {
public:
    using Error::Error;
};

/// Estimator has already consumed its declared gradient budget.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// NaN or infinity where a finite value is required.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// Weight group straddles a Fisher block or layer segment boundary.
class AlignmentError : public Error {
public:
    using Error::Error;
};

/// Overlapping weight groups passed to a single update.
class ConflictError : public Error {
public:
    using Error::Error;
};

/// Sparsity schedule asked to move backwards.
class MonotonicityError : public Error {
public:
    using Error::Error;
};

/// Refusal to prune from an estimator that has seen no gradients.
class UninformedFisherError : public Error {
public:
    using Error::Error;
};

/// Training loss exceeded the divergence threshold.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Recipe or argument validation failure; message is path-qualified.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// File read/write failure.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace obskit
