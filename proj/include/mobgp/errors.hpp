#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mobgp {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyInput : Error {
    using Error::Error;
};

struct InvalidSequence : Error {
    using Error::Error;
};

struct InvalidTransitionMatrix : Error {
    using Error::Error;
};

struct NotRegularGrid : Error {
    using Error::Error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct SingularFactor : Error {
    using Error::Error;
};

struct NotPositiveDefinite : Error {
    using Error::Error;
};

struct InvalidCount : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

/// Saved model is incompatible with the requested operation (wrong version, wrong
/// binning scheme, wrong document type).
struct ModelMismatch : Error {
    using Error::Error;
};

/// Iterative solver exhausted its iteration budget.
struct MaxIterations : Error {
    MaxIterations(const std::string& what, int iterations, double final_residual)
        : Error(what), iterations(iterations), final_residual(final_residual) {}
    int iterations;
    double final_residual;
};

/// Optimizer produced a non-finite objective. Carries the loss trace up to the failure.
struct OptimizationFailed : Error {
    OptimizationFailed(const std::string& what, std::vector<double> trace)
        : Error(what), trace(std::move(trace)) {}
    std::vector<double> trace;
};

}  // namespace mobgp
