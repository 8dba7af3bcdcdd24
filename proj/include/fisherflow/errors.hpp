#pragma once

#include <stdexcept>
#include <string>

namespace fisherflow {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A symmetric matrix failed its Cholesky factorization (pivot <= 0).
class NotPositiveDefinite : public Error {
public:
    explicit NotPositiveDefinite(const std::string& msg = "matrix is not positive definite")
        : Error(msg) {}
};

class DimensionMismatch : public Error {
public:
    explicit DimensionMismatch(const std::string& msg = "dimension mismatch") : Error(msg) {}
};

class DegreeOutOfRange : public Error {
public:
    explicit DegreeOutOfRange(const std::string& msg) : Error(msg) {}
};

/// Tensor-product quadrature would exceed the configured node budget; the
/// caller should fall back to a Monte-Carlo rule.
class NodeBudgetExceeded : public Error {
public:
    explicit NodeBudgetExceeded(const std::string& msg) : Error(msg) {}
};

/// A function evaluation produced NaN or infinity.
class NonFiniteValue : public Error {
public:
    explicit NonFiniteValue(const std::string& msg = "non-finite value encountered")
        : Error(msg) {}
};

/// Evaluation requested at a point where the model is not differentiable.
class SingularPoint : public Error {
public:
    explicit SingularPoint(const std::string& msg) : Error(msg) {}
};

/// An invariant check failed during flow integration. Carries the time of failure.
class DivergedFlow : public Error {
public:
    DivergedFlow(double t, const std::string& msg)
        : Error("flow diverged at t=" + std::to_string(t) + ": " + msg), t_fail(t) {}
    double t_fail;
};

class MaxStepsExceeded : public Error {
public:
    explicit MaxStepsExceeded(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace fisherflow
