#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>

namespace convot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntVector = Eigen::VectorXi;

/// Degrees of freedom value marking a Gaussian cluster.
inline constexpr double kGaussianDof = std::numeric_limits<double>::infinity();

inline bool is_gaussian(double nu) { return nu == kGaussianDof; }

/// Violated precondition or a quantity that does not exist for the given parameters.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed input file, unreadable path, bad config value.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical integration did not reach the requested tolerance.
class QuadratureError : public DomainError {
public:
    QuadratureError(const std::string& what, double estimate, double error)
        : DomainError(what + " (estimate " + format_g(estimate) + ", error estimate " + format_g(error) + ")"),
          estimate_(estimate),
          error_(error) {}

    double estimate() const { return estimate_; }
    double error_estimate() const { return error_; }

private:
    static std::string format_g(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return buf;
    }

    double estimate_;
    double error_;
};

/// Optimizer stopped without meeting its convergence test.
class ConvergenceError : public DomainError {
public:
    ConvergenceError(const std::string& what, Vector best, double best_value)
        : DomainError(what), best_(std::move(best)), best_value_(best_value) {}

    const Vector& best() const { return best_; }
    double best_value() const { return best_value_; }

private:
    Vector best_;
    double best_value_;
};

}  // namespace convot
