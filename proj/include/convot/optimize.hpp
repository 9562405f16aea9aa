#pragma once

#include "convot/types.hpp"

#include <functional>

namespace convot {

/// Objective returning f(x) and writing its gradient. May throw DomainError for points outside
/// the domain; the line search treats those as +inf.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct LbfgsOptions {
    int max_iterations = 500;
    int memory = 10;
    /// Stop when the gradient infinity norm drops below this.
    double gradient_tolerance = 1e-6;
    /// ... or when the relative step falls below this.
    double parameter_tolerance = 1e-12;
};

struct LbfgsResult {
    Vector x;
    double value = 0.0;
    Vector gradient;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

/// Limited-memory BFGS minimizer with a backtracking Armijo line search.
LbfgsResult minimize_lbfgs(const Objective& f, const Vector& x0, const LbfgsOptions& opts = {});

}  // namespace convot
