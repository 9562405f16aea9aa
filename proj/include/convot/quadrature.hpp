#pragma once

#include <functional>
#include <vector>

namespace convot {

struct QuadratureResult {
    double value = 0.0;
    double error = 0.0;
    int evaluations = 0;
    bool converged = false;
};

/// Globally adaptive 7/15-point Gauss-Kronrod integration over [a, b].
/// `breakpoints` (sorted, inside (a, b)) seed the initial partition.
QuadratureResult integrate_gk(const std::function<double(double)>& f, double a, double b, double atol,
                              double rtol, int max_intervals = 4000,
                              const std::vector<double>& breakpoints = {});

}  // namespace convot
