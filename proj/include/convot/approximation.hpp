#pragma once

#include "convot/marginal.hpp"

namespace convot {

/// Student t approximation: location, squared plain-t scale and dof.
/// Its variance is scale2 * dof / (dof - 2).
struct TApprox {
    double location = 0.0;
    double scale2 = 1.0;
    double dof = kGaussianDof;

    double variance() const;
    double log_pdf(double y) const;
    double pdf(double y) const;
    double cdf(double y) const;
    double quantile(double p) const;
};

/// Matches the first four moments of the marginal. Every dof must exceed 4.
TApprox moment_match_t(const MarginalSpec& m);

/// KLIC(g, f) = integral of g log(g/f) with g the marginal density and f the approximation.
double klic(const MarginalSpec& m, const TApprox& a, const QuadratureConfig& q = {});

struct KLFit {
    TApprox approx;
    double klic = 0.0;
    /// KLIC of the moment-matched start on the same quadrature grid; NaN when some dof <= 4.
    double klic_moment_match = 0.0;
    int iterations = 0;
};

/// Minimizes KLIC over the t family with dof > 2, starting from the moment match when it exists.
KLFit kl_best_t(const MarginalSpec& m, const QuadratureConfig& q = {});

struct RiskMeasures {
    double var = 0.0;
    double es = 0.0;
};

/// Lower-tail Value-at-Risk (the alpha quantile) and Expected Shortfall E[Y | Y <= VaR].
RiskMeasures var_es(const TApprox& a, double alpha);

}  // namespace convot
