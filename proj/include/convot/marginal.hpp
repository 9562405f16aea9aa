#pragma once

#include "convot/distribution.hpp"
#include "convot/types.hpp"

#include <complex>
#include <vector>

namespace convot {

/// Y = location + sum_k scales[k] * U_k, U_k independent univariate t with dof[k].
/// With standardized = false U_k is the plain t (scale 1); with standardized = true
/// U_k has unit variance, so scales[k] is the standard deviation of the k-th term.
struct MarginalSpec {
    double location = 0.0;
    std::vector<double> scales;
    std::vector<double> dof;
    bool standardized = false;

    /// Validates the invariants; throws DomainError.
    void validate() const;
    /// Per-term scale of the plain t representation.
    std::vector<double> raw_scales() const;
    /// Per-term standard deviations sqrt(nu/(nu-2)) * raw scale. Requires nu > 2.
    std::vector<double> standardized_scales() const;
};

struct QuadratureConfig {
    double atol = 1e-10;
    double rtol = 1e-8;
    double max_abscissa = 1e4;
    bool segment_oscillations = true;
};

/// Marginal of beta'Y for Y ~ spec.
MarginalSpec marginal_of(const CTSpec& spec, const Vector& beta);

/// Characteristic function of the univariate t_nu (unit scale). nu may be infinite.
double t_char_fn(double nu, double s);

std::complex<double> marginal_cf(const MarginalSpec& m, double s);

double marginal_pdf(const MarginalSpec& m, double y, const QuadratureConfig& q = {});
double marginal_cdf(const MarginalSpec& m, double y, const QuadratureConfig& q = {});

/// Density of N(0,1) + Cauchy(0,1).
double voigt_pdf(double y);

enum class OddDfPair { t1_t3, t1_t5 };

/// Closed-form density of t_1 + t_3 or t_1 + t_5 with unit scales.
double odd_df_pdf(OddDfPair pair, double y);

struct MarginalMoments {
    double variance;
    double excess_kurtosis;
};

/// Requires every nu > 4.
MarginalMoments marginal_moments(const MarginalSpec& m);

/// Requires every nu > 2.
double marginal_variance(const MarginalSpec& m);

/// E|Y - location|^r for 0 < r < min nu.
double fractional_moment(const MarginalSpec& m, double r, const QuadratureConfig& q = {});

/// E[(Y - location)^(2k)] computed exactly from the per-term t moments.
double even_central_moment(const MarginalSpec& m, int k);

}  // namespace convot
