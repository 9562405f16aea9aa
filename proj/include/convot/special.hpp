#pragma once

#include <complex>

namespace convot {

/// Digamma function psi(x) for x > 0.
double digamma(double x);

/// Trigamma function psi'(x) for x > 0.
double trigamma(double x);

/// log K_v(x), modified Bessel function of the second kind, v real, x > 0.
double log_bessel_k(double v, double x);

/// Faddeeva function w(z) = exp(-z^2) erfc(-iz), valid for Im z >= 0.
std::complex<double> faddeeva_w(std::complex<double> z);

/// Scaled complementary error function erfcx(z) = exp(z^2) erfc(z) for Re z >= 0.
std::complex<double> erfcx(std::complex<double> z);

/// Standard Student t (unit scale) density, log density and cdf; nu may be infinite.
double student_t_log_pdf(double x, double nu);
double student_t_pdf(double x, double nu);
double student_t_cdf(double x, double nu);

/// Quantile of the standard Student t. Bisection bracket followed by Newton steps.
double student_t_quantile(double p, double nu);

}  // namespace convot
