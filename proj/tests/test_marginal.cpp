#include "convot/marginal.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace convot;

namespace {

MarginalSpec two_terms(double nu1, double nu2, double w1 = 1.0, double w2 = 1.0) {
    MarginalSpec m;
    m.location = 0.0;
    m.scales = {w1, w2};
    m.dof = {nu1, nu2};
    return m;
}

double t_abs_moment(double nu, double r) {
    return std::pow(nu, 0.5 * r) * std::tgamma(0.5 * (r + 1)) * std::tgamma(0.5 * (nu - r)) /
           (std::sqrt(std::numbers::pi) * std::tgamma(0.5 * nu));
}

}  // namespace

TEST(Marginal, VoigtAgainstGilPelaez) {
    const MarginalSpec m = two_terms(kGaussianDof, 1.0);
    for (double y : {-7.5, -1.0, 0.0, 0.3, 4.0}) EXPECT_NEAR(marginal_pdf(m, y), voigt_pdf(y), 1e-9) << y;
}

TEST(Marginal, VoigtAtZero) {
    // N(0,1) + Cauchy at 0: e^{1/2} erfc(1/sqrt 2) / sqrt(2 pi).
    const double expected = std::exp(0.5) * std::erfc(1.0 / std::sqrt(2.0)) / std::sqrt(2.0 * std::numbers::pi);
    EXPECT_NEAR(voigt_pdf(0.0), expected, 1e-15);
}

TEST(Marginal, OddDofClosedForms) {
    for (double y : {-9.0, -2.5, 0.0, 1.0, 6.0}) {
        EXPECT_NEAR(marginal_pdf(two_terms(1.0, 3.0), y), odd_df_pdf(OddDfPair::t1_t3, y), 1e-9) << y;
        EXPECT_NEAR(marginal_pdf(two_terms(1.0, 5.0), y), odd_df_pdf(OddDfPair::t1_t5, y), 1e-9) << y;
    }
}

TEST(Marginal, ClosedFormsIntegrateToOne) {
    boost::math::quadrature::tanh_sinh<double> ts;
    const double a = ts.integrate([](double y) { return odd_df_pdf(OddDfPair::t1_t3, y); },
                                  -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
    const double b = ts.integrate([](double y) { return odd_df_pdf(OddDfPair::t1_t5, y); },
                                  -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
    EXPECT_NEAR(a, 1.0, 1e-10);
    EXPECT_NEAR(b, 1.0, 1e-10);
}

TEST(Marginal, NonIntegerDofAgainstDirectConvolution) {
    // f(y) = int f1(u) f2(y - u) du with both t densities evaluated directly.
    const MarginalSpec m = two_terms(2.7, 6.3, 0.8, 1.4);
    boost::math::quadrature::tanh_sinh<double> ts;
    for (double y : {-3.0, 0.0, 1.7}) {
        auto conv = [&](double u) {
            const double a = std::tgamma(0.5 * 3.7) / (std::sqrt(2.7 * std::numbers::pi) * std::tgamma(1.35)) *
                             std::pow(1 + (u / 0.8) * (u / 0.8) / 2.7, -1.85) / 0.8;
            const double v = (y - u) / 1.4;
            const double b = std::tgamma(0.5 * 7.3) / (std::sqrt(6.3 * std::numbers::pi) * std::tgamma(3.15)) *
                             std::pow(1 + v * v / 6.3, -3.65) / 1.4;
            return a * b;
        };
        const double expected = ts.integrate(conv, -std::numeric_limits<double>::infinity(),
                                              std::numeric_limits<double>::infinity());
        EXPECT_NEAR(marginal_pdf(m, y), expected, 1e-9) << y;
    }
}

TEST(Marginal, SingleTermIsStudentT) {
    MarginalSpec m;
    m.location = 1.5;
    m.scales = {2.0};
    m.dof = {4.5};
    const double y = 0.2;
    const double z = (y - 1.5) / 2.0;
    const double expected = std::tgamma(2.75) / (std::sqrt(4.5 * std::numbers::pi) * std::tgamma(2.25)) *
                            std::pow(1 + z * z / 4.5, -2.75) / 2.0;
    EXPECT_NEAR(marginal_pdf(m, y), expected, 1e-14);
}

TEST(Marginal, CdfMatchesIntegratedDensity) {
    const MarginalSpec m = two_terms(1.0, 3.0);
    boost::math::quadrature::tanh_sinh<double> ts;
    for (double y : {-4.0, -0.5, 2.0}) {
        const double expected = ts.integrate([](double u) { return odd_df_pdf(OddDfPair::t1_t3, u); },
                                             -std::numeric_limits<double>::infinity(), y);
        EXPECT_NEAR(marginal_cdf(m, y), expected, 1e-9) << y;
    }
    EXPECT_EQ(marginal_cdf(m, 0.0), 0.5);
}

TEST(Marginal, StandardizedScalesAreStandardDeviations) {
    MarginalSpec m;
    m.scales = {1.0, 2.0};
    m.dof = {5.0, 9.0};
    m.standardized = true;
    EXPECT_NEAR(marginal_variance(m), 5.0, 1e-14);
    const std::vector<double> raw = m.raw_scales();
    EXPECT_NEAR(raw[0], std::sqrt(3.0 / 5.0), 1e-15);
    EXPECT_NEAR(raw[1], 2.0 * std::sqrt(7.0 / 9.0), 1e-15);
}

TEST(Marginal, MomentsFromTerms) {
    const MarginalSpec m = two_terms(6.0, 10.0, 1.0, 0.5);
    const MarginalMoments mm = marginal_moments(m);
    const double v1 = 6.0 / 4.0;
    const double v2 = 0.25 * 10.0 / 8.0;
    EXPECT_NEAR(mm.variance, v1 + v2, 1e-14);
    // Fourth moment of a t: 3 nu^2 / ((nu-2)(nu-4)).
    const double m4 = 3 * 36.0 / 8.0 + 0.0625 * 3 * 100.0 / 48.0 + 6 * v1 * v2;
    EXPECT_NEAR(mm.excess_kurtosis, m4 / std::pow(v1 + v2, 2) - 3.0, 1e-12);
    EXPECT_NEAR(even_central_moment(m, 2), m4, 1e-12);
    EXPECT_NEAR(even_central_moment(m, 1), v1 + v2, 1e-14);
}

TEST(Marginal, MomentsRequireEnoughDof) {
    EXPECT_THROW(marginal_moments(two_terms(4.0, 10.0)), DomainError);
    EXPECT_THROW(marginal_variance(two_terms(2.0, 10.0)), DomainError);
    EXPECT_THROW(fractional_moment(two_terms(1.5, 10.0), 1.5), DomainError);
}

TEST(Marginal, FractionalMomentSingleTerm) {
    MarginalSpec m;
    m.scales = {1.3};
    m.dof = {5.0};
    for (double r : {0.5, 1.0, 2.5, 3.3})
        EXPECT_NEAR(fractional_moment(m, r), std::pow(1.3, r) * t_abs_moment(5.0, r), 1e-7 * t_abs_moment(5.0, r))
            << r;
}

TEST(Marginal, FractionalMomentNearTheDofBound) {
    for (auto [nu, r] : {std::pair{4.0, 3.96}, {2.5, 2.475}, {8.0, 7.2}, {1.0, 0.99}, {9.5, 8.55}}) {
        MarginalSpec m;
        m.scales = {0.7};
        m.dof = {nu};
        const double expected = std::pow(0.7, r) * t_abs_moment(nu, r);
        EXPECT_NEAR(fractional_moment(m, r), expected, 1e-8 * expected) << nu << " " << r;
    }
}

TEST(Marginal, FractionalMomentSimpleCases) {
    MarginalSpec g;
    g.scales = {1.0};
    g.dof = {kGaussianDof};
    EXPECT_NEAR(fractional_moment(g, 1.0), std::sqrt(2.0 / std::numbers::pi), 1e-12);
    MarginalSpec t;
    t.scales = {1.0};
    t.dof = {5.0};
    EXPECT_NEAR(fractional_moment(t, 2.0), 5.0 / 3.0, 1e-14);
}

TEST(Marginal, FractionalMomentMonteCarlo) {
    // nu = (5, 7), scales (1, 2), r = 1.5 against 10^6 draws.
    const CTSpec spec({1, 1}, {5.0, 7.0}, Vector::Zero(2), Matrix::Identity(2, 2));
    const Matrix draws = sample(spec, 1000000, 11);
    const Eigen::ArrayXd y = draws.col(0).array() + 2.0 * draws.col(1).array();
    const Eigen::ArrayXd z = y.abs().pow(1.5);
    const double mean = z.mean();
    const double se = std::sqrt((z - mean).square().mean() / z.size());
    const double exact = fractional_moment(two_terms(5.0, 7.0, 1.0, 2.0), 1.5);
    EXPECT_NEAR(exact, mean, 4.0 * se);
}

TEST(Marginal, FractionalMomentTwoTerms) {
    // Gaussian + t_3: E|Y| by direct integration of |y| f(y) with f from the convolution.
    const MarginalSpec m = two_terms(kGaussianDof, 3.0);
    boost::math::quadrature::tanh_sinh<double> ts;
    auto f = [&](double y) {
        return ts.integrate(
            [&](double u) {
                const double n = std::exp(-0.5 * u * u) / std::sqrt(2 * std::numbers::pi);
                const double v = y - u;
                return n * 6.0 * std::sqrt(3.0) / (std::numbers::pi * std::pow(3.0 + v * v, 2));
            },
            -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
    };
    const double expected = 2.0 * ts.integrate([&](double y) { return y * f(y); }, 0.0,
                                               std::numeric_limits<double>::infinity());
    EXPECT_NEAR(fractional_moment(m, 1.0), expected, 1e-7);
    // Continuity across the even order.
    EXPECT_NEAR(fractional_moment(m, 2.0 - 1e-6), even_central_moment(m, 1), 1e-4);
}

TEST(Marginal, MarginalOfProjectsColumns) {
    Matrix xi(3, 3);
    xi << 0.6, 0.3, 0.1, 0.5, 0.7, 0.2, 0.4, 0.2, 0.8;
    Vector mu(3);
    mu << 0.1, 0.2, 0.3;
    const CTSpec spec({1, 2}, {4.0, 8.0}, mu, xi);
    Vector beta(3);
    beta << 1.0, -1.0, 0.5;
    const MarginalSpec m = marginal_of(spec, beta);
    const Vector b = xi.transpose() * beta;
    EXPECT_NEAR(m.location, 0.1 - 0.2 + 0.15, 1e-15);
    EXPECT_NEAR(m.scales[0], std::abs(b(0)), 1e-15);
    EXPECT_NEAR(m.scales[1], b.tail(2).norm(), 1e-15);
    EXPECT_THROW(marginal_of(spec, Vector::Zero(3)), DomainError);
}

TEST(Marginal, CharacteristicFunction) {
    EXPECT_NEAR(t_char_fn(1.0, 2.0), std::exp(-2.0), 1e-15);
    EXPECT_NEAR(t_char_fn(3.0, 0.5), (1 + std::sqrt(3.0) * 0.5) * std::exp(-std::sqrt(3.0) * 0.5), 1e-15);
    EXPECT_NEAR(t_char_fn(kGaussianDof, 1.5), std::exp(-1.125), 1e-15);
    // Bessel branch agrees with the closed form as nu passes an odd integer.
    EXPECT_NEAR(t_char_fn(5.0 + 1e-9, 0.7), t_char_fn(5.0, 0.7), 1e-8);
}

TEST(Marginal, QuadratureFailureIsReported) {
    // Tiny total scale with a small abscissa cap: the envelope never decays.
    MarginalSpec m = two_terms(1.0, 3.0, 1e-6, 1e-6);
    QuadratureConfig q;
    q.max_abscissa = 10.0;
    EXPECT_THROW(marginal_pdf(m, 0.0, q), QuadratureError);
}

TEST(Marginal, InvalidSpecs) {
    EXPECT_THROW(marginal_pdf(two_terms(kGaussianDof, kGaussianDof), 0.0), DomainError);
    EXPECT_THROW(marginal_pdf(two_terms(3.0, 4.0, 0.0, 0.0), 0.0), DomainError);
    EXPECT_THROW(marginal_pdf(two_terms(-1.0, 4.0), 0.0), DomainError);
    MarginalSpec s = two_terms(2.0, 4.0);
    s.standardized = true;
    EXPECT_THROW(s.validate(), DomainError);
}
