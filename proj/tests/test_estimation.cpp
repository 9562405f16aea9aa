#include "convot/distribution.hpp"
#include "convot/estimation.hpp"
#include "convot/likelihood.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace convot;

namespace {

CTSpec trivariate() {
    Matrix xi(3, 3);
    xi << 0.6, 0.2, 0.1, 0.3, 0.7, 0.2, 0.2, 0.2, 0.8;
    return CTSpec({1, 2}, {4.0, 8.0}, Vector::Zero(3), canonicalize(xi, {1, 2}));
}

ClusterStructure structure(std::vector<int> sizes, Restriction r = Restriction::just_identified,
                           std::vector<int> blocks = {}) {
    ClusterStructure s;
    s.cluster_sizes = std::move(sizes);
    s.restriction = r;
    s.blocks = std::move(blocks);
    return s;
}

Matrix sqrtm(const Matrix& s) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    return eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

TEST(Estimation, GaussianSingleClusterIsClosedForm) {
    Matrix xi(2, 2);
    xi << 1.0, 0.4, 0.4, 0.8;
    const CTSpec truth({2}, {kGaussianDof}, Vector::Ones(2), xi);
    const Matrix y = sample(truth, 500, 3);
    const FitResult fit = fit_mle(y, structure({2}), {kGaussianDof});
    const Vector mean = y.colwise().mean();
    const Matrix centered = y.rowwise() - mean.transpose();
    const Matrix s = centered.transpose() * centered / y.rows();
    EXPECT_LT((fit.spec.location() - mean).norm(), 1e-8);
    EXPECT_LT((fit.spec.xi() - sqrtm(s)).norm(), 1e-7);
    EXPECT_EQ(fit.param_count, 5);
    EXPECT_TRUE(fit.diagnostics.converged);
}

TEST(Estimation, StationaryPointOfTheLikelihood) {
    const Matrix y = sample(trivariate(), 1500, 5);
    const FitResult fit = fit_mle(y, structure({1, 2}), {});
    ASSERT_TRUE(fit.diagnostics.converged);
    // Central differences of the log-likelihood in raw coordinates vanish at the optimum
    // along directions that keep the canonical form (location and dof).
    const double base = loglik(fit.spec, y);
    for (int i = 0; i < 3; ++i) {
        Vector mu = fit.spec.location();
        const double h = 1e-5;
        mu(i) += h;
        const double up = loglik(fit.spec.with_location(mu), y);
        mu(i) -= 2 * h;
        const double down = loglik(fit.spec.with_location(mu), y);
        EXPECT_NEAR((up - down) / (2 * h), 0.0, 1e-3);
    }
    // Random perturbations of Xi never improve the fit.
    std::mt19937_64 gen(1);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 20; ++rep) {
        Matrix d(3, 3);
        for (int i = 0; i < 9; ++i) d(i) = 1e-3 * z(gen);
        EXPECT_LE(loglik(fit.spec.with_xi(fit.spec.xi() + d), y), base + 1e-8);
    }
}

TEST(Estimation, RecoversTheTruth) {
    const CTSpec truth = trivariate();
    const Matrix y = sample(truth, 4000, 7);
    const FitResult fit = fit_mle(y, structure({1, 2}), {});
    ASSERT_TRUE(fit.diagnostics.converged);
    EXPECT_TRUE(fit.diagnostics.hessian_negative_definite);
    const Matrix err = fit.spec.xi() - truth.xi();
    for (int i = 0; i < 9; ++i) {
        const ParameterEstimate& e = fit.estimates[3 + i];
        EXPECT_LT(std::abs(err(i % 3, i / 3)), 5 * e.se_sandwich) << e.name;
    }
    EXPECT_NEAR(fit.spec.dof()[0], 4.0, 1.5);
    EXPECT_EQ(fit.estimates.back().name, "1/nu[2]");
}

TEST(Estimation, RestrictionsAreNested) {
    const Matrix y = sample(trivariate(), 1000, 9);
    const double just = fit_mle(y, structure({1, 2}), {}).loglik;
    const double sym = fit_mle(y, structure({1, 2}, Restriction::symmetric_xi), {}).loglik;
    const FitResult basym = fit_mle(y, structure({1, 2}, Restriction::block_asymmetric), {});
    const FitResult block = fit_mle(y, structure({1, 2}, Restriction::block), {});
    EXPECT_GE(just, sym - 1e-6);
    EXPECT_GE(just, basym.loglik - 1e-6);
    EXPECT_GE(basym.loglik, block.loglik - 1e-6);
    EXPECT_GE(sym, block.loglik - 1e-6);
    // Blocks (1, 2): diag 2, within 1, between 2 (asymmetric) or 1 (symmetric); mu 3, dof 2.
    EXPECT_EQ(basym.param_count, 3 + 5 + 2);
    EXPECT_EQ(block.param_count, 3 + 4 + 2);
}

TEST(Estimation, ClusterOrderOfTheStructureDoesNotMatter) {
    const Matrix y = sample(trivariate(), 1000, 11);
    const FitResult a = fit_mle(y, structure({1, 2}), {});
    const FitResult b = fit_mle(y, structure({2, 1}), {});
    EXPECT_NEAR(a.loglik, b.loglik, 1e-7);
    EXPECT_EQ(a.spec.cluster_sizes(), b.spec.cluster_sizes());
    EXPECT_LT((a.spec.xi() - b.spec.xi()).norm(), 1e-5);
}

TEST(Estimation, MultistartAgreesOnAWellPosedProblem) {
    const Matrix y = sample(trivariate(), 1000, 13);
    FitOptions one;
    one.multistart = 1;
    FitOptions three;
    three.multistart = 3;
    const FitResult a = fit_mle(y, structure({1, 2}), {}, one);
    const FitResult b = fit_mle(y, structure({1, 2}), {}, three);
    EXPECT_NEAR(a.loglik, b.loglik, 1e-7);
    EXPECT_EQ(b.diagnostics.start_logliks.size(), 3u);
    FitOptions threaded = three;
    threaded.workers = 3;
    const FitResult c = fit_mle(y, structure({1, 2}), {}, threaded);
    EXPECT_EQ(b.loglik, c.loglik);
    EXPECT_EQ(b.spec.xi(), c.spec.xi());
}

TEST(Estimation, FixedLocationAndGaussianCluster) {
    Matrix xi(3, 3);
    xi << 1.0, 0.2, 0.0, 0.1, 1.0, 0.3, 0.0, 0.2, 1.0;
    const CTSpec truth({1, 2}, {3.0, kGaussianDof}, Vector::Zero(3), canonicalize(xi, {1, 2}));
    const Matrix y = sample(truth, 800, 15);
    FitOptions opts;
    opts.estimate_location = false;
    const FitResult fit = fit_mle(y, structure({1, 2}), {std::nan(""), kGaussianDof}, opts);
    // Xi has 9 - 1 free entries (symmetric 2x2 diagonal block), plus one finite dof.
    EXPECT_EQ(fit.param_count, 8 + 1);
    EXPECT_EQ(fit.spec.location(), Vector::Zero(3));
    EXPECT_TRUE(std::isinf(fit.spec.dof()[1]) || std::isinf(fit.spec.dof()[0]));
}

TEST(Estimation, StandardizedFitMatchesPlainFit) {
    const Matrix y = sample(trivariate(), 1000, 17);
    FitOptions opts;
    opts.standardized = true;
    const FitResult s = fit_mle(y, structure({1, 2}), {}, opts);
    const FitResult p = fit_mle(y, structure({1, 2}), {});
    EXPECT_NEAR(s.loglik, p.loglik, 1e-6);
    EXPECT_TRUE(s.spec.standardized());
}

TEST(Estimation, InvalidInputs) {
    Matrix y = sample(trivariate(), 50, 1);
    EXPECT_THROW(fit_mle(y, structure({1, 1}), {}), DomainError);
    y(3, 1) = std::nan("");
    EXPECT_THROW(fit_mle(y, structure({1, 2}), {}), DomainError);
    FitOptions bad;
    bad.multistart = 0;
    EXPECT_THROW(bad.validate(), DomainError);
}

TEST(Estimation, BicDefinition) {
    EXPECT_THROW(bic(0.0, 1, 0), DomainError);
    EXPECT_NEAR(bic(0.0, 1, 7), std::log(7.0), 1e-15);
    EXPECT_NEAR(bic(-10.0, 3, 100), 20.0 + 3 * std::log(100.0), 1e-12);
}

TEST(Estimation, DecompositionIndependentCoordinates) {
    // Diagonal Xi with singleton clusters: the joint density is the product of marginals.
    Matrix xi = Matrix::Zero(3, 3);
    xi.diagonal() << 1.0, 2.0, 0.5;
    const CTSpec spec({1, 1, 1}, {3.0, 5.0, 9.0}, Vector::Zero(3), xi);
    const Matrix y = sample(spec, 50, 19);
    const LoglikParts parts = loglik_decompose(spec, y);
    EXPECT_NEAR(parts.copula, 0.0, 1e-8);
    EXPECT_NEAR(parts.total, parts.marginal + parts.copula, 1e-12);
}

TEST(Estimation, DecompositionGaussianCopula) {
    Matrix xi(2, 2);
    xi << 1.0, 0.5, 0.5, 1.0;
    const CTSpec spec({2}, {kGaussianDof}, Vector::Zero(2), xi);
    const Matrix y = sample(spec, 40, 21);
    const Matrix sigma = xi * xi.transpose();
    const double rho = sigma(0, 1) / std::sqrt(sigma(0, 0) * sigma(1, 1));
    double expected = 0.0;
    for (int t = 0; t < y.rows(); ++t) {
        const double a = y(t, 0) / std::sqrt(sigma(0, 0));
        const double b = y(t, 1) / std::sqrt(sigma(1, 1));
        expected += -0.5 * std::log(1 - rho * rho) -
                    (rho * rho * (a * a + b * b) - 2 * rho * a * b) / (2 * (1 - rho * rho));
    }
    EXPECT_NEAR(loglik_decompose(spec, y).copula, expected, 1e-8);
}

TEST(Estimation, HarFeaturesUseDisjointWindows) {
    Matrix panel(30, 1);
    for (int t = 0; t < 30; ++t) panel(t, 0) = t;
    const HARDataset d = build_har_features(panel);
    ASSERT_EQ(d.y.rows(), 8);
    // First usable t = 22: daily y_21, weekly mean of y_17..y_20, monthly mean of y_0..y_16.
    EXPECT_EQ(d.y(0, 0), 22.0);
    EXPECT_EQ(d.daily(0, 0), 21.0);
    EXPECT_DOUBLE_EQ(d.weekly(0, 0), 18.5);
    EXPECT_DOUBLE_EQ(d.monthly(0, 0), 8.0);
    EXPECT_EQ(d.names[0], "y1");
    EXPECT_THROW(build_har_features(Matrix::Zero(22, 1)), DomainError);
}

TEST(Estimation, HarConstantPanelIsCollinear) {
    const HARDataset d = build_har_features(Matrix::Constant(40, 2, 1.5));
    EXPECT_EQ(d.weekly(5, 1), 1.5);
    EXPECT_THROW(fit_har_two_stage(d, structure({1, 1}), {}, FitOptions{}), DomainError);
}

TEST(Estimation, HarTwoStageRecoversCoefficients) {
    // Two series with standardized t errors.
    Matrix xi(2, 2);
    xi << 0.3, 0.05, 0.05, 0.25;
    const CTSpec errors({1, 1}, {6.0, 10.0}, Vector::Zero(2), xi, true);
    const int total = 3000;
    const Matrix v = sample(errors, total, 23);
    const Vector beta(Eigen::Vector3d(0.557, 0.312, 0.088));
    Matrix panel = Matrix::Constant(total, 2, -0.432 / (1 - beta.sum()));
    for (int t = 22; t < total; ++t) {
        const Eigen::RowVectorXd w = panel.middleRows(t - 5, 4).colwise().mean();
        const Eigen::RowVectorXd m = panel.middleRows(t - 22, 17).colwise().mean();
        panel.row(t) = Eigen::RowVectorXd::Constant(2, -0.432) + beta(0) * panel.row(t - 1) + beta(1) * w +
                       beta(2) * m + v.row(t);
    }
    const HARDataset d = build_har_features(panel.bottomRows(total - 200));
    const HARResult r = fit_har_two_stage(d, structure({1, 1}), {}, FitOptions{});
    for (const HARSeries& s : r.series) {
        EXPECT_LT(std::abs(s.coef(1) - beta(0)), 4 * s.se(1)) << s.name;
        EXPECT_LT(std::abs(s.coef(2) - beta(1)), 4 * s.se(2)) << s.name;
        EXPECT_NEAR(s.persistence, s.coef.tail(3).sum(), 1e-15);
        EXPECT_NEAR(s.mean, s.coef(0) / (1 - s.persistence), 1e-12);
    }
    EXPECT_EQ(r.param_count_total, r.param_count_distribution + 8);
    EXPECT_NEAR(r.residuals.colwise().mean().norm(), 0.0, 1e-10);
    EXPECT_TRUE(r.fit.spec.location().isZero(0.0));
}
