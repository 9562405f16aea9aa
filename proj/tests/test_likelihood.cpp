#include "convot/distribution.hpp"
#include "convot/identification.hpp"
#include "convot/likelihood.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace convot;

namespace {

CTSpec example_spec(bool standardized) {
    Matrix xi(3, 3);
    xi << 0.6, 0.3, 0.1, 0.5, 0.7, 0.2, 0.4, 0.2, 0.8;
    Vector mu(3);
    mu << 0.1, 0.2, 0.3;
    return CTSpec({1, 2}, {4.0, 8.0}, mu, xi, standardized);
}

// Rebuilds a spec from the raw parameter vector.
CTSpec from_raw(const CTSpec& like, const Vector& theta) {
    const int n = like.dim();
    std::vector<double> dof = like.dof();
    int pos = n + n * n;
    for (double& nu : dof)
        if (!is_gaussian(nu)) nu = theta(pos++);
    const Matrix xi = Eigen::Map<const Matrix>(theta.data() + n, n, n);
    return CTSpec(like.cluster_sizes(), dof, theta.head(n), xi, like.standardized());
}

Vector to_raw(const CTSpec& s) {
    const int n = s.dim();
    Vector theta(raw_param_count(s));
    theta.head(n) = s.location();
    theta.segment(n, n * n) = Eigen::Map<const Vector>(s.xi().data(), n * n);
    int pos = n + n * n;
    for (double nu : s.dof())
        if (!is_gaussian(nu)) theta(pos++) = nu;
    return theta;
}

void check_derivatives(const CTSpec& spec, const Vector& y) {
    const Vector theta = to_raw(spec);
    const DerivativeBundle d = derivatives(spec, y, true);
    const double h = 1e-5;
    for (int i = 0; i < theta.size(); ++i) {
        Vector tp = theta, tm = theta;
        tp(i) += h;
        tm(i) -= h;
        const double fd = (log_density(from_raw(spec, tp), y) - log_density(from_raw(spec, tm), y)) / (2 * h);
        EXPECT_NEAR(d.score(i), fd, 1e-6 * (1 + std::abs(fd))) << "score " << i;
        const Vector gp = score(from_raw(spec, tp), y);
        const Vector gm = score(from_raw(spec, tm), y);
        for (int j = 0; j < theta.size(); ++j) {
            const double fdh = (gp(j) - gm(j)) / (2 * h);
            EXPECT_NEAR(d.hessian(j, i), fdh, 1e-5 * (1 + std::abs(fdh))) << "hessian " << j << "," << i;
        }
    }
    EXPECT_NEAR(d.loglik, log_density(spec, y), 1e-12);
}

}  // namespace

TEST(Likelihood, ScoreAndHessianMatchFiniteDifferencesRaw) {
    const CTSpec spec = example_spec(false);
    Vector y(3);
    y << 0.9, -0.4, 1.7;
    check_derivatives(spec, y);
}

TEST(Likelihood, ScoreAndHessianMatchFiniteDifferencesStandardized) {
    const CTSpec spec = example_spec(true);
    Vector y(3);
    y << -1.2, 0.3, 0.5;
    check_derivatives(spec, y);
}

TEST(Likelihood, GaussianClusterHasNoDofCoordinate) {
    Matrix xi(3, 3);
    xi << 1.0, 0.2, 0.0, 0.1, 0.9, 0.3, -0.2, 0.1, 1.1;
    const CTSpec spec({2, 1}, {5.0, kGaussianDof}, Vector::Zero(3), xi, false);
    EXPECT_EQ(raw_param_count(spec), 3 + 9 + 1);
    Vector y(3);
    y << 0.4, 0.1, -0.8;
    check_derivatives(spec, y);
}

TEST(Likelihood, SampleSumsAgreeWithPerObservation) {
    const CTSpec spec = example_spec(false);
    const Matrix data = sample(spec, 50, 7);
    Vector s_sum;
    const double ll = loglik_and_score(spec, data, s_sum);
    const SampleDerivatives sd = sample_derivatives(spec, data, true);
    EXPECT_NEAR(ll, loglik(spec, data), 1e-9);
    EXPECT_NEAR(ll, sd.loglik, 1e-9);
    Vector acc = Vector::Zero(s_sum.size());
    Matrix hacc = Matrix::Zero(s_sum.size(), s_sum.size());
    for (int t = 0; t < data.rows(); ++t) {
        const DerivativeBundle d = derivatives(spec, data.row(t).transpose(), true);
        acc += d.score;
        hacc += d.hessian;
    }
    EXPECT_LT((acc - s_sum).norm(), 1e-9);
    EXPECT_LT((acc - sd.score_sum).norm(), 1e-9);
    EXPECT_LT((hacc - sd.hessian_sum).norm(), 1e-8);
}

TEST(Likelihood, FisherMatchesMonteCarloOuterProduct) {
    // Dof above 8 so that the squared scores have finite variance and the MC standard error is meaningful.
    for (bool standardized : {false, true}) {
        const CTSpec base = example_spec(standardized);
        const CTSpec spec = base.with_dof({9.0, 12.0});
        const Matrix data = sample(spec, 100000, 11);
        const int p = raw_param_count(spec);
        Matrix mean = Matrix::Zero(p, p), sq = Matrix::Zero(p, p);
        for (int t = 0; t < data.rows(); ++t) {
            const Vector s = score(spec, data.row(t).transpose());
            const Matrix o = s * s.transpose();
            mean += o;
            sq += o.cwiseProduct(o);
        }
        const double n = static_cast<double>(data.rows());
        mean /= n;
        sq /= n;
        const Matrix info = fisher_information(spec);
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j) {
                const double se = std::sqrt(std::max(sq(i, j) - mean(i, j) * mean(i, j), 0.0) / n);
                EXPECT_NEAR(info(i, j), mean(i, j), 5.0 * se + 1e-9) << i << "," << j << " std=" << standardized;
            }
        EXPECT_LT((info - info.transpose()).norm(), 1e-12);
    }
}

TEST(Likelihood, CommutationMapsVecToVecTranspose) {
    Matrix z(2, 3);
    z << 1, 2, 3, 4, 5, 6;
    const Matrix zt = z.transpose();
    const Vector v = commutation(2, 3) * Eigen::Map<const Vector>(z.data(), 6);
    EXPECT_LT((v - Eigen::Map<const Vector>(zt.data(), 6)).norm(), 1e-15);
}

TEST(Identification, JacobianMatchesFiniteDifferenceOfCanonicalize) {
    Matrix xi(4, 4);
    xi << 0.9, 0.2, 0.1, 0.3, -0.1, 1.1, 0.4, 0.2, 0.3, 0.1, 0.8, -0.2, 0.2, -0.3, 0.1, 1.2;
    const std::vector<int> sizes = {2, 1, 1};
    // Rotate the first diagonal block so the point is not already canonical.
    Matrix rot(2, 2);
    const double a = 0.4;
    rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    xi.leftCols(2) = xi.leftCols(2) * rot;
    xi.col(2) *= -1.0;
    const IdentifiedJacobian jac = jacobian_identified(xi, sizes);
    const double h = 1e-6;
    for (int c = 0; c < 16; ++c) {
        Matrix p = xi, m = xi;
        p.data()[c] += h;
        m.data()[c] -= h;
        const Matrix d = (canonicalize(p, sizes) - canonicalize(m, sizes)) / (2 * h);
        for (int r = 0; r < 16; ++r) EXPECT_NEAR(jac.m(r, c), d.data()[r], 1e-7) << r << "," << c;
    }
}

TEST(Identification, JacobianIsProjectorAtCanonicalPoint) {
    Matrix xi(3, 3);
    xi << 0.6, 0.3, 0.1, 0.3, 0.7, 0.2, 0.4, 0.2, 0.8;
    const IdentifiedJacobian jac = jacobian_identified(xi, {2, 1});
    // Applying canonicalization twice is the same as once: M^2 = M at a canonical point.
    EXPECT_LT((jac.m * jac.m - jac.m).norm(), 1e-10);
}

TEST(Layout, ReportedHessianMatchesFiniteDifferences) {
    const CTSpec spec = example_spec(false).with_xi(
        canonicalize(example_spec(false).xi(), {1, 2}));
    ClusterStructure cs{{1, 2}, Restriction::just_identified, {}};
    const ParamLayout layout(cs, spec.dof(), true);
    EXPECT_EQ(layout.size(), 3 + 8 + 2);
    const Matrix data = sample(spec, 20, 3);
    const Vector theta = layout.pack(spec);
    EXPECT_LT((layout.unpack(theta, spec).xi() - spec.xi()).norm(), 1e-14);
    auto ll = [&](const Vector& th) { return loglik(layout.unpack(th, spec), data); };
    auto rs = [&](const Vector& th) {
        const CTSpec s = layout.unpack(th, spec);
        return layout.reported_score(s, sample_derivatives(s, data, false).score_sum);
    };
    const SampleDerivatives sd = sample_derivatives(spec, data, true);
    const Vector g = layout.reported_score(spec, sd.score_sum);
    const Matrix h = layout.reported_hessian(spec, sd.score_sum, sd.hessian_sum);
    const double step = 1e-6;
    for (int i = 0; i < theta.size(); ++i) {
        Vector p = theta, m = theta;
        p(i) += step;
        m(i) -= step;
        EXPECT_NEAR(g(i), (ll(p) - ll(m)) / (2 * step), 1e-4 * (1 + std::abs(g(i))));
        const Vector col = (rs(p) - rs(m)) / (2 * step);
        for (int j = 0; j < theta.size(); ++j) EXPECT_NEAR(h(j, i), col(j), 1e-3 * (1 + std::abs(col(j))));
    }
}
