#include "convot/approximation.hpp"

#include "convot/optimize.hpp"
#include "convot/special.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace convot {

double TApprox::variance() const {
    if (is_gaussian(dof)) return scale2;
    if (!(dof > 2.0)) throw DomainError("variance undefined for dof <= 2");
    return scale2 * dof / (dof - 2.0);
}

double TApprox::log_pdf(double y) const {
    const double s = std::sqrt(scale2);
    return student_t_log_pdf((y - location) / s, dof) - std::log(s);
}

double TApprox::pdf(double y) const { return std::exp(log_pdf(y)); }

double TApprox::cdf(double y) const { return student_t_cdf((y - location) / std::sqrt(scale2), dof); }

double TApprox::quantile(double p) const { return location + std::sqrt(scale2) * student_t_quantile(p, dof); }

TApprox moment_match_t(const MarginalSpec& m) {
    for (std::size_t k = 0; k < m.dof.size(); ++k)
        if (m.scales[k] > 0.0 && !is_gaussian(m.dof[k]) && !(m.dof[k] > 4.0))
            throw DomainError("moment_match_t: term " + std::to_string(k + 1) + " has dof <= 4");
    const MarginalMoments mom = marginal_moments(m);
    TApprox out;
    out.location = m.location;
    if (mom.excess_kurtosis > 0.0) {
        out.dof = 4.0 + 6.0 / mom.excess_kurtosis;
        out.scale2 = mom.variance * (out.dof - 2.0) / out.dof;
    } else {
        out.dof = kGaussianDof;
        out.scale2 = mom.variance;
    }
    return out;
}

namespace {

// Quadrature nodes for integrals against the marginal density: y = location +/- c sinh(u).
struct DensityGrid {
    std::vector<double> y;
    std::vector<double> wg;  // weight * g(y)
    double entropy_part = 0.0;  // sum of weight * g log g
};

DensityGrid make_grid(const MarginalSpec& m, const QuadratureConfig& q) {
    m.validate();
    double c = 0.0;
    for (double r : m.raw_scales()) c += r * r;
    c = std::sqrt(c);
    const double g0 = marginal_pdf(m, m.location, q);
    // Truncate where g falls below 1e-14 of its peak.
    double span = c;
    while (marginal_pdf(m, m.location + span, q) > 1e-14 * g0) {
        span *= 2.0;
        if (span > 1e8 * c) break;
    }
    const double umax = std::asinh(span / c);
    constexpr int kPanels = 24;
    using Gauss = boost::math::quadrature::gauss<double, 20>;
    const auto& abs = Gauss::abscissa();
    const auto& wts = Gauss::weights();
    DensityGrid grid;
    const double h = umax / kPanels;
    for (int p = 0; p < kPanels; ++p) {
        const double mid = (p + 0.5) * h;
        for (std::size_t i = 0; i < abs.size(); ++i) {
            for (int sign : {-1, 1}) {
                if (abs[i] == 0.0 && sign < 0) continue;
                const double u = mid + sign * 0.5 * h * abs[i];
                const double w = 0.5 * h * wts[i] * c * std::cosh(u);
                for (int side : {-1, 1}) {
                    const double y = m.location + side * c * std::sinh(u);
                    const double g = marginal_pdf(m, y, q);
                    if (!(g > 0.0)) continue;
                    grid.y.push_back(y);
                    grid.wg.push_back(w * g);
                    grid.entropy_part += w * g * std::log(g);
                }
            }
        }
    }
    return grid;
}

double grid_klic(const DensityGrid& grid, const TApprox& a) {
    double cross = 0.0;
    for (std::size_t i = 0; i < grid.y.size(); ++i) cross += grid.wg[i] * a.log_pdf(grid.y[i]);
    return grid.entropy_part - cross;
}

}  // namespace

double klic(const MarginalSpec& m, const TApprox& a, const QuadratureConfig& q) {
    return grid_klic(make_grid(m, q), a);
}

KLFit kl_best_t(const MarginalSpec& m, const QuadratureConfig& q) {
    const DensityGrid grid = make_grid(m, q);
    TApprox start;
    bool have_mm = true;
    try {
        start = moment_match_t(m);
    } catch (const DomainError&) {
        have_mm = false;
    }
    if (!have_mm || is_gaussian(start.dof) || start.dof > 1e6) {
        double s2 = 0.0, nu = 1e6;
        const std::vector<double> raw = m.raw_scales();
        for (std::size_t k = 0; k < raw.size(); ++k) {
            s2 += raw[k] * raw[k];
            if (raw[k] > 0.0 && !is_gaussian(m.dof[k])) nu = std::min(nu, m.dof[k]);
        }
        start = {m.location, s2, std::max(nu, 2.5)};
    }
    // phi = (mu, log sigma, log(nu - 2)).
    const Objective obj = [&](const Vector& phi, Vector& grad) {
        const double mu = phi(0);
        const double sigma = std::exp(phi(1));
        const double nu = 2.0 + std::exp(phi(2));
        if (!std::isfinite(sigma) || !std::isfinite(nu)) throw DomainError("kl_best_t: parameters overflow");
        const double base = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                            0.5 * std::log(nu * std::numbers::pi) - std::log(sigma);
        const double dnu_base = 0.5 * digamma(0.5 * (nu + 1.0)) - 0.5 * digamma(0.5 * nu) - 0.5 / nu;
        double cross = 0.0, g_mu = 0.0, g_sigma = 0.0, g_nu = 0.0;
        for (std::size_t i = 0; i < grid.y.size(); ++i) {
            const double z = (grid.y[i] - mu) / sigma;
            const double z2 = z * z;
            const double l = std::log1p(z2 / nu);
            const double w = grid.wg[i];
            cross += w * (base - 0.5 * (nu + 1.0) * l);
            const double ratio = (nu + 1.0) / (nu + z2);
            g_mu += w * ratio * z / sigma;
            g_sigma += w * (-1.0 + ratio * z2) / sigma;
            g_nu += w * (dnu_base - 0.5 * l + 0.5 * ratio * z2 / nu);
        }
        grad.resize(3);
        grad << -g_mu, -g_sigma * sigma, -g_nu * (nu - 2.0);
        return grid.entropy_part - cross;
    };
    Vector phi0(3);
    phi0 << start.location, 0.5 * std::log(start.scale2), std::log(std::max(start.dof - 2.0, 1e-8));
    LbfgsOptions lo;
    lo.max_iterations = 500;
    lo.gradient_tolerance = 1e-10;
    lo.parameter_tolerance = 1e-14;
    const LbfgsResult r = minimize_lbfgs(obj, phi0, lo);
    KLFit out;
    out.klic_moment_match = have_mm ? grid_klic(grid, moment_match_t(m)) : std::numeric_limits<double>::quiet_NaN();
    out.approx = {r.x(0), std::exp(2.0 * r.x(1)), 2.0 + std::exp(r.x(2))};
    out.klic = r.value;
    out.iterations = r.iterations;
    if (!r.converged && r.gradient.lpNorm<Eigen::Infinity>() > 1e-7)
        throw ConvergenceError("kl_best_t: no convergence after " + std::to_string(r.iterations) +
                                   " iterations (gradient norm " +
                                   std::to_string(r.gradient.lpNorm<Eigen::Infinity>()) + ")",
                               r.x, r.value);
    return out;
}

RiskMeasures var_es(const TApprox& a, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("var_es: alpha must lie in (0, 1)");
    if (!is_gaussian(a.dof) && !(a.dof > 1.0)) throw DomainError("var_es: expected shortfall needs dof > 1");
    const double sigma = std::sqrt(a.scale2);
    const double t = student_t_quantile(alpha, a.dof);
    RiskMeasures out;
    out.var = a.location + sigma * t;
    const double tail = is_gaussian(a.dof) ? student_t_pdf(t, a.dof)
                                           : (a.dof + t * t) / (a.dof - 1.0) * student_t_pdf(t, a.dof);
    out.es = a.location - sigma * tail / alpha;
    return out;
}

}  // namespace convot
