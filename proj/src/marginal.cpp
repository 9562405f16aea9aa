#include "convot/marginal.hpp"

#include "convot/quadrature.hpp"
#include "convot/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace convot {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kE = std::numbers::e;

// Largest odd dof handled by the half-integer closed form.
constexpr int kMaxClosedFormDof = 199;

bool is_odd_integer(double nu) {
    if (!(nu <= kMaxClosedFormDof)) return false;
    const double r = std::round(nu);
    return r == nu && static_cast<long>(r) % 2 == 1;
}

double log_t_char_fn(double nu, double s) {
    if (is_gaussian(nu)) return -0.5 * s * s;
    const double z = std::sqrt(nu) * std::abs(s);
    if (z < 1e-250) return 0.0;
    if (is_odd_integer(nu)) {
        // phi = exp(-z) * sum_j c_j z^(m-j), c_j = (m+j)!/(j!(m-j)!) 2^(m-j) m!/(2m)!.
        const int m = static_cast<int>(nu - 1) / 2;
        const double log_base = std::lgamma(m + 1.0) - std::lgamma(2.0 * m + 1.0);
        // The constant coefficient c_m is 1; summing the rest separately keeps log1p accurate for small z.
        double poly = 0.0;
        for (int j = 0; j < m; ++j) {
            const double c = std::exp(std::lgamma(m + j + 1.0) - std::lgamma(j + 1.0) - std::lgamma(m - j + 1.0) +
                                      (m - j) * std::log(2.0) + log_base);
            poly = (poly + c) * z;
        }
        return -z + std::log1p(poly);
    }
    const double v = 0.5 * nu;
    return log_bessel_k(v, z) + v * std::log(z) - std::lgamma(v) - (v - 1.0) * std::log(2.0);
}

double log_envelope(const std::vector<double>& raw, const std::vector<double>& dof, double s) {
    double acc = 0.0;
    for (std::size_t k = 0; k < raw.size(); ++k)
        if (raw[k] > 0.0) acc += log_t_char_fn(dof[k], raw[k] * s);
    return acc;
}

// Smallest s (up to the cap) with envelope below `threshold`.
double truncation_point(const std::vector<double>& raw, const std::vector<double>& dof, double threshold,
                        double cap) {
    const double log_thr = std::log(threshold);
    double total = 0.0;
    for (double w : raw) total += w;
    double hi = 1.0 / total;
    while (log_envelope(raw, dof, hi) >= log_thr) {
        if (hi >= cap) {
            throw QuadratureError("characteristic function envelope does not decay below tolerance before the "
                                  "maximum abscissa",
                                  std::exp(log_envelope(raw, dof, cap)), threshold);
        }
        hi = std::min(2.0 * hi, cap);
    }
    double lo = 0.0;
    for (int i = 0; i < 60 && hi - lo > 1e-3 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (log_envelope(raw, dof, mid) >= log_thr ? lo : hi) = mid;
    }
    return hi;
}

int positive_terms(const MarginalSpec& m) {
    int count = 0;
    for (double w : m.scales)
        if (w > 0.0) ++count;
    return count;
}

std::vector<double> oscillation_breaks(double d, double upper, double phase) {
    std::vector<double> breaks;
    if (d == 0.0) return breaks;
    const double period = kPi / std::abs(d);
    for (double j = phase;; j += 1.0) {
        const double s = j * period;
        if (s >= upper) break;
        if (s > 0.0) breaks.push_back(s);
        if (breaks.size() > 2000000) throw DomainError("oscillation segmentation exceeds two million segments");
    }
    return breaks;
}

// Split of one characteristic function factor near the origin: phi(w s) = sum_j poly[j] s^(2j) + rest,
// with poly holding the terms up to s^(2q). Uses the ascending series of K_v, valid for z = sqrt(nu) w s <= 1.
struct FactorSplit {
    std::vector<double> poly;
    double rest = 0.0;
};

FactorSplit split_factor(double nu, double w, double s, int q) {
    FactorSplit out;
    out.poly.assign(q + 1, 0.0);
    if (w == 0.0) {
        out.poly[0] = 1.0;
        return out;
    }
    if (is_gaussian(nu)) {
        // exp(-x) with x = w^2 s^2 / 2.
        const double x = 0.5 * w * w * s * s;
        double c = 1.0;
        for (int j = 0; j <= q; ++j) {
            out.poly[j] = c * std::pow(0.5 * w * w, j);
            c /= -(j + 1.0);
        }
        double term = std::pow(-x, q + 1) * std::exp(-std::lgamma(q + 2.0));
        for (int j = q + 1; j < q + 60 && term != 0.0; ++j) {
            out.rest += term;
            if (std::abs(term) < 1e-18 * std::abs(out.rest)) break;
            term *= -x / (j + 1.0);
        }
        return out;
    }
    const double v = 0.5 * nu;
    const double c2 = 0.25 * nu * w * w;  // (z/2)^2 = c2 s^2
    const double h = c2 * s * s;
    const double log_h = std::log(h);
    const long n = std::lround(v);
    const bool integer_order = std::abs(v - static_cast<double>(n)) < 1e-12 && n >= 1;
    // Analytic terms (-1)^j Gamma(v-j)/(Gamma(v) j!) h^j, finitely many when v is an integer.
    auto analytic = [&](int j) {
        const double sign_g = (j % 2 == 0 ? 1.0 : -1.0) * (std::tgamma(v - j) < 0.0 ? -1.0 : 1.0);
        return sign_g * std::exp(std::lgamma(v - j) - std::lgamma(v) - std::lgamma(j + 1.0));
    };
    for (int j = 0; j <= q; ++j) out.poly[j] = analytic(j) * std::pow(c2, j);
    double rest = 0.0;
    const int last_analytic = integer_order ? static_cast<int>(n) - 1 : q + 40;
    for (int j = q + 1; j <= last_analytic; ++j) {
        const double t = analytic(j) * std::exp(j * log_h);
        rest += t;
        if (!integer_order && std::abs(t) < 1e-18 * std::abs(rest)) break;
    }
    if (integer_order) {
        // (-1)^n 2/(n-1)! sum_k h^(n+k)/(k!(n+k)!) [-log(z/2) + (psi(k+1) + psi(n+k+1))/2].
        const double sign = n % 2 == 0 ? 1.0 : -1.0;
        const double log_half_z = 0.5 * log_h;
        for (int k = 0; k < 60; ++k) {
            const double mag = std::exp(std::log(2.0) - std::lgamma(static_cast<double>(n)) + (n + k) * log_h -
                                        std::lgamma(k + 1.0) - std::lgamma(n + k + 1.0));
            const double t = sign * mag * (-log_half_z + 0.5 * (digamma(k + 1.0) + digamma(n + k + 1.0)));
            rest += t;
            if (std::abs(t) < 1e-18 * std::abs(rest)) break;
        }
    } else {
        // -pi/(sin(v pi) Gamma(v)) sum_j h^(j+v)/(j! Gamma(j+v+1)).
        const double pre = -kPi / (std::sin(v * kPi) * std::tgamma(v));
        for (int j = 0; j < 60; ++j) {
            const double t = pre * std::exp((j + v) * log_h - std::lgamma(j + 1.0) - std::lgamma(j + v + 1.0));
            rest += t;
            if (std::abs(t) < 1e-18 * std::abs(rest)) break;
        }
    }
    out.rest = rest;
    return out;
}

// Product of the factors split as (polynomial up to s^(2q)) + remainder. Returns phi(s) - T_q(s), where T_q is the
// Taylor polynomial of the product, without cancellation; `taylor` receives T_q's coefficients in s^2.
double product_remainder(const std::vector<double>& raw, const std::vector<double>& dof, double s, int q,
                         std::vector<double>* taylor = nullptr) {
    const std::size_t kc = raw.size();
    std::vector<FactorSplit> f;
    f.reserve(kc);
    for (std::size_t k = 0; k < kc; ++k) f.push_back(split_factor(dof[k], raw[k], s, q));
    // Polynomial product, full degree.
    std::vector<double> prod{1.0};
    for (const FactorSplit& fs : f) {
        std::vector<double> next(prod.size() + q, 0.0);
        for (std::size_t i = 0; i < prod.size(); ++i)
            for (int j = 0; j <= q; ++j) next[i + j] += prod[i] * fs.poly[j];
        prod = next;
    }
    if (taylor) taylor->assign(prod.begin(), prod.begin() + q + 1);
    const double t = s * s;
    double high = 0.0;
    for (std::size_t i = prod.size(); i-- > static_cast<std::size_t>(q + 1);) high = high * t + prod[i];
    high *= std::pow(t, q + 1);
    // Telescoping sum of remainder cross terms.
    auto poly_at = [&](const FactorSplit& fs) {
        double v = 0.0;
        for (int j = q; j >= 0; --j) v = v * t + fs.poly[j];
        return v;
    };
    double cross = 0.0;
    for (std::size_t k = 0; k < kc; ++k) {
        if (f[k].rest == 0.0) continue;
        double term = f[k].rest;
        for (std::size_t j = 0; j < kc; ++j) {
            if (j == k) continue;
            const double pj = poly_at(f[j]);
            term *= j < k ? pj + f[j].rest : pj;
        }
        cross += term;
    }
    return high + cross;
}

}  // namespace

void MarginalSpec::validate() const {
    if (scales.size() != dof.size() || scales.empty())
        throw DomainError("marginal: scales and dof must be non-empty and of equal length");
    int gaussian = 0;
    bool positive = false;
    for (std::size_t k = 0; k < scales.size(); ++k) {
        if (!(scales[k] >= 0.0) || !std::isfinite(scales[k]))
            throw DomainError("marginal: scales must be finite and non-negative");
        if (scales[k] > 0.0) positive = true;
        if (is_gaussian(dof[k]))
            ++gaussian;
        else if (!(dof[k] > 0.0) || !std::isfinite(dof[k]))
            throw DomainError("marginal: degrees of freedom must be positive");
        if (standardized && !is_gaussian(dof[k]) && !(dof[k] > 2.0))
            throw DomainError("marginal: standardized terms require dof > 2");
    }
    if (!positive) throw DomainError("marginal: at least one scale must be positive");
    if (gaussian > 1) throw DomainError("marginal: at most one Gaussian term is allowed");
    if (!std::isfinite(location)) throw DomainError("marginal: location must be finite");
}

std::vector<double> MarginalSpec::raw_scales() const {
    std::vector<double> out(scales);
    if (!standardized) return out;
    for (std::size_t k = 0; k < out.size(); ++k)
        if (!is_gaussian(dof[k])) out[k] *= std::sqrt((dof[k] - 2.0) / dof[k]);
    return out;
}

std::vector<double> MarginalSpec::standardized_scales() const {
    std::vector<double> out(scales);
    if (standardized) return out;
    for (std::size_t k = 0; k < out.size(); ++k) {
        if (is_gaussian(dof[k])) continue;
        if (!(dof[k] > 2.0))
            throw DomainError("variance undefined: term " + std::to_string(k + 1) + " has dof <= 2");
        out[k] *= std::sqrt(dof[k] / (dof[k] - 2.0));
    }
    return out;
}

MarginalSpec marginal_of(const CTSpec& spec, const Vector& beta) {
    if (beta.size() != spec.dim()) throw DomainError("marginal_of: beta length does not match the specification");
    if (beta.isZero(0.0)) throw DomainError("marginal_of: beta must be non-zero");
    const Vector b = spec.xi().transpose() * beta;
    const ClusterIndex& idx = spec.index();
    MarginalSpec m;
    m.location = beta.dot(spec.location());
    m.dof = spec.dof();
    m.standardized = spec.standardized();
    for (int k = 0; k < idx.clusters(); ++k) m.scales.push_back(b.segment(idx.offset(k), idx.size(k)).norm());
    m.validate();
    return m;
}

double t_char_fn(double nu, double s) {
    if (!std::isfinite(s)) throw DomainError("t_char_fn: argument must be finite");
    if (!is_gaussian(nu) && !(nu > 0.0)) throw DomainError("t_char_fn: dof must be positive");
    return std::exp(log_t_char_fn(nu, s));
}

std::complex<double> marginal_cf(const MarginalSpec& m, double s) {
    const std::vector<double> raw = m.raw_scales();
    const double env = std::exp(log_envelope(raw, m.dof, s));
    return std::polar(env, s * m.location);
}

double marginal_pdf(const MarginalSpec& m, double y, const QuadratureConfig& q) {
    m.validate();
    const std::vector<double> raw = m.raw_scales();
    const double d = y - m.location;
    if (positive_terms(m) == 1) {
        for (std::size_t k = 0; k < raw.size(); ++k)
            if (raw[k] > 0.0) return student_t_pdf(d / raw[k], m.dof[k]) / raw[k];
    }
    const double upper = truncation_point(raw, m.dof, q.atol * 1e-2, q.max_abscissa);
    const std::vector<double> breaks =
        q.segment_oscillations ? oscillation_breaks(d, upper, 0.5) : std::vector<double>{};
    auto integrand = [&](double s) { return std::cos(s * d) * std::exp(log_envelope(raw, m.dof, s)); };
    const QuadratureResult r = integrate_gk(integrand, 0.0, upper, q.atol * kPi, q.rtol,
                                           static_cast<int>(breaks.size()) + 5000, breaks);
    if (!r.converged) throw QuadratureError("marginal_pdf: quadrature did not converge", r.value / kPi, r.error / kPi);
    return r.value / kPi;
}

double marginal_cdf(const MarginalSpec& m, double y, const QuadratureConfig& q) {
    m.validate();
    const std::vector<double> raw = m.raw_scales();
    const double d = y - m.location;
    if (d == 0.0) return 0.5;
    if (positive_terms(m) == 1) {
        for (std::size_t k = 0; k < raw.size(); ++k)
            if (raw[k] > 0.0) return student_t_cdf(d / raw[k], m.dof[k]);
    }
    const double upper = truncation_point(raw, m.dof, q.atol * 1e-2, q.max_abscissa);
    const std::vector<double> breaks =
        q.segment_oscillations ? oscillation_breaks(d, upper, 1.0) : std::vector<double>{};
    auto integrand = [&](double s) {
        if (s == 0.0) return d;
        return std::sin(s * d) / s * std::exp(log_envelope(raw, m.dof, s));
    };
    const QuadratureResult r = integrate_gk(integrand, 0.0, upper, q.atol * kPi, q.rtol,
                                           static_cast<int>(breaks.size()) + 5000, breaks);
    if (!r.converged)
        throw QuadratureError("marginal_cdf: quadrature did not converge", 0.5 + r.value / kPi, r.error / kPi);
    return std::clamp(0.5 + r.value / kPi, 0.0, 1.0);
}

double voigt_pdf(double y) {
    const std::complex<double> z(1.0 / std::sqrt(2.0), y / std::sqrt(2.0));
    return erfcx(z).real() / std::sqrt(2.0 * kPi);
}

double odd_df_pdf(OddDfPair pair, double y) {
    const double y2 = y * y;
    switch (pair) {
        case OddDfPair::t1_t3: {
            const double s3 = std::sqrt(3.0);
            const double den = y2 + 4.0 + 2.0 * s3;
            return (y2 + 16.0 + 10.0 * s3) / (kPi * den * den);
        }
        case OddDfPair::t1_t5: {
            const double s5 = std::sqrt(5.0);
            const double inv = 1.0 / (y2 + 2.0 * (3.0 + s5));
            const double u = y2 * inv;
            return (u * u + (2.0 * (11.0 + 3.0 * s5) * u + (8.0 / 3.0) * (131.0 + 61.0 * s5) * inv) * inv) * inv /
                   kPi;
        }
    }
    throw DomainError("odd_df_pdf: unsupported pair");
}

double marginal_variance(const MarginalSpec& m) {
    m.validate();
    double var = 0.0;
    for (double w : m.standardized_scales()) var += w * w;
    return var;
}

MarginalMoments marginal_moments(const MarginalSpec& m) {
    const double var = marginal_variance(m);
    const std::vector<double> w = m.standardized_scales();
    double acc = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        if (is_gaussian(m.dof[k]) || w[k] == 0.0) continue;
        if (!(m.dof[k] > 4.0))
            throw DomainError("kurtosis undefined: term " + std::to_string(k + 1) + " has dof <= 4");
        acc += std::pow(w[k], 4) * 6.0 / (m.dof[k] - 4.0);
    }
    return {var, acc / (var * var)};
}

double even_central_moment(const MarginalSpec& m, int k) {
    m.validate();
    if (k < 0) throw DomainError("even_central_moment: order must be non-negative");
    const std::vector<double> raw = m.raw_scales();
    std::vector<double> total(k + 1, 0.0);
    total[0] = 1.0;
    for (std::size_t c = 0; c < raw.size(); ++c) {
        const double nu = m.dof[c];
        std::vector<double> term(k + 1, 0.0);
        for (int j = 0; j <= k; ++j) {
            if (raw[c] == 0.0) {
                term[j] = j == 0 ? 1.0 : 0.0;
                continue;
            }
            double log_m;
            if (is_gaussian(nu)) {
                log_m = std::lgamma(2.0 * j + 1.0) - std::lgamma(j + 1.0) - j * std::log(2.0);
            } else {
                if (!(nu > 2.0 * j))
                    throw DomainError("moment of order " + std::to_string(2 * j) + " diverges for dof " +
                                      std::to_string(nu));
                log_m = j * std::log(nu) + std::lgamma(j + 0.5) + std::lgamma(0.5 * nu - j) -
                        0.5 * std::log(kPi) - std::lgamma(0.5 * nu);
            }
            term[j] = std::exp(log_m + 2.0 * j * std::log(raw[c]));
        }
        std::vector<double> next(k + 1, 0.0);
        for (int i = 0; i <= k; ++i)
            for (int j = 0; j <= i; ++j) {
                const double binom = std::exp(std::lgamma(2.0 * i + 1.0) - std::lgamma(2.0 * j + 1.0) -
                                              std::lgamma(2.0 * (i - j) + 1.0));
                next[i] += binom * term[j] * total[i - j];
            }
        total = next;
    }
    return total[k];
}

double fractional_moment(const MarginalSpec& m, double r, const QuadratureConfig& q) {
    m.validate();
    if (!(r > 0.0)) throw DomainError("fractional_moment: order must be positive");
    double nu_min = kGaussianDof;
    for (std::size_t k = 0; k < m.dof.size(); ++k)
        if (m.scales[k] > 0.0) nu_min = std::min(nu_min, m.dof[k]);
    if (!(r < nu_min)) throw DomainError("fractional_moment: moment of order r >= min dof diverges");
    const double rounded = std::round(r);
    if (rounded == r && static_cast<long>(rounded) % 2 == 0)
        return even_central_moment(m, static_cast<int>(rounded) / 2);

    const std::vector<double> raw = m.raw_scales();
    const int p = static_cast<int>(std::floor(0.5 * r));
    std::vector<double> taylor(p + 1);
    for (int k = 0; k <= p; ++k)
        taylor[k] = (k % 2 == 0 ? 1.0 : -1.0) * even_central_moment(m, k) / std::tgamma(2.0 * k + 1.0);

    // Far from the origin the p-term bracket is evaluated directly.
    auto bracket = [&](double s) {
        const double log_env = log_envelope(raw, m.dof, s);
        if (p == 0) return -std::expm1(log_env);
        double poly = 0.0;
        for (int k = p; k >= 1; --k) poly = (poly + taylor[k]) * s * s;
        return poly - std::expm1(log_env);
    };

    // Near the origin extra existing moments are subtracted as well, which makes the integrand vanish faster;
    // their integrals over (0, s_c) are added back in closed form.
    int deg = p;
    while (deg < p + 3 && 2.0 * (deg + 1) < nu_min) ++deg;
    double series_cap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < raw.size(); ++k) {
        if (raw[k] == 0.0) continue;
        series_cap = std::min(series_cap, is_gaussian(m.dof[k]) ? std::sqrt(2.0) / raw[k]
                                                                  : 1.0 / (std::sqrt(m.dof[k]) * raw[k]));
    }
    const double upper = truncation_point(raw, m.dof, q.atol * 1e-2, q.max_abscissa);
    const double s_c = std::min(series_cap, upper);
    std::vector<double> taylor_q;
    product_remainder(raw, m.dof, s_c, deg, &taylor_q);
    // Integrand ~ s^(a - r - 1) below s_lo; that piece is extrapolated.
    const double a = std::min(2.0 * deg + 2.0, nu_min);
    // Bounded so that s^-r and the series argument stay representable.
    const double log_s_lo = std::max({std::log(s_c) + std::log(1e-16) / (a - r), -600.0 / r, -340.0});
    const double s_lo = std::min(std::exp(log_s_lo), 0.5 * s_c);

    auto near = [&](double u) {
        const double s = std::exp(u);
        return -std::exp(-r * u) * product_remainder(raw, m.dof, s, deg);
    };
    auto far = [&](double u) {
        const double s = std::exp(u);
        return std::exp(-r * u) * bracket(s);
    };
    std::vector<double> near_breaks;
    for (double u = std::log(s_lo) + 1.0; u < std::log(s_c); u += 1.0) near_breaks.push_back(u);
    std::vector<double> far_breaks;
    for (double u = std::log(s_c) + 1.0; u < std::log(upper); u += 1.0) far_breaks.push_back(u);
    const QuadratureResult body_near =
        integrate_gk(near, std::log(s_lo), std::log(s_c), 0.5 * q.atol, q.rtol, 20000, near_breaks);
    const QuadratureResult body_far = s_c < upper ? integrate_gk(far, std::log(s_c), std::log(upper), 0.5 * q.atol,
                                                                 q.rtol, 20000, far_breaks)
                                                  : QuadratureResult{0.0, 0.0, 0, true};
    if (!body_near.converged || !body_far.converged)
        throw QuadratureError(std::string("fractional_moment: quadrature did not converge (") +
                                  (body_near.converged ? "far" : "near") + " range)",
                              body_near.value + body_far.value,
                              body_near.error + body_far.error);

    // Tail above the truncation point: only the polynomial part survives.
    double tail = 0.0;
    for (int k = 0; k <= p; ++k) tail += taylor[k] * std::pow(upper, 2.0 * k - r) / (r - 2.0 * k);

    double added = 0.0;
    for (int k = p + 1; k <= deg; ++k) added += taylor_q[k] * std::pow(s_c, 2.0 * k - r) / (2.0 * k - r);
    // With nu_min an even integer the leading term is s^a (alpha + beta log s); otherwise a pure power.
    const double b_exp = a - r;
    const double r0 = -product_remainder(raw, m.dof, s_lo, deg) * std::pow(s_lo, -a);
    double head;
    const bool log_term = a == nu_min && std::round(0.5 * nu_min) == 0.5 * nu_min;
    if (log_term) {
        const double r1 = -product_remainder(raw, m.dof, s_lo / kE, deg) * std::pow(s_lo / kE, -a);
        const double beta = r0 - r1;
        const double alpha = r0 - beta * std::log(s_lo);
        head = std::pow(s_lo, b_exp) * (alpha / b_exp + beta * (std::log(s_lo) / b_exp - 1.0 / (b_exp * b_exp)));
    } else {
        head = r0 * std::pow(s_lo, b_exp) / b_exp;
    }

    const double body_value = body_near.value + body_far.value - added;
    const double integral = body_value + tail + head;
    double constant;
    if (p == 0) {
        constant = r == 1.0 ? 2.0 / kPi
                            : r * (1.0 - r) / (std::tgamma(2.0 - r) * std::sin(0.5 * kPi * (1.0 - r)));
    } else {
        constant = 2.0 * std::tgamma(1.0 + r) * std::sin(0.5 * kPi * r) / kPi;
    }
    return constant * integral;
}

}  // namespace convot
