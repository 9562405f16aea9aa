#include "convot/special.hpp"

#include "convot/types.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace convot {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kEps = 1e-16;

// Taylor coefficients of 1/Gamma(z) = sum_k c[k] z^(k+1).
constexpr std::array<double, 26> kRecipGamma = {
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001,
};

// gam1 = (1/G(1-m) - 1/G(1+m)) / (2m), gam2 = (1/G(1-m) + 1/G(1+m)) / 2, |m| <= 1/2.
void temme_gammas(double mu, double& gam1, double& gam2) {
    const double m2 = mu * mu;
    gam1 = 0.0;
    gam2 = 0.0;
    double p = 1.0;
    for (std::size_t k = 0; k + 1 < kRecipGamma.size(); k += 2) {
        gam2 += kRecipGamma[k] * p;
        gam1 -= kRecipGamma[k + 1] * p;
        p *= m2;
    }
}

// Returns log K_mu(x) and the ratio K_{mu+1}(x)/K_mu(x) for |mu| <= 1/2.
void bessel_k_low_order(double mu, double x, double& log_kmu, double& ratio) {
    if (x < 2.0) {
        const double x2 = 0.5 * x;
        const double pimu = kPi * mu;
        const double fact = std::abs(pimu) < kEps ? 1.0 : pimu / std::sin(pimu);
        double d = -std::log(x2);
        double e = mu * d;
        const double fact2 = std::abs(e) < kEps ? 1.0 : std::sinh(e) / e;
        double gam1, gam2;
        temme_gammas(mu, gam1, gam2);
        const double gampl = gam2 - mu * gam1;
        const double gammi = gam2 + mu * gam1;
        double ff = fact * (gam1 * std::cosh(e) + gam2 * fact2 * d);
        double sum = ff;
        e = std::exp(e);
        double p = 0.5 * e / gampl;
        double q = 0.5 / (e * gammi);
        double c = 1.0;
        d = x2 * x2;
        double sum1 = p;
        for (int i = 1; i < 10000; ++i) {
            ff = (i * ff + p + q) / (i * static_cast<double>(i) - mu * mu);
            c *= d / i;
            p /= i - mu;
            q /= i + mu;
            const double del = c * ff;
            sum += del;
            sum1 += c * (p - i * ff);
            if (std::abs(del) < std::abs(sum) * kEps) break;
        }
        log_kmu = std::log(sum);
        ratio = (sum1 / sum) * (2.0 / x);
        return;
    }
    // Steed's continued fraction; log K is returned including the exp(-x) factor.
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d;
    double delh = d;
    double q1 = 0.0;
    double q2 = 1.0;
    const double a1 = 0.25 - mu * mu;
    double q = a1;
    double c = a1;
    double a = -a1;
    double s = 1.0 + q * delh;
    for (int i = 2; i < 100000; ++i) {
        a -= 2 * (i - 1);
        c = -a * c / i;
        const double qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        const double dels = q * delh;
        s += dels;
        if (std::abs(dels / s) < kEps) break;
    }
    h = a1 * h;
    log_kmu = 0.5 * std::log(kPi / (2.0 * x)) - x - std::log(s);
    ratio = (mu + x + 0.5 - h) / x;
}

// Debye uniform expansion of K_v(v t) for large order.
double log_bessel_k_debye(double v, double x) {
    const double t = x / v;
    const double root = std::sqrt(1.0 + t * t);
    const double p = 1.0 / root;
    const double eta = root + std::log(t / (1.0 + root));
    const double p2 = p * p;
    const double u1 = p * (3.0 - 5.0 * p2) / 24.0;
    const double u2 = p2 * (81.0 - 462.0 * p2 + 385.0 * p2 * p2) / 1152.0;
    const double u3 =
        p * p2 * (30375.0 - 369603.0 * p2 + 765765.0 * p2 * p2 - 425425.0 * p2 * p2 * p2) / 414720.0;
    const double p4 = p2 * p2;
    const double u4 = p4 *
                      (4465125.0 - 94121676.0 * p2 + 349922430.0 * p4 - 446185740.0 * p4 * p2 +
                       185910725.0 * p4 * p4) /
                      39813120.0;
    const double series = 1.0 - u1 / v + u2 / (v * v) - u3 / (v * v * v) + u4 / (v * v * v * v);
    return 0.5 * std::log(kPi / (2.0 * v)) - v * eta - 0.5 * std::log(root) + std::log(series);
}

std::vector<double> weideman_coefficients(int n) {
    const int m = 2 * n;
    const double l = std::sqrt(n / std::sqrt(2.0));
    std::vector<double> g(2 * m, 0.0);
    for (int k = -m + 1; k <= m - 1; ++k) {
        const double t = l * std::tan(0.5 * k * kPi / m);
        g[k + m] = std::exp(-t * t) * (l * l + t * t);
    }
    std::vector<double> a(n);
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int k = -m + 1; k <= m - 1; ++k) acc += g[k + m] * std::cos(kPi * (j + 1) * k / m);
        a[j] = acc / (2.0 * m);
    }
    return a;
}

constexpr int kWeidemanTerms = 40;

}  // namespace

double digamma(double x) {
    if (!(x > 0.0)) throw DomainError("digamma: argument must be positive");
    double acc = 0.0;
    while (x < 10.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double r = 1.0 / (x * x);
    const double tail =
        r * (1.0 / 12.0 -
             r * (1.0 / 120.0 -
                  r * (1.0 / 252.0 - r * (1.0 / 240.0 - r * (1.0 / 132.0 - r * (691.0 / 32760.0 - r / 12.0))))));
    return acc + std::log(x) - 0.5 / x - tail;
}

double trigamma(double x) {
    if (!(x > 0.0)) throw DomainError("trigamma: argument must be positive");
    double acc = 0.0;
    while (x < 10.0) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    const double r = 1.0 / (x * x);
    const double tail =
        1.0 / x + 0.5 * r +
        (r / x) * (1.0 / 6.0 -
                   r * (1.0 / 30.0 - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * (5.0 / 66.0 - r * (691.0 / 2730.0 - r * 7.0 / 6.0))))));
    return acc + tail;
}

double log_bessel_k(double v, double x) {
    if (!(x > 0.0)) throw DomainError("log_bessel_k: argument must be positive");
    v = std::abs(v);
    if (v > 1000.0) return log_bessel_k_debye(v, x);
    const int nl = static_cast<int>(v + 0.5);
    const double mu = v - nl;
    double log_k, ratio;
    bessel_k_low_order(mu, x, log_k, ratio);
    for (int i = 1; i <= nl; ++i) {
        log_k += std::log(ratio);
        ratio = (mu + i) * (2.0 / x) + 1.0 / ratio;
    }
    return log_k;
}

std::complex<double> faddeeva_w(std::complex<double> z) {
    static const std::vector<double> coeff = weideman_coefficients(kWeidemanTerms);
    if (z.imag() < 0.0) throw DomainError("faddeeva_w: requires Im z >= 0");
    const double l = std::sqrt(kWeidemanTerms / std::sqrt(2.0));
    const std::complex<double> iz(-z.imag(), z.real());
    const std::complex<double> den = l - iz;
    const std::complex<double> zz = (l + iz) / den;
    std::complex<double> poly = 0.0;
    for (int j = kWeidemanTerms - 1; j >= 0; --j) poly = poly * zz + coeff[j];
    return 2.0 * poly / (den * den) + (1.0 / std::sqrt(kPi)) / den;
}

std::complex<double> erfcx(std::complex<double> z) {
    return faddeeva_w(std::complex<double>(-z.imag(), z.real()));
}

double student_t_log_pdf(double x, double nu) {
    if (is_gaussian(nu)) return -0.5 * std::log(2.0 * kPi) - 0.5 * x * x;
    return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * kPi) -
           0.5 * (nu + 1.0) * std::log1p(x * x / nu);
}

double student_t_pdf(double x, double nu) { return std::exp(student_t_log_pdf(x, nu)); }

double student_t_cdf(double x, double nu) {
    if (is_gaussian(nu)) return 0.5 * std::erfc(-x / std::sqrt(2.0));
    if (x == 0.0) return 0.5;
    const double tail = 0.5 * boost::math::ibeta(0.5 * nu, 0.5, nu / (nu + x * x));
    return x < 0.0 ? tail : 1.0 - tail;
}

double student_t_quantile(double p, double nu) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("student_t_quantile: probability must lie in (0,1)");
    if (p == 0.5) return 0.0;
    double lo = -1.0;
    double hi = 1.0;
    while (student_t_cdf(lo, nu) > p) lo *= 2.0;
    while (student_t_cdf(hi, nu) < p) hi *= 2.0;
    for (int i = 0; i < 60 && hi - lo > 1e-3 * (1.0 + std::abs(lo)); ++i) {
        const double mid = 0.5 * (lo + hi);
        (student_t_cdf(mid, nu) < p ? lo : hi) = mid;
    }
    double x = 0.5 * (lo + hi);
    for (int i = 0; i < 50; ++i) {
        const double f = student_t_cdf(x, nu) - p;
        const double step = f / student_t_pdf(x, nu);
        double next = x - step;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (f < 0.0) lo = x; else hi = x;
        if (std::abs(next - x) <= 1e-15 * (1.0 + std::abs(x))) {
            x = next;
            break;
        }
        x = next;
    }
    return x;
}

}  // namespace convot
