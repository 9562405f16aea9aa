#include "convot/optimize.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace convot {

namespace {

struct Eval {
    double value;
    Vector grad;
    bool ok;
};

Eval safe_eval(const Objective& f, const Vector& x) {
    Eval e{std::numeric_limits<double>::infinity(), Vector(), false};
    try {
        e.value = f(x, e.grad);
        e.ok = std::isfinite(e.value) && e.grad.allFinite();
    } catch (const DomainError&) {
        e.ok = false;
    }
    if (!e.ok) e.value = std::numeric_limits<double>::infinity();
    return e;
}

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& f, const Vector& x0, const LbfgsOptions& opts) {
    LbfgsResult out;
    out.x = x0;
    Eval cur = safe_eval(f, x0);
    out.evaluations = 1;
    if (!cur.ok) throw DomainError("minimize_lbfgs: objective is not finite at the starting point");
    std::deque<Vector> s_hist, y_hist;
    std::deque<double> rho_hist;
    const int n = static_cast<int>(x0.size());
    for (out.iterations = 0; out.iterations < opts.max_iterations; ++out.iterations) {
        if (cur.grad.lpNorm<Eigen::Infinity>() < opts.gradient_tolerance) {
            out.converged = true;
            break;
        }
        // Two-loop recursion.
        Vector q = cur.grad;
        const int m = static_cast<int>(s_hist.size());
        std::vector<double> alpha(m);
        for (int i = m - 1; i >= 0; --i) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        double gamma = 1.0;
        if (m > 0) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        else gamma = 1.0 / std::max(1.0, cur.grad.norm());
        Vector d = gamma * q;
        for (int i = 0; i < m; ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(d);
            d += s_hist[i] * (alpha[i] - beta);
        }
        d = -d;
        double slope = cur.grad.dot(d);
        if (!(slope < 0.0)) {
            // Not a descent direction: reset memory and use steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = -cur.grad / std::max(1.0, cur.grad.norm());
            slope = cur.grad.dot(d);
        }
        double step = 1.0;
        Eval next{};
        Vector xn(n);
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            xn = out.x + step * d;
            next = safe_eval(f, xn);
            ++out.evaluations;
            if (next.ok && next.value <= cur.value + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= next.ok ? 0.5 : 0.25;
        }
        if (!accepted) break;
        const Vector s = xn - out.x;
        const Vector y = next.grad - cur.grad;
        const double sy = s.dot(y);
        const double rel = s.lpNorm<Eigen::Infinity>() / std::max(1.0, out.x.lpNorm<Eigen::Infinity>());
        out.x = xn;
        cur = std::move(next);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        if (rel < opts.parameter_tolerance) {
            out.converged = cur.grad.lpNorm<Eigen::Infinity>() < opts.gradient_tolerance;
            ++out.iterations;
            break;
        }
    }
    if (!out.converged && cur.grad.lpNorm<Eigen::Infinity>() < opts.gradient_tolerance) out.converged = true;
    out.value = cur.value;
    out.gradient = cur.grad;
    return out;
}

}  // namespace convot
