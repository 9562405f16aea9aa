#include "convot/estimation.hpp"

#include "convot/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <utility>

namespace convot {

void FitOptions::validate() const {
    if (!(gradient_tolerance > 0.0) || !(parameter_tolerance > 0.0))
        throw DomainError("fit options: tolerances must be positive");
    if (max_iterations < 1) throw DomainError("fit options: max_iterations must be at least 1");
    if (multistart < 1) throw DomainError("fit options: multistart must be at least 1");
    if (workers < 1) throw DomainError("fit options: workers must be at least 1");
}

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Splits theta = (mu; p_xi; nu) against a layout and a template spec.
class Problem {
public:
    Problem(const Matrix& data, const ParamLayout& layout, const std::vector<double>& dof_template, bool standardized)
        : data_(data), layout_(layout), dof_(dof_template), standardized_(standardized) {
        n_ = layout.dim();
        const ClusterIndex idx(layout.structure().cluster_sizes);
        const int p_raw = n_ + n_ * n_ + layout.dof_size();
        b_ = Matrix::Zero(p_raw, layout.size());
        for (int i = 0; i < layout.location_size(); ++i) b_(i, i) = 1.0;
        b_.block(n_, layout.location_size(), n_ * n_, layout.xi_size()) = layout.xi_basis();
        for (int f = 0; f < layout.dof_size(); ++f) b_(n_ + n_ * n_ + f, layout.location_size() + layout.xi_size() + f) = 1.0;
        classify(idx);
    }

    int size() const { return layout_.size(); }
    double dof_floor() const { return standardized_ ? 2.0 : 0.0; }
    const Matrix& raw_map() const { return b_; }

    CTSpec spec(const Vector& theta) const {
        const int ls = layout_.location_size();
        const Vector mu = ls > 0 ? Vector(theta.head(n_)) : Vector(Vector::Zero(n_));
        const Vector vec_xi = layout_.xi_basis() * theta.segment(ls, layout_.xi_size());
        std::vector<double> dof = dof_;
        for (int f = 0; f < layout_.dof_size(); ++f) dof[layout_.finite_dof()[f]] = theta(ls + layout_.xi_size() + f);
        return CTSpec(layout_.structure().cluster_sizes, dof, mu, Eigen::Map<const Matrix>(vec_xi.data(), n_, n_),
                      standardized_);
    }

    Vector natural(const CTSpec& s) const {
        Vector theta(size());
        const int ls = layout_.location_size();
        if (ls > 0) theta.head(n_) = s.location();
        const Eigen::Map<const Vector> vec_xi(s.xi().data(), n_ * n_);
        const Matrix& e = layout_.xi_basis();
        theta.segment(ls, layout_.xi_size()) = (e.transpose() * e).ldlt().solve(e.transpose() * vec_xi);
        for (int f = 0; f < layout_.dof_size(); ++f) theta(ls + layout_.xi_size() + f) = s.dof()[layout_.finite_dof()[f]];
        return theta;
    }

    // Unconstrained coordinates phi <-> natural theta.
    Vector to_natural(const Vector& phi) const {
        Vector theta = phi;
        const int ls = layout_.location_size();
        for (const DiagBlock& blk : diag_) {
            const Matrix xkk = symmetric_expm(gamma_of(phi, blk));
            for (std::size_t c = 0; c < blk.cols.size(); ++c)
                theta(ls + blk.cols[c]) = xkk(blk.ij[c].first, blk.ij[c].second);
        }
        for (const BlockPiece& bp : blocks_) {
            const double a = phi(ls + bp.d_col);
            if (bp.w_col < 0) {
                theta(ls + bp.d_col) = std::exp(a);
            } else if (bp.cluster_size == 1) {
                theta(ls + bp.d_col) = std::exp(a);
            } else {
                const double l1 = std::exp(a);
                const double l2 = std::exp(phi(ls + bp.w_col));
                const double m = bp.cluster_size;
                theta(ls + bp.d_col) = (l1 + (m - 1.0) * l2) / m;
                theta(ls + bp.w_col) = (l1 - l2) / m;
            }
        }
        for (int f = 0; f < layout_.dof_size(); ++f) {
            const int r = ls + layout_.xi_size() + f;
            theta(r) = dof_floor() + std::exp(phi(r));
        }
        return theta;
    }

    // Throws DomainError when theta lies outside the parameterized region.
    Vector to_unconstrained(const Vector& theta) const {
        Vector phi = theta;
        const int ls = layout_.location_size();
        for (const DiagBlock& blk : diag_) {
            Matrix xkk(blk.size, blk.size);
            for (std::size_t c = 0; c < blk.cols.size(); ++c) {
                const auto [i, j] = blk.ij[c];
                xkk(i, j) = xkk(j, i) = theta(ls + blk.cols[c]);
            }
            const Matrix g = symmetric_logm(xkk);
            for (std::size_t c = 0; c < blk.cols.size(); ++c) phi(ls + blk.cols[c]) = g(blk.ij[c].first, blk.ij[c].second);
        }
        for (const BlockPiece& bp : blocks_) {
            const double d = theta(ls + bp.d_col);
            if (bp.w_col < 0 || bp.cluster_size == 1) {
                if (!(d > 0.0)) throw DomainError("block diagonal must be positive");
                phi(ls + bp.d_col) = std::log(d);
            } else {
                const double w = theta(ls + bp.w_col);
                const double m = bp.cluster_size;
                const double l1 = d + (m - 1.0) * w;
                const double l2 = d - w;
                if (!(l1 > 0.0) || !(l2 > 0.0)) throw DomainError("block diagonal is not positive definite");
                phi(ls + bp.d_col) = std::log(l1);
                phi(ls + bp.w_col) = std::log(l2);
            }
        }
        for (int f = 0; f < layout_.dof_size(); ++f) {
            const int r = ls + layout_.xi_size() + f;
            if (!(theta(r) > dof_floor())) throw DomainError("degrees of freedom out of range");
            phi(r) = std::log(theta(r) - dof_floor());
        }
        return phi;
    }

    // d(loglik)/d(phi) from d(loglik)/d(theta).
    Vector chain(const Vector& phi, const Vector& theta, const Vector& g_theta) const {
        Vector g = g_theta;
        const int ls = layout_.location_size();
        for (const DiagBlock& blk : diag_) {
            const Eigen::SelfAdjointEigenSolver<Matrix> eig(gamma_of(phi, blk));
            const Vector lam = eig.eigenvalues();
            const Matrix& q = eig.eigenvectors();
            Matrix gm(blk.size, blk.size);
            for (std::size_t c = 0; c < blk.cols.size(); ++c) {
                const auto [i, j] = blk.ij[c];
                const double v = g_theta(ls + blk.cols[c]);
                if (i == j) gm(i, i) = v;
                else gm(i, j) = gm(j, i) = 0.5 * v;
            }
            Matrix f(blk.size, blk.size);
            for (int a = 0; a < blk.size; ++a)
                for (int b = 0; b < blk.size; ++b) {
                    const double da = lam(a) - lam(b);
                    f(a, b) = std::abs(da) < 1e-10 ? std::exp(0.5 * (lam(a) + lam(b)))
                                                   : (std::exp(lam(a)) - std::exp(lam(b))) / da;
                }
            const Matrix d = q * f.cwiseProduct(q.transpose() * gm * q) * q.transpose();
            for (std::size_t c = 0; c < blk.cols.size(); ++c) {
                const auto [i, j] = blk.ij[c];
                g(ls + blk.cols[c]) = i == j ? d(i, i) : 2.0 * d(i, j);
            }
        }
        for (const BlockPiece& bp : blocks_) {
            const double gd = g_theta(ls + bp.d_col);
            const double ed = std::exp(phi(ls + bp.d_col));
            if (bp.w_col < 0 || bp.cluster_size == 1) {
                g(ls + bp.d_col) = gd * ed;
            } else {
                const double gw = g_theta(ls + bp.w_col);
                const double ew = std::exp(phi(ls + bp.w_col));
                const double m = bp.cluster_size;
                g(ls + bp.d_col) = (gd + gw) / m * ed;
                g(ls + bp.w_col) = (gd * (m - 1.0) - gw) / m * ew;
            }
        }
        for (int f = 0; f < layout_.dof_size(); ++f) {
            const int r = ls + layout_.xi_size() + f;
            g(r) = g_theta(r) * (theta(r) - dof_floor());
        }
        return g;
    }

    double loglik_grad(const Vector& theta, Vector& g_theta) const {
        Vector raw;
        const double ll = loglik_and_score(spec(theta), data_, raw);
        g_theta = b_.transpose() * raw;
        return ll;
    }

private:
    struct DiagBlock {
        int size = 0;
        std::vector<int> cols;
        std::vector<std::pair<int, int>> ij;
    };
    struct BlockPiece {
        int d_col = -1;
        int w_col = -1;
        int cluster_size = 1;
        bool seen = false;
    };

    Matrix gamma_of(const Vector& phi, const DiagBlock& blk) const {
        const int ls = layout_.location_size();
        Matrix g(blk.size, blk.size);
        for (std::size_t c = 0; c < blk.cols.size(); ++c) {
            const auto [i, j] = blk.ij[c];
            g(i, j) = g(j, i) = phi(ls + blk.cols[c]);
        }
        return g;
    }

    void classify(const ClusterIndex& idx) {
        const Matrix& e = layout_.xi_basis();
        const Restriction r = layout_.structure().restriction;
        auto first_entry = [&](int c) {
            int row = 0;
            while (e(row, c) == 0.0) ++row;
            return std::make_pair(row % n_, row / n_);
        };
        if (r == Restriction::just_identified || r == Restriction::symmetric_xi) {
            diag_.resize(idx.clusters());
            for (int k = 0; k < idx.clusters(); ++k) diag_[k].size = idx.size(k);
            for (int c = 0; c < e.cols(); ++c) {
                const auto [i, j] = first_entry(c);
                const int k = idx.cluster_of(i);
                if (idx.cluster_of(j) != k) continue;
                diag_[k].cols.push_back(c);
                diag_[k].ij.emplace_back(std::max(i, j) - idx.offset(k), std::min(i, j) - idx.offset(k));
            }
            return;
        }
        const std::vector<int> part = layout_.structure().block_partition();
        std::vector<int> block_of(n_);
        for (int b = 0, acc = 0; b < static_cast<int>(part.size()); ++b)
            for (int i = 0; i < part[b]; ++i) block_of[acc++] = b;
        blocks_.resize(part.size());
        for (int i = 0; i < n_; ++i) {
            BlockPiece& bp = blocks_[block_of[i]];
            const int m = idx.size(idx.cluster_of(i));
            if (bp.seen && bp.cluster_size != m)
                throw DomainError("block restriction: clusters inside a block must have equal sizes");
            bp.cluster_size = m;
            bp.seen = true;
        }
        for (int c = 0; c < e.cols(); ++c) {
            const auto [i, j] = first_entry(c);
            if (block_of[i] != block_of[j]) continue;
            BlockPiece& bp = blocks_[block_of[i]];
            if (i == j) bp.d_col = c;
            else bp.w_col = c;
        }
    }

    const Matrix& data_;
    const ParamLayout& layout_;
    std::vector<double> dof_;
    bool standardized_;
    int n_ = 0;
    Matrix b_;
    std::vector<DiagBlock> diag_;
    std::vector<BlockPiece> blocks_;
};

std::string format_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct StartOutcome {
    Vector theta;
    double loglik = -std::numeric_limits<double>::infinity();
    bool converged = false;
    int lbfgs_iterations = 0;
    int newton_steps = 0;
    double score_norm = kNan;
    bool hessian_nd = false;
    bool ok = false;
};

Matrix symmetric_sqrt(const Matrix& s) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    const Vector lam = eig.eigenvalues().cwiseMax(1e-12 * eig.eigenvalues().maxCoeff());
    return eig.eigenvectors() * lam.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

// Which columns of the symmetric scatter root seed each cluster: columns[i] is placed at position i.
// Start 0 hands out the columns in (size, dof) order, so the start does not depend on how the clusters
// are listed; later starts use a random cluster order.
std::vector<int> start_columns(const ClusterStructure& structure, const std::vector<double>& dof_init, int start,
                               std::uint64_t seed) {
    const ClusterIndex idx(structure.cluster_sizes);
    std::vector<int> columns(idx.dim());
    std::iota(columns.begin(), columns.end(), 0);
    if (structure.restriction != Restriction::just_identified || idx.clusters() == 1) return columns;
    std::vector<int> order(idx.clusters());
    std::iota(order.begin(), order.end(), 0);
    if (start == 0) {
        auto key = [&](int k) {
            const double nu = dof_init.empty() || std::isnan(dof_init[k]) ? -1.0 : dof_init[k];
            return std::pair<int, double>(idx.size(k), nu);
        };
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key(a) < key(b); });
    } else {
        std::mt19937_64 rng(seed ^ (0xD1B54A32D192ED03ULL * static_cast<std::uint64_t>(start)));
        std::shuffle(order.begin(), order.end(), rng);
    }
    int acc = 0;
    for (int k : order) {
        for (int i = 0; i < idx.size(k); ++i) columns[idx.offset(k) + i] = acc + i;
        acc += idx.size(k);
    }
    return columns;
}

// Moment-based start: returns (mu, xi, dof) before projection onto the restriction.
CTSpec initial_spec(const Matrix& data, const ClusterStructure& structure, const std::vector<double>& dof_init,
                    const FitOptions& opts, const std::vector<int>& columns) {
    const int n = static_cast<int>(data.cols());
    const double t = static_cast<double>(data.rows());
    const ClusterIndex idx(structure.cluster_sizes);
    Vector mu = opts.estimate_location ? Vector(data.colwise().mean().transpose()) : Vector(Vector::Zero(n));
    Matrix centered = data.rowwise() - mu.transpose();
    const Matrix cov = centered.transpose() * centered / t;
    std::vector<double> dof = dof_init;
    if (dof.empty()) dof.assign(idx.clusters(), std::numeric_limits<double>::quiet_NaN());
    {
        for (int k = 0; k < idx.clusters(); ++k) {
            if (!std::isnan(dof[k])) continue;
            double kappa = 0.0;
            for (int p = idx.offset(k); p < idx.offset(k) + idx.size(k); ++p) {
                const int i = columns[p];
                const double m2 = cov(i, i);
                const double m4 = centered.col(i).array().pow(4).mean();
                kappa += m4 / (m2 * m2) - 3.0;
            }
            kappa /= idx.size(k);
            const double nu = kappa > 0.0 ? 4.0 + 6.0 / kappa : 100.0;
            dof[k] = std::clamp(nu, 2.5, 100.0);
        }
    }
    // Location and scatter of a single multivariate t fitted by EM; stable where sample moments are not.
    double nu_em = kGaussianDof;
    for (double nu : dof) nu_em = std::min(nu_em, nu);
    Matrix scatter = cov;
    if (!is_gaussian(nu_em)) {
        for (int it = 0; it < 50; ++it) {
            const Eigen::LLT<Matrix> llt(scatter);
            if (llt.info() != Eigen::Success) break;
            const Matrix z = llt.matrixL().solve(centered.transpose());
            const Vector w = (nu_em + n) / (nu_em + z.colwise().squaredNorm().array());
            if (opts.estimate_location) {
                mu = data.transpose() * w / w.sum();
                centered = data.rowwise() - mu.transpose();
            }
            scatter = centered.transpose() * w.asDiagonal() * centered / t;
        }
    }
    const Matrix root = symmetric_sqrt(scatter);
    Matrix xi(n, n);
    for (int p = 0; p < n; ++p) xi.col(p) = root.col(columns[p]);
    // The EM scatter is a plain-t scale; the standardized form carries the variance instead.
    if (opts.standardized && !is_gaussian(nu_em)) xi *= std::sqrt(nu_em / (nu_em - 2.0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (idx.cluster_of(i) != idx.cluster_of(j)) xi(i, j) += 1e-3 * (i < j ? 1.0 : -1.0);
    return CTSpec(structure.cluster_sizes, dof, mu, xi, opts.standardized);
}

// Projects a spec onto the restriction and repairs diagonal blocks that left the admissible region.
Vector admissible_start(const Problem& prob, const ParamLayout& layout, const CTSpec& s) {
    Vector theta = prob.natural(s);
    const int ls = layout.location_size();
    for (int f = 0; f < layout.dof_size(); ++f) {
        double& nu = theta(ls + layout.xi_size() + f);
        nu = std::max(nu, prob.dof_floor() + 0.5);
    }
    for (int attempt = 0; attempt < 60; ++attempt) {
        try {
            const Vector phi = prob.to_unconstrained(theta);
            prob.spec(prob.to_natural(phi));
            return theta;
        } catch (const DomainError&) {
            // Shrink the off-diagonal parts of the Xi parameters towards the diagonal.
            const Vector vec_diag = Eigen::Map<const Vector>(Matrix(s.xi().diagonal().asDiagonal()).data(),
                                                             s.dim() * s.dim());
            const Matrix& e = layout.xi_basis();
            const Vector target = (e.transpose() * e).ldlt().solve(e.transpose() * vec_diag);
            theta.segment(ls, layout.xi_size()) = 0.5 * (theta.segment(ls, layout.xi_size()) + target);
        }
    }
    throw DomainError("fit_mle: could not construct an admissible starting point");
}

void newton_polish(const Problem& prob, const Matrix& data, Vector theta, const FitOptions& opts, StartOutcome& out);

StartOutcome run_start(const Problem& prob, const Matrix& data, const Vector& theta0, const FitOptions& opts) {
    StartOutcome out;
    const double t = static_cast<double>(data.rows());
    const Objective obj = [&](const Vector& phi, Vector& grad) {
        const Vector theta = prob.to_natural(phi);
        Vector g_theta;
        const double ll = prob.loglik_grad(theta, g_theta);
        grad = -prob.chain(phi, theta, g_theta) / t;
        return -ll / t;
    };
    LbfgsOptions lo;
    lo.max_iterations = opts.max_iterations;
    lo.gradient_tolerance = 1e-5;
    lo.parameter_tolerance = 1e-13;
    const LbfgsResult lr = minimize_lbfgs(obj, prob.to_unconstrained(theta0), lo);
    newton_polish(prob, data, prob.to_natural(lr.x), opts, out);
    out.lbfgs_iterations = lr.iterations;
    return out;
}

// Newton iterations in natural coordinates with the analytic Hessian.
void newton_polish(const Problem& prob, const Matrix& data, Vector theta, const FitOptions& opts, StartOutcome& out) {
    const Matrix& b = prob.raw_map();
    auto admissible = [&](const Vector& th) {
        try {
            prob.to_unconstrained(th);
            return true;
        } catch (const DomainError&) {
            return false;
        }
    };
    double ll = kNan;
    for (int it = 0; it < 100; ++it) {
        const CTSpec s = prob.spec(theta);
        const SampleDerivatives sd = sample_derivatives(s, data, true);
        ll = sd.loglik;
        const Vector g = b.transpose() * sd.score_sum;
        const Matrix h = b.transpose() * sd.hessian_sum * b;
        out.score_norm = g.lpNorm<Eigen::Infinity>();
        Eigen::LLT<Matrix> llt(-h);
        out.hessian_nd = llt.info() == Eigen::Success;
        Vector delta;
        if (out.hessian_nd) {
            delta = llt.solve(g);
        } else {
            // Levenberg shift until -H + tau I is positive definite.
            const double scale = (-h).diagonal().cwiseAbs().maxCoeff();
            double tau = 1e-6 * std::max(scale, 1.0);
            for (int k = 0; k < 40; ++k, tau *= 10.0) {
                Eigen::LLT<Matrix> shifted(-h + tau * Matrix::Identity(h.rows(), h.cols()));
                if (shifted.info() == Eigen::Success) {
                    delta = shifted.solve(g);
                    break;
                }
            }
            if (delta.size() == 0) break;
        }
        const double rel = delta.lpNorm<Eigen::Infinity>() / std::max(1.0, theta.lpNorm<Eigen::Infinity>());
        if (out.hessian_nd && out.score_norm < opts.gradient_tolerance && rel < opts.parameter_tolerance) {
            out.converged = true;
            break;
        }
        bool moved = false;
        double step = 1.0;
        for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
            const Vector cand = theta + step * delta;
            if (!admissible(cand)) continue;
            double cand_ll;
            try {
                cand_ll = loglik(prob.spec(cand), data);
            } catch (const DomainError&) {
                continue;
            }
            if (std::isfinite(cand_ll) && cand_ll >= ll - 1e-10 * (1.0 + std::abs(ll))) {
                theta = cand;
                moved = true;
                break;
            }
        }
        ++out.newton_steps;
        if (!moved) {
            out.converged = out.hessian_nd && out.score_norm < opts.gradient_tolerance;
            break;
        }
    }
    out.theta = theta;
    out.loglik = loglik(prob.spec(theta), data);
    out.ok = true;
}

// Quasi-Newton over (mu, all of Xi, log(nu - floor)) with no canonical constraint. The rotations inside a
// cluster are flat directions, which keeps the search away from the singular-diagonal-block walls of the
// canonical chart.
CTSpec free_stage(const CTSpec& start, const Matrix& data, const FitOptions& opts, int& iterations) {
    const int n = start.dim();
    const double t = static_cast<double>(data.rows());
    const double floor = start.standardized() ? 2.0 : 0.0;
    std::vector<int> finite;
    for (int k = 0; k < start.clusters(); ++k)
        if (!is_gaussian(start.dof()[k])) finite.push_back(k);
    const int ls = opts.estimate_location ? n : 0;
    const int nf = static_cast<int>(finite.size());
    auto build = [&](const Vector& x) {
        const Vector mu = ls > 0 ? Vector(x.head(n)) : start.location();
        std::vector<double> dof = start.dof();
        for (int f = 0; f < nf; ++f) dof[finite[f]] = floor + std::exp(x(ls + n * n + f));
        return CTSpec(start.cluster_sizes(), dof, mu, Eigen::Map<const Matrix>(x.data() + ls, n, n),
                      start.standardized());
    };
    Vector x0(ls + n * n + nf);
    if (ls > 0) x0.head(n) = start.location();
    x0.segment(ls, n * n) = Eigen::Map<const Vector>(start.xi().data(), n * n);
    for (int f = 0; f < nf; ++f) x0(ls + n * n + f) = std::log(start.dof()[finite[f]] - floor);
    const Objective obj = [&](const Vector& x, Vector& grad) {
        const CTSpec sp = build(x);
        Vector raw;
        const double ll = loglik_and_score(sp, data, raw);
        grad.resize(x.size());
        if (ls > 0) grad.head(n) = raw.head(n);
        grad.segment(ls, n * n) = raw.segment(n, n * n);
        for (int f = 0; f < nf; ++f) grad(ls + n * n + f) = raw(n + n * n + f) * (sp.dof()[finite[f]] - floor);
        grad /= -t;
        return -ll / t;
    };
    LbfgsOptions lo;
    lo.max_iterations = opts.max_iterations;
    lo.gradient_tolerance = 1e-5;
    lo.parameter_tolerance = 1e-13;
    const LbfgsResult lr = minimize_lbfgs(obj, x0, lo);
    iterations = lr.iterations;
    return build(lr.x);
}

CTSpec perturbed_spec(const CTSpec& s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    const double floor = s.standardized() ? 2.0 : 0.0;
    const double scale = s.xi().cwiseAbs().maxCoeff();
    Vector mu = s.location();
    for (int i = 0; i < mu.size(); ++i) mu(i) += 0.05 * scale * z(rng);
    Matrix xi = s.xi();
    for (int i = 0; i < xi.size(); ++i) xi(i) *= 1.0 + 0.1 * z(rng);
    std::vector<double> dof = s.dof();
    for (double& nu : dof)
        if (!is_gaussian(nu)) nu = std::clamp(nu * std::exp(0.3 * z(rng)), floor + 0.5, 100.0);
    return CTSpec(s.cluster_sizes(), dof, mu, xi, s.standardized());
}

Vector perturbed(const Vector& theta, const Problem& prob, const ParamLayout& layout, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    Vector out = theta;
    const int ls = layout.location_size();
    const double scale = theta.segment(ls, layout.xi_size()).cwiseAbs().maxCoeff();
    for (int i = 0; i < ls; ++i) out(i) += 0.05 * scale * z(rng);
    for (int c = 0; c < layout.xi_size(); ++c) out(ls + c) *= 1.0 + 0.1 * z(rng);
    for (int f = 0; f < layout.dof_size(); ++f) {
        const int r = ls + layout.xi_size() + f;
        out(r) = std::clamp(out(r) * std::exp(0.3 * z(rng)), prob.dof_floor() + 0.5, 100.0);
    }
    return out;
}

}  // namespace

FitResult fit_mle(const Matrix& data, const ClusterStructure& structure, const std::vector<double>& dof_init,
                  const FitOptions& opts) {
    opts.validate();
    structure.validate();
    const ClusterIndex idx(structure.cluster_sizes);
    if (data.cols() != idx.dim()) throw DomainError("fit_mle: data columns do not match the cluster sizes");
    if (!data.allFinite()) throw DomainError("fit_mle: data must be finite");
    if (!dof_init.empty() && static_cast<int>(dof_init.size()) != idx.clusters())
        throw DomainError("fit_mle: dof_init must have one entry per cluster");

    const CTSpec init = initial_spec(data, structure, dof_init, opts, start_columns(structure, dof_init, 0, opts.seed));
    const ParamLayout layout(structure, init.dof(), opts.estimate_location);
    if (data.rows() <= layout.size())
        throw DomainError("fit_mle: need more observations (" + std::to_string(data.rows()) + ") than parameters (" +
                          std::to_string(layout.size()) + ")");
    const Problem prob(data, layout, init.dof(), opts.standardized);
    const bool just = structure.restriction == Restriction::just_identified;
    const int k_count = idx.clusters();

    // A start ends in some cluster order; for the just-identified case the fit is polished in the order
    // chosen after the free stage.
    struct Candidate {
        StartOutcome outcome;
        std::optional<CTSpec> spec;
        std::vector<int> sizes;
        std::vector<int> order;
    };
    auto start_just = [&](int s) {
        Candidate c;
        try {
            CTSpec s0 = init;
            if (s > 0)
                s0 = perturbed_spec(
                    initial_spec(data, structure, dof_init, opts, start_columns(structure, dof_init, s, opts.seed))
                        .with_dof(init.dof()),
                    opts.seed * 0x9E3779B97F4A7C15ULL + s);
            int iterations = 0;
            const CTSpec raw = free_stage(s0, data, opts, iterations);
            c.order.resize(k_count);
            std::iota(c.order.begin(), c.order.end(), 0);
            c.sizes = raw.cluster_sizes();
            std::vector<double> dof = raw.dof();
            Matrix xi;
            if (opts.trace_max && k_count > 1 && k_count <= 8) {
                const PermutationResult pr = trace_max_permutation(raw.xi(), raw.cluster_sizes(), raw.dof());
                c.order = pr.order;
                c.sizes = pr.sizes;
                dof = pr.dof;
                xi = pr.xi;
            } else {
                xi = canonicalize(raw.xi(), raw.cluster_sizes());
            }
            ClusterStructure st = structure;
            st.cluster_sizes = c.sizes;
            const ParamLayout lay(st, dof, opts.estimate_location);
            const Problem pr(data, lay, dof, opts.standardized);
            const CTSpec canon(c.sizes, dof, raw.location(), xi, opts.standardized);
            newton_polish(pr, data, pr.natural(canon), opts, c.outcome);
            c.outcome.lbfgs_iterations = iterations;
            c.spec = pr.spec(c.outcome.theta);
        } catch (const DomainError&) {
            c = Candidate{};
        }
        return c;
    };
    auto start_restricted = [&](int s) {
        Candidate c;
        try {
            Vector th = admissible_start(prob, layout, init);
            if (s > 0) {
                const CTSpec base =
                    initial_spec(data, structure, dof_init, opts, start_columns(structure, dof_init, s, opts.seed));
                const Vector base_theta = admissible_start(prob, layout, base.with_dof(init.dof()));
                th = admissible_start(prob, layout,
                                      prob.spec(perturbed(base_theta, prob, layout,
                                                          opts.seed * 0x9E3779B97F4A7C15ULL + s)));
            }
            c.outcome = run_start(prob, data, th, opts);
            c.spec = prob.spec(c.outcome.theta);
            c.sizes = structure.cluster_sizes;
            c.order.resize(k_count);
            std::iota(c.order.begin(), c.order.end(), 0);
        } catch (const DomainError&) {
            c = Candidate{};
        }
        return c;
    };
    auto start = [&](int s) { return just ? start_just(s) : start_restricted(s); };
    std::vector<Candidate> outcomes(opts.multistart);
    if (opts.workers > 1 && opts.multistart > 1) {
        std::vector<std::future<Candidate>> futs;
        for (int s = 0; s < opts.multistart; ++s) futs.push_back(std::async(std::launch::async, start, s));
        for (int s = 0; s < opts.multistart; ++s) outcomes[s] = futs[s].get();
    } else {
        for (int s = 0; s < opts.multistart; ++s) outcomes[s] = start(s);
    }
    int best = -1;
    for (int s = 0; s < opts.multistart; ++s) {
        if (!outcomes[s].outcome.ok) continue;
        if (best < 0 || outcomes[s].outcome.loglik > outcomes[best].outcome.loglik + 1e-8) best = s;
    }
    if (best < 0) throw ConvergenceError("fit_mle: every start failed", layout.pack(init), kNan);
    const StartOutcome& win = outcomes[best].outcome;
    if (!win.converged) {
        const std::vector<double>& dof = outcomes[best].spec->dof();
        for (std::size_t k = 0; k < dof.size(); ++k)
            if (!is_gaussian(dof[k]) && dof[k] > 1e4)
                throw ConvergenceError("fit_mle: dof of cluster " + std::to_string(k + 1) +
                                           " diverges (estimate " + format_g(dof[k]) +
                                           "); the likelihood peaks at the Gaussian limit",
                                       win.theta, win.loglik);
        throw ConvergenceError("fit_mle: no convergence (score norm " + format_g(win.score_norm) + ")", win.theta,
                               win.loglik);
    }

    const CTSpec fitted = *outcomes[best].spec;
    ClusterStructure final_structure = structure;
    final_structure.cluster_sizes = outcomes[best].sizes;
    const std::vector<int> permutation = outcomes[best].order;

    FitResult out(fitted);
    out.structure = final_structure;
    out.observations = static_cast<int>(data.rows());
    const ParamLayout final_layout(final_structure, fitted.dof(), opts.estimate_location);
    out.param_count = final_layout.size();
    out.loglik = loglik(fitted, data);
    out.bic = bic(out.loglik, out.param_count, out.observations);
    const CovariancePair cov = sandwich_covariance(fitted, data, final_layout);
    out.cov_sandwich = cov.sandwich;
    out.cov_fisher = cov.fisher;
    out.fisher_available = cov.fisher_available;
    const Vector est = final_layout.pack(fitted);
    for (int i = 0; i < final_layout.size(); ++i) {
        ParameterEstimate pe;
        pe.name = final_layout.names()[i];
        pe.value = est(i);
        pe.se_sandwich = std::sqrt(cov.sandwich(i, i));
        pe.se_fisher = cov.fisher_available ? std::sqrt(cov.fisher(i, i)) : kNan;
        out.estimates.push_back(pe);
    }
    out.diagnostics.converged = win.converged;
    out.diagnostics.lbfgs_iterations = win.lbfgs_iterations;
    out.diagnostics.newton_steps = win.newton_steps;
    out.diagnostics.score_norm = win.score_norm;
    out.diagnostics.hessian_negative_definite = win.hessian_nd;
    out.diagnostics.best_start = best;
    for (const Candidate& o : outcomes)
        out.diagnostics.start_logliks.push_back(o.outcome.ok ? o.outcome.loglik : kNan);
    out.diagnostics.permutation = permutation;
    if (opts.decompose) {
        const LoglikParts parts = loglik_decompose(fitted, data, opts.quadrature);
        out.loglik_marginal = parts.marginal;
        out.loglik_copula = parts.copula;
        out.decomposed = true;
    }
    return out;
}

LoglikParts loglik_decompose(const CTSpec& spec, const Matrix& data, const QuadratureConfig& q) {
    LoglikParts out;
    out.total = loglik(spec, data);
    const int n = spec.dim();
    for (int i = 0; i < n; ++i) {
        const MarginalSpec m = marginal_of(spec, Vector::Unit(n, i));
        for (int t = 0; t < data.rows(); ++t) {
            double pdf;
            try {
                pdf = marginal_pdf(m, data(t, i), q);
            } catch (const DomainError& e) {
                throw DomainError("loglik_decompose: marginal density failed at observation " + std::to_string(t + 1) +
                                  ", coordinate " + std::to_string(i + 1) + ": " + e.what());
            }
            if (!(pdf > 0.0))
                throw DomainError("loglik_decompose: non-positive marginal density at observation " +
                                  std::to_string(t + 1) + ", coordinate " + std::to_string(i + 1));
            out.marginal += std::log(pdf);
        }
    }
    out.copula = out.total - out.marginal;
    return out;
}

double bic(double loglik, int param_count, int observations) {
    if (observations < 1) throw DomainError("bic: need at least one observation");
    return -2.0 * loglik + param_count * std::log(static_cast<double>(observations));
}

double bic(const FitResult& fit) { return bic(fit.loglik, fit.param_count, fit.observations); }

HARDataset build_har_features(const Matrix& panel, const std::vector<std::string>& names) {
    const int total = static_cast<int>(panel.rows());
    const int n = static_cast<int>(panel.cols());
    if (total <= 22) throw DomainError("build_har_features: need more than 22 observations");
    if (!panel.allFinite()) throw DomainError("build_har_features: panel must be finite");
    HARDataset out;
    const int t_eff = total - 22;
    out.y = panel.bottomRows(t_eff);
    out.daily.resize(t_eff, n);
    out.weekly.resize(t_eff, n);
    out.monthly.resize(t_eff, n);
    for (int r = 0; r < t_eff; ++r) {
        const int t = r + 22;
        out.daily.row(r) = panel.row(t - 1);
        out.weekly.row(r) = panel.middleRows(t - 5, 4).colwise().sum() / 4.0;
        out.monthly.row(r) = panel.middleRows(t - 22, 17).colwise().sum() / 17.0;
    }
    out.names = names;
    if (out.names.empty())
        for (int i = 0; i < n; ++i) out.names.push_back("y" + std::to_string(i + 1));
    if (static_cast<int>(out.names.size()) != n) throw DomainError("build_har_features: one name per column");
    return out;
}

HARResult fit_har_two_stage(const HARDataset& data, const ClusterStructure& structure,
                            const std::vector<double>& dof_init, FitOptions opts, bool robust_se) {
    const int t = static_cast<int>(data.y.rows());
    const int n = static_cast<int>(data.y.cols());
    if (t <= 4) throw DomainError("fit_har_two_stage: too few observations");
    std::vector<HARSeries> series;
    Matrix resid(t, n);
    for (int i = 0; i < n; ++i) {
        Matrix x(t, 4);
        x.col(0).setOnes();
        x.col(1) = data.daily.col(i);
        x.col(2) = data.weekly.col(i);
        x.col(3) = data.monthly.col(i);
        const Eigen::ColPivHouseholderQR<Matrix> qr(x);
        if (qr.rank() < 4) throw DomainError("fit_har_two_stage: collinear regressors for series " + data.names[i]);
        HARSeries s;
        s.name = data.names[i];
        s.coef = qr.solve(data.y.col(i));
        const Vector e = data.y.col(i) - x * s.coef;
        resid.col(i) = e;
        const Matrix xtx_inv = (x.transpose() * x).inverse();
        Matrix cov;
        if (robust_se) {
            cov = xtx_inv * (x.transpose() * e.array().square().matrix().asDiagonal() * x) * xtx_inv;
        } else {
            cov = e.squaredNorm() / (t - 4) * xtx_inv;
        }
        s.se = cov.diagonal().cwiseSqrt();
        s.persistence = s.coef(1) + s.coef(2) + s.coef(3);
        s.mean = s.coef(0) / (1.0 - s.persistence);
        s.resid_std = std::sqrt(e.squaredNorm() / (t - 4));
        series.push_back(s);
    }
    opts.estimate_location = false;
    HARResult out(fit_mle(resid, structure, dof_init, opts));
    out.series = std::move(series);
    out.residuals = resid;
    out.param_count_distribution = out.fit.param_count;
    out.param_count_total = out.fit.param_count + 4 * n;
    out.bic_distribution = bic(out.fit.loglik, out.param_count_distribution, t);
    out.bic_total = bic(out.fit.loglik, out.param_count_total, t);
    return out;
}

}  // namespace convot
