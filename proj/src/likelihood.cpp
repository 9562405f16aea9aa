#include "convot/likelihood.hpp"

#include "convot/special.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace convot {

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Matrix commutation(int m, int n) {
    // vec(Z) index of Z(i,j) is i + j m; vec(Z') index of Z'(j,i) is j + i n.
    Matrix k = Matrix::Zero(m * n, m * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) k(j + i * n, i + j * m) = 1.0;
    return k;
}

namespace {

// sqrt((nu-2)/nu) and its first two derivatives.
double std_g(double nu) { return std::sqrt((nu - 2.0) / nu); }
double std_g1(double nu) { return 1.0 / (nu * nu * std_g(nu)); }
double std_g2(double nu) {
    const double g = std_g(nu);
    return -2.0 / (nu * nu * nu * g) - 1.0 / (nu * nu * nu * nu * g * g * g);
}

// Spec re-expressed with plain t clusters plus cached per-cluster constants.
struct RawModel {
    const CTSpec* spec;
    int n;
    int k_count;
    int p;
    std::vector<int> dof_pos;  // position of nu_k in the raw vector, -1 for Gaussian
    std::vector<int> owner;    // cluster of each coordinate
    Matrix a;                  // inverse of the plain-t scale matrix
    double log_det_a;
    std::vector<double> log_const;
    std::vector<double> dig;   // psi((nu+n)/2) - psi(nu/2)
    std::vector<double> trig;  // psi'((nu+n)/2)/4 - psi'(nu/2)/4
    std::vector<double> g, g1, g2;

    explicit RawModel(const CTSpec& s) : spec(&s) {
        const ClusterIndex& idx = s.index();
        n = s.dim();
        k_count = idx.clusters();
        int next = n + n * n;
        Vector dscale = Vector::Ones(n);
        for (int k = 0; k < k_count; ++k) {
            const double nu = s.dof()[k];
            const int nk = idx.size(k);
            if (is_gaussian(nu)) {
                dof_pos.push_back(-1);
                g.push_back(1.0);
                g1.push_back(0.0);
                g2.push_back(0.0);
                dig.push_back(0.0);
                trig.push_back(0.0);
            } else {
                dof_pos.push_back(next++);
                g.push_back(s.standardized() ? std_g(nu) : 1.0);
                g1.push_back(s.standardized() ? std_g1(nu) : 0.0);
                g2.push_back(s.standardized() ? std_g2(nu) : 0.0);
                dig.push_back(digamma(0.5 * (nu + nk)) - digamma(0.5 * nu));
                trig.push_back(0.25 * trigamma(0.5 * (nu + nk)) - 0.25 * trigamma(0.5 * nu));
            }
            log_const.push_back(cluster_log_constant(nu, nk, false));
            dscale.segment(idx.offset(k), nk).setConstant(g.back());
        }
        p = next;
        for (int i = 0; i < n; ++i) owner.push_back(idx.cluster_of(i));
        // A_raw = (Xi D)^{-1} = D^{-1} Xi^{-1}.
        a = dscale.cwiseInverse().asDiagonal() * s.xi_inverse();
        log_det_a = -s.log_abs_det_xi();
        for (int k = 0; k < k_count; ++k) log_det_a -= idx.size(k) * std::log(g[k]);
    }

    int xi_pos(int i, int j) const { return n + i + j * n; }

    // Chain rule from plain-t coordinates to the spec's own coordinates (standardized case).
    void to_spec_vector(Vector& s) const {
        if (!spec->standardized()) return;
        const Matrix& xs = spec->xi();
        for (int k = 0; k < k_count; ++k) {
            if (dof_pos[k] < 0) continue;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
                if (owner[j] != k) continue;
                for (int i = 0; i < n; ++i) acc += s(xi_pos(i, j)) * xs(i, j);
            }
            s(dof_pos[k]) += g1[k] * acc;
        }
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) s(xi_pos(i, j)) *= g[owner[j]];
    }

    // H <- G'HG with G = d(raw)/d(spec coordinates).
    void to_spec_matrix(Matrix& h) const {
        if (!spec->standardized()) return;
        const Matrix& xs = spec->xi();
        for (int pass = 0; pass < 2; ++pass) {
            for (int k = 0; k < k_count; ++k) {
                if (dof_pos[k] < 0) continue;
                Vector acc = Vector::Zero(h.rows());
                for (int j = 0; j < n; ++j) {
                    if (owner[j] != k) continue;
                    for (int i = 0; i < n; ++i) acc += xs(i, j) * h.col(xi_pos(i, j));
                }
                h.col(dof_pos[k]) += g1[k] * acc;
            }
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i) h.col(xi_pos(i, j)) *= g[owner[j]];
            h.transposeInPlace();
        }
    }

    // Second-order chain-rule terms that involve the raw score.
    void add_curvature(Matrix& h, const Vector& raw_score) const {
        if (!spec->standardized()) return;
        const Matrix& xs = spec->xi();
        for (int k = 0; k < k_count; ++k) {
            const int q = dof_pos[k];
            if (q < 0) continue;
            for (int j = 0; j < n; ++j) {
                if (owner[j] != k) continue;
                for (int i = 0; i < n; ++i) {
                    const double s = raw_score(xi_pos(i, j));
                    h(q, q) += g2[k] * s * xs(i, j);
                    h(xi_pos(i, j), q) += g1[k] * s;
                    h(q, xi_pos(i, j)) += g1[k] * s;
                }
            }
        }
    }

    // Raw-coordinate evaluation. Returns log density; fills score (and Hessian) in plain-t coordinates.
    double eval(const Vector& y, Vector& score, Matrix* hess, std::vector<double>& w, Vector& x) const {
        const ClusterIndex& idx = spec->index();
        const std::vector<double>& dof = spec->dof();
        x.noalias() = a * (y - spec->location());
        Vector gvec(n);
        double ll = log_det_a;
        w.assign(k_count, 1.0);
        std::vector<double> q(k_count);
        for (int k = 0; k < k_count; ++k) {
            const int o = idx.offset(k);
            const int nk = idx.size(k);
            q[k] = x.segment(o, nk).squaredNorm();
            const double nu = dof[k];
            if (is_gaussian(nu)) {
                ll += log_const[k] - 0.5 * q[k];
                w[k] = 1.0;
            } else {
                ll += log_const[k] - 0.5 * (nu + nk) * std::log1p(q[k] / nu);
                w[k] = (nu + nk) / (nu + q[k]);
            }
            gvec.segment(o, nk) = w[k] * x.segment(o, nk);
        }
        const Vector v = a.transpose() * gvec;
        score.resize(p);
        score.head(n) = v;
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) score(xi_pos(i, j)) = v(i) * x(j) - a(j, i);
        for (int k = 0; k < k_count; ++k) {
            if (dof_pos[k] < 0) continue;
            const double nu = dof[k];
            score(dof_pos[k]) = 0.5 * (dig[k] + 1.0 - w[k] - std::log1p(q[k] / nu));
        }
        if (!hess) return ll;

        Matrix& h = *hess;
        h.setZero(p, p);
        // Gamma A with Gamma = blockdiag(W_k I - 2 W_k^2/(nu_k+n_k) X_k X_k').
        Matrix ga(n, n);
        for (int k = 0; k < k_count; ++k) {
            const int o = idx.offset(k);
            const int nk = idx.size(k);
            const auto rows = a.middleRows(o, nk);
            ga.middleRows(o, nk) = w[k] * rows;
            if (dof_pos[k] >= 0) {
                const double c = 2.0 * w[k] * w[k] / (dof[k] + nk);
                const auto xk = x.segment(o, nk);
                ga.middleRows(o, nk) -= c * xk * (xk.transpose() * rows);
            }
        }
        const Matrix m = a.transpose() * ga;
        h.topLeftCorner(n, n) = -m;
        for (int b = 0; b < n; ++b)
            for (int aa = 0; aa < n; ++aa) {
                const int col = xi_pos(aa, b);
                for (int mm = 0; mm < n; ++mm) {
                    const double val = -x(b) * m(mm, aa) - v(aa) * a(b, mm);
                    h(mm, col) = val;
                    h(col, mm) = val;
                }
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < n; ++i) {
                        const int row = xi_pos(i, j);
                        h(row, col) = -x(j) * x(b) * m(i, aa) - v(i) * a(j, aa) * x(b) - v(aa) * a(b, i) * x(j) +
                                      a(b, i) * a(j, aa);
                    }
            }
        for (int k = 0; k < k_count; ++k) {
            const int qk = dof_pos[k];
            if (qk < 0) continue;
            const int o = idx.offset(k);
            const int nk = idx.size(k);
            const double nu = dof[k];
            const double c = (w[k] * w[k] - w[k]) / (nu + nk);
            const Vector r = a.middleRows(o, nk).transpose() * x.segment(o, nk);
            for (int mm = 0; mm < n; ++mm) {
                h(qk, mm) = -c * r(mm);
                h(mm, qk) = h(qk, mm);
            }
            for (int b = 0; b < n; ++b)
                for (int aa = 0; aa < n; ++aa) {
                    const double val = -c * r(aa) * x(b);
                    h(qk, xi_pos(aa, b)) = val;
                    h(xi_pos(aa, b), qk) = val;
                }
            h(qk, qk) = trig[k] + 0.5 / nu + 0.5 * (w[k] * w[k] - 2.0 * w[k]) / (nu + nk);
        }
        return ll;
    }
};

}  // namespace

int raw_param_count(const CTSpec& spec) {
    int p = spec.dim() + spec.dim() * spec.dim();
    for (double nu : spec.dof())
        if (!is_gaussian(nu)) ++p;
    return p;
}

DerivativeBundle derivatives(const CTSpec& spec, const Vector& y, bool with_hessian) {
    if (y.size() != spec.dim()) throw DomainError("observation length does not match the specification");
    if (!y.allFinite()) throw DomainError("observation must be finite");
    const RawModel model(spec);
    DerivativeBundle out;
    Vector raw_score;
    Matrix h;
    out.loglik = model.eval(y, raw_score, with_hessian ? &h : nullptr, out.weights, out.x);
    out.a = model.a;
    out.score = raw_score;
    model.to_spec_vector(out.score);
    if (with_hessian) {
        model.to_spec_matrix(h);
        model.add_curvature(h, raw_score);
        out.hessian = std::move(h);
    }
    return out;
}

double loglik(const CTSpec& spec, const Matrix& data) {
    double acc = 0.0;
    const Matrix& a = spec.xi_inverse();
    const ClusterIndex& idx = spec.index();
    if (data.cols() != spec.dim()) throw DomainError("data columns do not match the specification");
    if (!data.allFinite()) throw DomainError("data must be finite");
    std::vector<double> consts;
    for (int k = 0; k < idx.clusters(); ++k)
        consts.push_back(cluster_log_constant(spec.dof()[k], idx.size(k), spec.standardized()));
    Vector x(spec.dim());
    for (int t = 0; t < data.rows(); ++t) {
        x.noalias() = a * (data.row(t).transpose() - spec.location());
        for (int k = 0; k < idx.clusters(); ++k) {
            const double q = x.segment(idx.offset(k), idx.size(k)).squaredNorm();
            const double nu = spec.dof()[k];
            if (is_gaussian(nu)) {
                acc += consts[k] - 0.5 * q;
            } else {
                const double scale = spec.standardized() ? nu - 2.0 : nu;
                acc += consts[k] - 0.5 * (nu + idx.size(k)) * std::log1p(q / scale);
            }
        }
    }
    return acc - data.rows() * spec.log_abs_det_xi();
}

Vector score(const CTSpec& spec, const Vector& y) { return derivatives(spec, y, false).score; }

Matrix hessian(const CTSpec& spec, const Vector& y) { return derivatives(spec, y, true).hessian; }

double loglik_and_score(const CTSpec& spec, const Matrix& data, Vector& score_sum) {
    if (data.cols() != spec.dim()) throw DomainError("data columns do not match the specification");
    const RawModel model(spec);
    const int n = model.n;
    const ClusterIndex& idx = spec.index();
    const std::vector<double>& dof = spec.dof();
    double ll = 0.0;
    Vector mu_sum = Vector::Zero(n);
    Matrix vx_sum = Matrix::Zero(n, n);
    std::vector<double> dof_sum(model.k_count, 0.0);
    Vector x(n), gvec(n), v(n);
    for (int t = 0; t < data.rows(); ++t) {
        x.noalias() = model.a * (data.row(t).transpose() - spec.location());
        for (int k = 0; k < model.k_count; ++k) {
            const int o = idx.offset(k);
            const int nk = idx.size(k);
            const double q = x.segment(o, nk).squaredNorm();
            const double nu = dof[k];
            double w = 1.0;
            if (is_gaussian(nu)) {
                ll += model.log_const[k] - 0.5 * q;
            } else {
                const double lq = std::log1p(q / nu);
                ll += model.log_const[k] - 0.5 * (nu + nk) * lq;
                w = (nu + nk) / (nu + q);
                dof_sum[k] += 0.5 * (model.dig[k] + 1.0 - w - lq);
            }
            gvec.segment(o, nk) = w * x.segment(o, nk);
        }
        v.noalias() = model.a.transpose() * gvec;
        mu_sum += v;
        vx_sum.noalias() += v * x.transpose();
    }
    const double tcount = static_cast<double>(data.rows());
    ll += tcount * model.log_det_a;
    Vector raw(model.p);
    raw.head(n) = mu_sum;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) raw(model.xi_pos(i, j)) = vx_sum(i, j) - tcount * model.a(j, i);
    for (int k = 0; k < model.k_count; ++k)
        if (model.dof_pos[k] >= 0) raw(model.dof_pos[k]) = dof_sum[k];
    model.to_spec_vector(raw);
    score_sum = raw;
    return ll;
}

SampleDerivatives sample_derivatives(const CTSpec& spec, const Matrix& data, bool with_hessian) {
    if (data.cols() != spec.dim()) throw DomainError("data columns do not match the specification");
    const RawModel model(spec);
    SampleDerivatives out;
    out.count = static_cast<int>(data.rows());
    out.score_sum = Vector::Zero(model.p);
    out.score_outer_sum = Matrix::Zero(model.p, model.p);
    Matrix raw_hess_sum = Matrix::Zero(model.p, model.p);
    Vector raw_sum = Vector::Zero(model.p);
    Vector s;
    Matrix h;
    std::vector<double> w;
    Vector x;
    for (int t = 0; t < data.rows(); ++t) {
        out.loglik += model.eval(data.row(t).transpose(), s, with_hessian ? &h : nullptr, w, x);
        raw_sum += s;
        Vector ss = s;
        model.to_spec_vector(ss);
        out.score_outer_sum.selfadjointView<Eigen::Lower>().rankUpdate(ss);
        if (with_hessian) raw_hess_sum += h;
    }
    out.score_outer_sum = out.score_outer_sum.selfadjointView<Eigen::Lower>();
    out.score_sum = raw_sum;
    model.to_spec_vector(out.score_sum);
    if (with_hessian) {
        model.to_spec_matrix(raw_hess_sum);
        model.add_curvature(raw_hess_sum, raw_sum);
        out.hessian_sum = std::move(raw_hess_sum);
    }
    return out;
}

Matrix fisher_information(const CTSpec& spec) {
    const RawModel model(spec);
    const int n = model.n;
    const int n2 = n * n;
    const ClusterIndex& idx = spec.index();
    const std::vector<double>& dof = spec.dof();
    const Matrix& a = model.a;
    Matrix info = Matrix::Zero(model.p, model.p);

    bool xi_defined = true;
    for (double nu : dof)
        if (!is_gaussian(nu) && !(nu > 2.0)) xi_defined = false;
    if (!xi_defined) throw DomainError("information undefined: Xi blocks require every dof > 2");

    std::vector<double> phi(model.k_count);
    for (int k = 0; k < model.k_count; ++k) {
        const double nu = dof[k];
        const int nk = idx.size(k);
        phi[k] = is_gaussian(nu) ? 1.0 : (nu + nk) / (nu + nk + 2.0);
        const Matrix jk = idx.projector(k);
        info.topLeftCorner(n, n) += phi[k] * a.transpose() * jk * a;
    }

    const Matrix kn = commutation(n, n);
    Matrix ixi = kron(a, a.transpose()) * kn;
    for (int k = 0; k < model.k_count; ++k) {
        const Matrix jk = idx.projector(k);
        Matrix jdot = jk;
        for (int l = 0; l < model.k_count; ++l) {
            if (l == k) continue;
            const double nu = dof[l];
            const double factor = is_gaussian(nu) ? 1.0 : nu / (nu - 2.0);
            jdot += factor * idx.projector(l);
        }
        const Matrix ajk = a.transpose() * jk;
        const Eigen::Map<const Vector> vec_ajk(ajk.data(), n2);
        ixi += phi[k] * kron(jdot, a.transpose() * jk * a);
        if (phi[k] != 1.0)
            ixi += (phi[k] - 1.0) * (kron(jk * a, a.transpose() * jk) * kn + vec_ajk * vec_ajk.transpose());
        const int qk = model.dof_pos[k];
        if (qk >= 0) {
            const double nu = dof[k];
            const int nk = idx.size(k);
            const Vector cross = (phi[k] - 1.0) / (nu + nk) * vec_ajk;
            info.block(n, qk, n2, 1) = cross;
            info.block(qk, n, 1, n2) = cross.transpose();
            info(qk, qk) = 0.25 * (trigamma(0.5 * nu) - trigamma(0.5 * (nu + nk))) -
                           nk * (nu + nk + 4.0) / (2.0 * nu * (nu + nk + 2.0) * (nu + nk));
        }
    }
    info.block(n, n, n2, n2) = ixi;
    model.to_spec_matrix(info);
    return info;
}

IdentifiedJacobian jacobian_identified(const Matrix& xi_tilde, const std::vector<int>& sizes) {
    const ClusterIndex idx(sizes);
    const int n = idx.dim();
    if (xi_tilde.rows() != n || xi_tilde.cols() != n) throw DomainError("jacobian_identified: xi must be n x n");
    IdentifiedJacobian out;
    out.m = Matrix::Zero(n * n, n * n);
    for (int k = 0; k < idx.clusters(); ++k) {
        const int nk = idx.size(k);
        const int ok = idx.offset(k);
        const Matrix b = xi_tilde.block(ok, ok, nk, nk);
        const Matrix p = polar_factor(b, k);
        const Matrix xkk = b * p;  // canonical diagonal block
        const Matrix ik = Matrix::Identity(nk, nk);
        const Matrix kk = commutation(nk, nk);
        const Matrix inner = kron(ik, b) + kron(xkk, p.transpose());
        Eigen::FullPivLU<Matrix> lu(inner);
        if (!lu.isInvertible()) throw DomainError("jacobian_identified: singular inner system");
        const Matrix rhs = (Matrix::Identity(nk * nk, nk * nk) + kk) * kron(ik, b);
        const Matrix dp = kk * kron(xkk.inverse(), ik) * (Matrix::Identity(nk * nk, nk * nk) - lu.solve(rhs));

        Matrix pi = Matrix::Zero(n * nk, n * nk);
        for (int i = 0; i < idx.clusters(); ++i) {
            const int ni = idx.size(i);
            const int ri = idx.offset(i) * nk;
            if (i != k) pi.block(ri, ri, ni * nk, ni * nk) = kron(Matrix::Identity(ni, ni), p.transpose());
            const Matrix xik = xi_tilde.block(idx.offset(i), ok, ni, nk);
            Matrix blk = kron(xik, ik) * dp;
            if (i == k) blk += kron(ik, p.transpose());
            pi.block(ri, ok * nk, ni * nk, nk * nk) = blk;
        }
        const Matrix gamma = commutation(nk, n) * pi * commutation(n, nk);
        out.m.block(ok * n, ok * n, n * nk, n * nk) = gamma;
    }
    out.m_pinv = out.m.completeOrthogonalDecomposition().pseudoInverse();
    return out;
}

namespace {

Matrix identified_map(const CTSpec& spec, const Matrix& m_pinv) {
    const int n = spec.dim();
    const int p = raw_param_count(spec);
    Matrix g = Matrix::Identity(p, p);
    g.block(n, n, n * n, n * n) = m_pinv;
    return g;
}

}  // namespace

Vector identified_score(const CTSpec& spec, const Vector& y) {
    const IdentifiedJacobian jac = jacobian_identified(spec.xi(), spec.cluster_sizes());
    return identified_map(spec, jac.m_pinv).transpose() * score(spec, y);
}

Matrix identified_hessian(const CTSpec& spec, const Vector& y, double step) {
    const int n = spec.dim();
    const DerivativeBundle d = derivatives(spec, y, true);
    const IdentifiedJacobian jac = jacobian_identified(spec.xi(), spec.cluster_sizes());
    const Matrix g = identified_map(spec, jac.m_pinv);
    Matrix h = g.transpose() * d.hessian * g;
    const Vector sxi = d.score.segment(n, n * n);
    for (int c = 0; c < n * n; ++c) {
        Matrix plus = spec.xi();
        Matrix minus = spec.xi();
        plus.data()[c] += step;
        minus.data()[c] -= step;
        const Matrix dm = (jacobian_identified(plus, spec.cluster_sizes()).m_pinv -
                           jacobian_identified(minus, spec.cluster_sizes()).m_pinv) /
                          (2.0 * step);
        h.block(n, n + c, n * n, 1) += dm.transpose() * sxi;
    }
    return h;
}

Matrix fisher_information_identified(const CTSpec& spec) {
    const IdentifiedJacobian jac = jacobian_identified(spec.xi(), spec.cluster_sizes());
    const Matrix g = identified_map(spec, jac.m_pinv);
    return g.transpose() * fisher_information(spec) * g;
}

ParamLayout::ParamLayout(const ClusterStructure& structure, const std::vector<double>& dof,
                         bool estimate_location)
    : structure_(structure) {
    structure_.validate();
    const ClusterIndex idx(structure_.cluster_sizes);
    n_ = idx.dim();
    if (static_cast<int>(dof.size()) != idx.clusters()) throw DomainError("layout: dof length mismatch");
    location_size_ = estimate_location ? n_ : 0;
    for (int i = 0; i < location_size_; ++i) names_.push_back("mu[" + std::to_string(i + 1) + "]");

    std::vector<Vector> cols;
    auto unit = [&](int i, int j) {
        Vector e = Vector::Zero(n_ * n_);
        e(i + j * n_) = 1.0;
        return e;
    };
    auto entry_name = [](int i, int j) {
        return "xi[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]";
    };
    switch (structure_.restriction) {
        case Restriction::just_identified:
        case Restriction::symmetric_xi: {
            const bool full_sym = structure_.restriction == Restriction::symmetric_xi;
            for (int j = 0; j < n_; ++j)
                for (int i = 0; i < n_; ++i) {
                    const bool tied = full_sym || idx.cluster_of(i) == idx.cluster_of(j);
                    if (tied && i < j) continue;
                    Vector e = unit(i, j);
                    if (tied && i != j) e += unit(j, i);
                    cols.push_back(e);
                    names_.push_back(entry_name(i, j));
                }
            break;
        }
        case Restriction::block:
        case Restriction::block_asymmetric: {
            const bool sym = structure_.restriction == Restriction::block;
            const std::vector<int> part = structure_.block_partition();
            std::vector<int> off(part.size());
            int acc = 0;
            for (std::size_t b = 0; b < part.size(); ++b) {
                off[b] = acc;
                acc += part[b];
            }
            const int kb = static_cast<int>(part.size());
            for (int b = 0; b < kb; ++b) {
                Vector d = Vector::Zero(n_ * n_);
                for (int i = 0; i < part[b]; ++i) d += unit(off[b] + i, off[b] + i);
                cols.push_back(d);
                names_.push_back("d[" + std::to_string(b + 1) + "]");
                if (part[b] > 1) {
                    Vector w = Vector::Zero(n_ * n_);
                    for (int i = 0; i < part[b]; ++i)
                        for (int j = 0; j < part[b]; ++j)
                            if (i != j) w += unit(off[b] + i, off[b] + j);
                    cols.push_back(w);
                    names_.push_back("b[" + std::to_string(b + 1) + "," + std::to_string(b + 1) + "]");
                }
            }
            for (int a = 0; a < kb; ++a)
                for (int b = 0; b < kb; ++b) {
                    if (a == b || (sym && b < a)) continue;
                    Vector e = Vector::Zero(n_ * n_);
                    for (int i = 0; i < part[a]; ++i)
                        for (int j = 0; j < part[b]; ++j) {
                            e += unit(off[a] + i, off[b] + j);
                            if (sym) e += unit(off[b] + j, off[a] + i);
                        }
                    cols.push_back(e);
                    names_.push_back("b[" + std::to_string(a + 1) + "," + std::to_string(b + 1) + "]");
                }
            break;
        }
    }
    xi_basis_.resize(n_ * n_, static_cast<int>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) xi_basis_.col(static_cast<int>(c)) = cols[c];
    for (int k = 0; k < idx.clusters(); ++k) {
        if (is_gaussian(dof[k])) continue;
        finite_dof_.push_back(k);
        names_.push_back("1/nu[" + std::to_string(k + 1) + "]");
    }
}

Vector ParamLayout::pack(const CTSpec& spec) const {
    Vector theta(size());
    if (location_size_ > 0) theta.head(n_) = spec.location();
    const Eigen::Map<const Vector> vec_xi(spec.xi().data(), n_ * n_);
    const Vector counts = xi_basis_.colwise().sum().transpose();
    theta.segment(location_size_, xi_size()) = (xi_basis_.transpose() * vec_xi).cwiseQuotient(counts);
    for (int f = 0; f < dof_size(); ++f)
        theta(location_size_ + xi_size() + f) = 1.0 / spec.dof()[finite_dof_[f]];
    return theta;
}

CTSpec ParamLayout::unpack(const Vector& theta, const CTSpec& like) const {
    if (theta.size() != size()) throw DomainError("layout: parameter vector has the wrong length");
    Vector mu = location_size_ > 0 ? Vector(theta.head(n_)) : like.location();
    const Vector vec_xi = xi_basis_ * theta.segment(location_size_, xi_size());
    const Matrix xi = Eigen::Map<const Matrix>(vec_xi.data(), n_, n_);
    std::vector<double> dof = like.dof();
    for (int f = 0; f < dof_size(); ++f) {
        const double u = theta(location_size_ + xi_size() + f);
        if (!(u > 0.0)) throw DomainError("layout: inverse degrees of freedom must be positive");
        dof[finite_dof_[f]] = 1.0 / u;
    }
    return CTSpec(structure_.cluster_sizes, dof, mu, xi, like.standardized());
}

Matrix ParamLayout::raw_jacobian(const CTSpec& spec) const {
    const int p = raw_param_count(spec);
    Matrix g = Matrix::Zero(p, size());
    for (int i = 0; i < location_size_; ++i) g(i, i) = 1.0;
    g.block(n_, location_size_, n_ * n_, xi_size()) = xi_basis_;
    int pos = n_ + n_ * n_;
    for (int f = 0; f < dof_size(); ++f) {
        const double nu = spec.dof()[finite_dof_[f]];
        g(pos + f, location_size_ + xi_size() + f) = -nu * nu;
    }
    return g;
}

Vector ParamLayout::reported_score(const CTSpec& spec, const Vector& raw_score) const {
    return raw_jacobian(spec).transpose() * raw_score;
}

Matrix ParamLayout::reported_hessian(const CTSpec& spec, const Vector& raw_score, const Matrix& raw_hessian) const {
    const Matrix g = raw_jacobian(spec);
    Matrix h = g.transpose() * raw_hessian * g;
    const int pos = n_ + n_ * n_;
    for (int f = 0; f < dof_size(); ++f) {
        const double nu = spec.dof()[finite_dof_[f]];
        const int r = location_size_ + xi_size() + f;
        h(r, r) += raw_score(pos + f) * 2.0 * nu * nu * nu;
    }
    return h;
}

Matrix ParamLayout::reported_information(const CTSpec& spec, const Matrix& raw_information) const {
    const Matrix g = raw_jacobian(spec);
    return g.transpose() * raw_information * g;
}

Matrix ParamLayout::expand_covariance(const Matrix& cov) const {
    const int rows = location_size_ + n_ * n_ + dof_size();
    Matrix l = Matrix::Zero(rows, size());
    for (int i = 0; i < location_size_; ++i) l(i, i) = 1.0;
    l.block(location_size_, location_size_, n_ * n_, xi_size()) = xi_basis_;
    for (int f = 0; f < dof_size(); ++f) l(location_size_ + n_ * n_ + f, location_size_ + xi_size() + f) = 1.0;
    return l * cov * l.transpose();
}

std::vector<std::string> ParamLayout::expanded_names() const {
    std::vector<std::string> out;
    for (int i = 0; i < location_size_; ++i) out.push_back(names_[i]);
    for (int j = 0; j < n_; ++j)
        for (int i = 0; i < n_; ++i) out.push_back("xi[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]");
    for (int f = 0; f < dof_size(); ++f) out.push_back(names_[location_size_ + xi_size() + f]);
    return out;
}

CovariancePair sandwich_covariance(const CTSpec& spec, const Matrix& data, const ParamLayout& layout) {
    const SampleDerivatives sd = sample_derivatives(spec, data, true);
    const double t = static_cast<double>(sd.count);
    const Matrix g = layout.raw_jacobian(spec);
    // Drop mu rows when the layout keeps mu fixed.
    const Matrix j_hat = -layout.reported_hessian(spec, sd.score_sum, sd.hessian_sum) / t;
    const Matrix i_hat = g.transpose() * sd.score_outer_sum * g / t;
    Eigen::FullPivLU<Matrix> lu(j_hat);
    if (!lu.isInvertible()) throw DomainError("sandwich_covariance: mean Hessian is singular");
    const Matrix j_inv = lu.inverse();
    CovariancePair out;
    out.sandwich = j_inv * i_hat * j_inv / t;
    try {
        const Matrix info = layout.reported_information(spec, fisher_information(spec));
        Eigen::FullPivLU<Matrix> ilu(info);
        if (ilu.isInvertible()) {
            out.fisher = ilu.inverse() / t;
            out.fisher_available = true;
        }
    } catch (const DomainError&) {
        out.fisher_available = false;
    }
    return out;
}

}  // namespace convot
