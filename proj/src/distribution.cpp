#include "convot/distribution.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace convot {

ClusterIndex::ClusterIndex(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.empty()) throw DomainError("cluster sizes must not be empty");
    offsets_.reserve(sizes_.size());
    for (std::size_t k = 0; k < sizes_.size(); ++k) {
        if (sizes_[k] <= 0) throw DomainError("cluster sizes must be positive");
        offsets_.push_back(dim_);
        for (int j = 0; j < sizes_[k]; ++j) owner_.push_back(static_cast<int>(k));
        dim_ += sizes_[k];
    }
}

Matrix ClusterIndex::selector(int k) const {
    Matrix e = Matrix::Zero(dim_, sizes_[k]);
    for (int j = 0; j < sizes_[k]; ++j) e(offsets_[k] + j, j) = 1.0;
    return e;
}

Matrix ClusterIndex::projector(int k) const {
    Matrix j = Matrix::Zero(dim_, dim_);
    for (int i = 0; i < sizes_[k]; ++i) j(offsets_[k] + i, offsets_[k] + i) = 1.0;
    return j;
}

CTSpec::CTSpec(std::vector<int> cluster_sizes, std::vector<double> dof, Vector location, Matrix xi,
               bool standardized)
    : index_(std::move(cluster_sizes)),
      dof_(std::move(dof)),
      location_(std::move(location)),
      xi_(std::move(xi)),
      standardized_(standardized) {
    const int n = index_.dim();
    if (static_cast<int>(dof_.size()) != index_.clusters())
        throw DomainError("dof must have one entry per cluster");
    if (location_.size() != n) throw DomainError("location length must equal the sum of cluster sizes");
    if (xi_.rows() != n || xi_.cols() != n) throw DomainError("xi must be n x n with n the sum of cluster sizes");
    if (!location_.allFinite() || !xi_.allFinite()) throw DomainError("location and xi must be finite");
    int gaussian = 0;
    for (double nu : dof_) {
        if (is_gaussian(nu)) {
            ++gaussian;
            continue;
        }
        if (!(nu > 0.0) || !std::isfinite(nu)) throw DomainError("degrees of freedom must be positive");
        if (standardized_ && !(nu > 2.0))
            throw DomainError("standardized specification requires every degree of freedom > 2");
    }
    if (gaussian > 1)
        throw DomainError("at most one Gaussian cluster is allowed; use merge_gaussian_clusters");
    Eigen::PartialPivLU<Matrix> lu(xi_);
    const Matrix& lu_mat = lu.matrixLU();
    double log_det = 0.0;
    double max_diag = 0.0;
    double min_diag = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        const double d = std::abs(lu_mat(i, i));
        max_diag = std::max(max_diag, d);
        min_diag = std::min(min_diag, d);
        log_det += std::log(d);
    }
    if (!(min_diag > 1e-14 * max_diag)) throw DomainError("xi is singular");
    log_abs_det_ = log_det;
    xi_inv_ = lu.inverse();
}

CTSpec CTSpec::with_location(Vector location) const {
    return CTSpec(index_.sizes(), dof_, std::move(location), xi_, standardized_);
}

CTSpec CTSpec::with_xi(Matrix xi) const {
    return CTSpec(index_.sizes(), dof_, location_, std::move(xi), standardized_);
}

CTSpec CTSpec::with_dof(std::vector<double> dof) const {
    return CTSpec(index_.sizes(), std::move(dof), location_, xi_, standardized_);
}

double cluster_log_constant(double nu, int n, bool standardized) {
    constexpr double pi = std::numbers::pi;
    if (is_gaussian(nu)) return -0.5 * n * std::log(2.0 * pi);
    const double scale = standardized ? nu - 2.0 : nu;
    return std::lgamma(0.5 * (nu + n)) - std::lgamma(0.5 * nu) - 0.5 * n * std::log(scale * pi);
}

double cluster_log_kernel(double nu, int n, bool standardized, double q) {
    if (is_gaussian(nu)) return cluster_log_constant(nu, n, standardized) - 0.5 * q;
    const double scale = standardized ? nu - 2.0 : nu;
    return cluster_log_constant(nu, n, standardized) - 0.5 * (nu + n) * std::log1p(q / scale);
}

double log_density(const CTSpec& spec, const Vector& y) {
    if (y.size() != spec.dim()) throw DomainError("observation length does not match the specification");
    if (!y.allFinite()) throw DomainError("observation must be finite");
    const Vector x = spec.xi_inverse() * (y - spec.location());
    const ClusterIndex& idx = spec.index();
    double out = -spec.log_abs_det_xi();
    for (int k = 0; k < idx.clusters(); ++k) {
        const double q = x.segment(idx.offset(k), idx.size(k)).squaredNorm();
        out += cluster_log_kernel(spec.dof()[k], idx.size(k), spec.standardized(), q);
    }
    return out;
}

Matrix sample(const CTSpec& spec, int count, std::uint64_t seed) {
    if (count < 0) throw DomainError("sample count must be non-negative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const ClusterIndex& idx = spec.index();
    std::vector<std::gamma_distribution<double>> mixing;
    std::vector<double> factor;
    for (int k = 0; k < idx.clusters(); ++k) {
        const double nu = spec.dof()[k];
        mixing.emplace_back(is_gaussian(nu) ? 1.0 : 0.5 * nu, 2.0);
        factor.push_back(is_gaussian(nu) ? 1.0 : (spec.standardized() ? nu - 2.0 : nu));
    }
    const int n = spec.dim();
    Matrix out(count, n);
    Vector x(n);
    for (int t = 0; t < count; ++t) {
        for (int i = 0; i < n; ++i) x(i) = normal(rng);
        for (int k = 0; k < idx.clusters(); ++k) {
            if (is_gaussian(spec.dof()[k])) continue;
            const double xi = mixing[k](rng);
            x.segment(idx.offset(k), idx.size(k)) *= std::sqrt(factor[k] / xi);
        }
        out.row(t) = (spec.location() + spec.xi() * x).transpose();
    }
    return out;
}

Matrix covariance(const CTSpec& spec) {
    const ClusterIndex& idx = spec.index();
    Vector d = Vector::Ones(spec.dim());
    for (int k = 0; k < idx.clusters(); ++k) {
        const double nu = spec.dof()[k];
        if (is_gaussian(nu)) continue;
        if (!(nu > 2.0))
            throw DomainError("variance undefined: cluster " + std::to_string(k + 1) + " has dof <= 2");
        if (!spec.standardized()) d.segment(idx.offset(k), idx.size(k)).setConstant(nu / (nu - 2.0));
    }
    return spec.xi() * d.asDiagonal() * spec.xi().transpose();
}

MergedGaussian merge_gaussian_clusters(const std::vector<int>& sizes, const std::vector<double>& dof,
                                       const Matrix& xi) {
    if (sizes.size() != dof.size()) throw DomainError("sizes and dof must have equal length");
    MergedGaussian out;
    std::vector<int> gaussian_columns;
    int offset = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        for (int j = 0; j < sizes[k]; ++j) {
            if (is_gaussian(dof[k]))
                gaussian_columns.push_back(offset + j);
            else
                out.column_order.push_back(offset + j);
        }
        if (!is_gaussian(dof[k])) {
            out.cluster_sizes.push_back(sizes[k]);
            out.dof.push_back(dof[k]);
        }
        offset += sizes[k];
    }
    if (xi.cols() != offset) throw DomainError("xi columns must equal the sum of cluster sizes");
    if (!gaussian_columns.empty()) {
        out.cluster_sizes.push_back(static_cast<int>(gaussian_columns.size()));
        out.dof.push_back(kGaussianDof);
        out.column_order.insert(out.column_order.end(), gaussian_columns.begin(), gaussian_columns.end());
    }
    out.xi.resize(xi.rows(), xi.cols());
    for (int j = 0; j < offset; ++j) out.xi.col(j) = xi.col(out.column_order[j]);
    return out;
}

}  // namespace convot
