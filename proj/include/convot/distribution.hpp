#pragma once

#include "convot/types.hpp"

#include <cstdint>
#include <vector>

namespace convot {

/// Cluster layout of an n-vector: sizes, offsets, selector matrices e_k and projectors J_k.
class ClusterIndex {
public:
    ClusterIndex() = default;
    explicit ClusterIndex(std::vector<int> sizes);

    int clusters() const { return static_cast<int>(sizes_.size()); }
    int dim() const { return dim_; }
    int size(int k) const { return sizes_[k]; }
    int offset(int k) const { return offsets_[k]; }
    const std::vector<int>& sizes() const { return sizes_; }
    /// Cluster owning coordinate i.
    int cluster_of(int i) const { return owner_[i]; }

    /// n x n_k column selector e_k.
    Matrix selector(int k) const;
    /// J_k = e_k e_k'.
    Matrix projector(int k) const;

private:
    std::vector<int> sizes_;
    std::vector<int> offsets_;
    std::vector<int> owner_;
    int dim_ = 0;
};

/// Y = mu + Xi X with X = (X_1, ..., X_K) independent multivariate t clusters.
/// Immutable; the inverse of Xi and log|det Xi| are cached at construction.
class CTSpec {
public:
    CTSpec(std::vector<int> cluster_sizes, std::vector<double> dof, Vector location, Matrix xi,
           bool standardized = false);

    int dim() const { return index_.dim(); }
    int clusters() const { return index_.clusters(); }
    const std::vector<int>& cluster_sizes() const { return index_.sizes(); }
    const std::vector<double>& dof() const { return dof_; }
    const Vector& location() const { return location_; }
    const Matrix& xi() const { return xi_; }
    bool standardized() const { return standardized_; }
    const ClusterIndex& index() const { return index_; }

    const Matrix& xi_inverse() const { return xi_inv_; }
    double log_abs_det_xi() const { return log_abs_det_; }

    CTSpec with_location(Vector location) const;
    CTSpec with_xi(Matrix xi) const;
    CTSpec with_dof(std::vector<double> dof) const;

private:
    ClusterIndex index_;
    std::vector<double> dof_;
    Vector location_;
    Matrix xi_;
    bool standardized_;
    Matrix xi_inv_;
    double log_abs_det_ = 0.0;
};

/// log of the normalising constant of one cluster density, per the standardized flag.
double cluster_log_constant(double nu, int n, bool standardized);

/// Log density of one cluster at squared norm q = x'x.
double cluster_log_kernel(double nu, int n, bool standardized, double q);

double log_density(const CTSpec& spec, const Vector& y);

/// count x n matrix of draws; a private generator seeded with `seed`.
Matrix sample(const CTSpec& spec, int count, std::uint64_t seed);

/// var(Y). Requires every finite nu_k > 2.
Matrix covariance(const CTSpec& spec);

struct MergedGaussian {
    std::vector<int> cluster_sizes;
    std::vector<double> dof;
    Matrix xi;
    /// column_order[j] = original column placed at position j.
    std::vector<int> column_order;
};

/// Combines several Gaussian clusters into one trailing Gaussian cluster,
/// reordering the columns of Xi accordingly. Input need not satisfy CTSpec's invariants.
MergedGaussian merge_gaussian_clusters(const std::vector<int>& sizes, const std::vector<double>& dof,
                                       const Matrix& xi);

}  // namespace convot
