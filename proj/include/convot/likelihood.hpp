#pragma once

#include "convot/distribution.hpp"
#include "convot/identification.hpp"
#include "convot/types.hpp"

#include <string>
#include <vector>

namespace convot {

/// Unrestricted ("raw") coordinates: theta = (mu [n]; vec(Xi) column-major [n^2]; nu_k for each finite nu_k).
/// For a standardized spec Xi is the standardized scale matrix and the chain rule through
/// sqrt((nu-2)/nu) is applied.
int raw_param_count(const CTSpec& spec);

/// Per-observation evaluation workspace.
struct DerivativeBundle {
    double loglik = 0.0;
    Vector score;
    Matrix hessian;
    /// W_k = (nu_k + n_k)/(nu_k + X_k'X_k); 1 for a Gaussian cluster.
    std::vector<double> weights;
    /// A = Xi^{-1} and X = A(y - mu).
    Matrix a;
    Vector x;
};

DerivativeBundle derivatives(const CTSpec& spec, const Vector& y, bool with_hessian);

double loglik(const CTSpec& spec, const Matrix& data);
Vector score(const CTSpec& spec, const Vector& y);
Matrix hessian(const CTSpec& spec, const Vector& y);

/// Sum of log densities and of raw scores over the rows of `data`.
double loglik_and_score(const CTSpec& spec, const Matrix& data, Vector& score_sum);

struct SampleDerivatives {
    double loglik = 0.0;
    Vector score_sum;
    Matrix hessian_sum;
    Matrix score_outer_sum;
    int count = 0;
};

SampleDerivatives sample_derivatives(const CTSpec& spec, const Matrix& data, bool with_hessian = true);

/// Expected information E[score score'] in raw coordinates. Xi blocks need every nu > 2.
Matrix fisher_information(const CTSpec& spec);

/// Jacobian of Xi_tilde -> canonicalize(Xi_tilde) with respect to vec(Xi_tilde), and its
/// Moore-Penrose inverse.
struct IdentifiedJacobian {
    Matrix m;
    Matrix m_pinv;
};

IdentifiedJacobian jacobian_identified(const Matrix& xi_tilde, const std::vector<int>& sizes);

/// Raw score with the Xi part mapped to identified coordinates, M^+' grad.
Vector identified_score(const CTSpec& spec, const Vector& y);

/// Raw Hessian with the Xi blocks mapped through M^+ plus the curvature term, the latter by
/// central differences of the pseudo-inverse Jacobian.
Matrix identified_hessian(const CTSpec& spec, const Vector& y, double step = 1e-6);

/// Expected information with the Xi blocks mapped as M^+' I M^+.
Matrix fisher_information_identified(const CTSpec& spec);

/// Reported coordinates: (mu if estimated; linear Xi parameters of the restriction; 1/nu_k for finite nu_k).
class ParamLayout {
public:
    ParamLayout(const ClusterStructure& structure, const std::vector<double>& dof, bool estimate_location);

    int size() const { return location_size_ + xi_size() + dof_size(); }
    int location_size() const { return location_size_; }
    int xi_size() const { return static_cast<int>(xi_basis_.cols()); }
    int dof_size() const { return static_cast<int>(finite_dof_.size()); }
    int dim() const { return n_; }
    const ClusterStructure& structure() const { return structure_; }

    /// vec(Xi) = xi_basis() * p_xi.
    const Matrix& xi_basis() const { return xi_basis_; }
    const std::vector<std::string>& names() const { return names_; }
    /// Cluster index of each reported dof coordinate.
    const std::vector<int>& finite_dof() const { return finite_dof_; }

    Vector pack(const CTSpec& spec) const;
    CTSpec unpack(const Vector& theta, const CTSpec& like) const;

    /// d(raw theta)/d(reported theta) at `spec`.
    Matrix raw_jacobian(const CTSpec& spec) const;
    Vector reported_score(const CTSpec& spec, const Vector& raw_score) const;
    Matrix reported_hessian(const CTSpec& spec, const Vector& raw_score, const Matrix& raw_hessian) const;
    Matrix reported_information(const CTSpec& spec, const Matrix& raw_information) const;

    /// Covariance of (mu, vec(Xi) with duplicates, 1/nu) from a reported-coordinate covariance.
    Matrix expand_covariance(const Matrix& cov) const;
    std::vector<std::string> expanded_names() const;

private:
    ClusterStructure structure_;
    int n_ = 0;
    int location_size_ = 0;
    Matrix xi_basis_;
    std::vector<int> finite_dof_;
    std::vector<std::string> names_;
};

struct CovariancePair {
    /// (1/T) J^{-1} I J^{-1} from per-observation Hessians and score outer products.
    Matrix sandwich;
    /// I(theta)^{-1}/T from the expected information (empty when it does not exist).
    Matrix fisher;
    bool fisher_available = false;
};

/// Both covariance estimates in the layout's reported coordinates.
CovariancePair sandwich_covariance(const CTSpec& spec, const Matrix& data, const ParamLayout& layout);

/// Kronecker product and commutation-matrix helpers.
Matrix kron(const Matrix& a, const Matrix& b);
/// K_{m,n} with K vec(Z) = vec(Z') for Z of size m x n.
Matrix commutation(int m, int n);

}  // namespace convot
