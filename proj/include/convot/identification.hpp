#pragma once

#include "convot/types.hpp"

#include <string>
#include <vector>

namespace convot {

enum class Restriction { just_identified, symmetric_xi, block, block_asymmetric };

/// Cluster partition plus the restriction imposed on Xi. For the block forms
/// `blocks` gives the block partition (each cluster must lie inside one block).
struct ClusterStructure {
    std::vector<int> cluster_sizes;
    Restriction restriction = Restriction::just_identified;
    std::vector<int> blocks;

    void validate() const;
    /// Block partition actually used (cluster sizes when `blocks` is empty).
    std::vector<int> block_partition() const;
};

const char* restriction_name(Restriction r);
Restriction parse_restriction(const std::string& s);

/// Xi = Xi_tilde * diag(P_11, ..., P_KK) with symmetric positive definite diagonal blocks.
Matrix canonicalize(const Matrix& xi_tilde, const std::vector<int>& sizes);

/// P_kk = B'(BB')^{-1/2} for the diagonal block B.
Matrix polar_factor(const Matrix& block, int cluster);

struct PermutationResult {
    /// order[j] = original cluster placed at position j.
    std::vector<int> order;
    Matrix xi;
    std::vector<double> dof;
    std::vector<int> sizes;
    double trace = 0.0;
};

/// Reorders clusters to maximise tr(Xi) after re-canonicalization. K <= 8.
PermutationResult trace_max_permutation(const Matrix& xi, const std::vector<int>& sizes,
                                        const std::vector<double>& dof);

/// Parameters of a block matrix over a partition with K blocks.
/// diag[b] = d_b; within[b] = off-diagonal value inside diagonal block b (ignored for singletons);
/// between(a, b) = constant value of block (a, b), a != b.
struct BlockParams {
    std::vector<double> diag;
    std::vector<double> within;
    Matrix between;
};

Matrix build_block_xi(const BlockParams& params, const std::vector<int>& partition);

/// Free-parameter count of a block Xi: K(K+1) - singletons, or K(K+3)/2 - singletons when symmetric.
int block_param_count(const std::vector<int>& partition, bool symmetric);

/// Omega_k = Xi_k Xi_k' for each block column.
std::vector<Matrix> omega_decomposition(const Matrix& xi, const std::vector<int>& sizes);

/// Symmetric matrix exponential and logarithm via eigendecomposition.
Matrix symmetric_expm(const Matrix& gamma);
Matrix symmetric_logm(const Matrix& spd);

/// Xi with diagonal blocks exp(gamma_k) and the off-diagonal blocks taken from `offdiag`
/// (its diagonal blocks are ignored).
Matrix symmetric_block_param(const std::vector<Matrix>& gamma, const Matrix& offdiag,
                             const std::vector<int>& sizes);

}  // namespace convot
