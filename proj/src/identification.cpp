#include "convot/identification.hpp"

#include "convot/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace convot {

namespace {

std::vector<int> offsets_of(const std::vector<int>& sizes) {
    std::vector<int> off(sizes.size());
    int acc = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        off[k] = acc;
        acc += sizes[k];
    }
    return off;
}

int total_of(const std::vector<int>& sizes) { return std::accumulate(sizes.begin(), sizes.end(), 0); }

}  // namespace

void ClusterStructure::validate() const {
    ClusterIndex idx(cluster_sizes);
    if (restriction == Restriction::just_identified) return;
    if (restriction == Restriction::symmetric_xi) return;
    const std::vector<int> part = block_partition();
    if (total_of(part) != idx.dim()) throw DomainError("block partition must sum to the dimension");
    for (int b : part)
        if (b <= 0) throw DomainError("block sizes must be positive");
    // Each cluster must lie inside a single block.
    const std::vector<int> boff = offsets_of(part);
    for (int k = 0; k < idx.clusters(); ++k) {
        const int first = idx.offset(k);
        const int last = first + idx.size(k) - 1;
        auto block_of = [&](int i) {
            int b = 0;
            while (b + 1 < static_cast<int>(part.size()) && boff[b + 1] <= i) ++b;
            return b;
        };
        if (block_of(first) != block_of(last))
            throw DomainError("cluster " + std::to_string(k + 1) + " straddles two blocks of the partition");
    }
}

std::vector<int> ClusterStructure::block_partition() const { return blocks.empty() ? cluster_sizes : blocks; }

const char* restriction_name(Restriction r) {
    switch (r) {
        case Restriction::just_identified: return "just";
        case Restriction::symmetric_xi: return "sym";
        case Restriction::block: return "block";
        case Restriction::block_asymmetric: return "block-asym";
    }
    return "just";
}

Restriction parse_restriction(const std::string& s) {
    if (s == "just") return Restriction::just_identified;
    if (s == "sym") return Restriction::symmetric_xi;
    if (s == "block") return Restriction::block;
    if (s == "block-asym") return Restriction::block_asymmetric;
    throw IoError("unknown structure '" + s + "' (expected just, sym, block or block-asym)");
}

Matrix polar_factor(const Matrix& block, int cluster) {
    const Matrix s = block * block.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    const Vector& lambda = eig.eigenvalues();
    const double top = lambda.maxCoeff();
    if (!(top > 0.0) || !(lambda.minCoeff() > 1e-12 * top))
        throw DomainError("diagonal block of cluster " + std::to_string(cluster + 1) + " is numerically singular");
    const Matrix inv_sqrt =
        eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    return block.transpose() * inv_sqrt;
}

Matrix canonicalize(const Matrix& xi_tilde, const std::vector<int>& sizes) {
    const int n = total_of(sizes);
    if (xi_tilde.rows() != n || xi_tilde.cols() != n) throw DomainError("canonicalize: xi must be n x n");
    Matrix out(n, n);
    const std::vector<int> off = offsets_of(sizes);
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        const int o = off[k];
        const int m = sizes[k];
        const Matrix p = polar_factor(xi_tilde.block(o, o, m, m), static_cast<int>(k));
        out.middleCols(o, m) = xi_tilde.middleCols(o, m) * p;
        // Symmetrize the diagonal block to remove rounding asymmetry.
        const Matrix d = out.block(o, o, m, m);
        out.block(o, o, m, m) = 0.5 * (d + d.transpose());
    }
    return out;
}

PermutationResult trace_max_permutation(const Matrix& xi, const std::vector<int>& sizes,
                                        const std::vector<double>& dof) {
    const int k_count = static_cast<int>(sizes.size());
    if (k_count > 8)
        throw DomainError("trace_max_permutation: more than 8 clusters; supply a fixed cluster order instead");
    if (static_cast<int>(dof.size()) != k_count) throw DomainError("trace_max_permutation: dof length mismatch");
    const std::vector<int> off = offsets_of(sizes);
    std::vector<int> order(k_count);
    std::iota(order.begin(), order.end(), 0);
    bool have = false;
    PermutationResult best;
    do {
        std::vector<int> psizes(k_count);
        std::vector<double> pdof(k_count);
        Matrix pxi(xi.rows(), xi.cols());
        int col = 0;
        for (int j = 0; j < k_count; ++j) {
            const int k = order[j];
            psizes[j] = sizes[k];
            pdof[j] = dof[k];
            pxi.middleCols(col, sizes[k]) = xi.middleCols(off[k], sizes[k]);
            col += sizes[k];
        }
        Matrix canon;
        try {
            canon = canonicalize(pxi, psizes);
        } catch (const DomainError&) {
            continue;
        }
        const double tr = canon.trace();
        bool take = !have;
        if (have) {
            const double gap = tr - best.trace;
            if (std::abs(gap) < 1e-9 * std::abs(best.trace)) {
                std::vector<std::pair<int, double>> a, b;
                for (int j = 0; j < k_count; ++j) {
                    a.emplace_back(psizes[j], pdof[j]);
                    b.emplace_back(best.sizes[j], best.dof[j]);
                }
                take = a < b;
            } else {
                take = gap > 0.0;
            }
        }
        if (take) {
            best.order = order;
            best.xi = canon;
            best.dof = pdof;
            best.sizes = psizes;
            best.trace = tr;
            have = true;
        }
    } while (std::next_permutation(order.begin(), order.end()));
    if (!have) throw DomainError("trace_max_permutation: no cluster order has invertible diagonal blocks");
    return best;
}

Matrix build_block_xi(const BlockParams& params, const std::vector<int>& partition) {
    const int k_count = static_cast<int>(partition.size());
    if (static_cast<int>(params.diag.size()) != k_count || static_cast<int>(params.within.size()) != k_count ||
        params.between.rows() != k_count || params.between.cols() != k_count)
        throw DomainError("build_block_xi: parameter sizes do not match the partition");
    const int n = total_of(partition);
    const std::vector<int> off = offsets_of(partition);
    Matrix xi(n, n);
    for (int a = 0; a < k_count; ++a)
        for (int b = 0; b < k_count; ++b) {
            if (a == b) {
                const int m = partition[a];
                xi.block(off[a], off[a], m, m).setConstant(params.within[a]);
                for (int i = 0; i < m; ++i) xi(off[a] + i, off[a] + i) = params.diag[a];
            } else {
                xi.block(off[a], off[b], partition[a], partition[b]).setConstant(params.between(a, b));
            }
        }
    for (int a = 0; a < k_count; ++a) {
        const int m = partition[a];
        // Eigenvalues of d I + w(11' - I) are d + (m-1)w and d - w.
        const double d = params.diag[a];
        const double w = m > 1 ? params.within[a] : 0.0;
        if (std::abs(d + (m - 1) * w) < 1e-12 || (m > 1 && std::abs(d - w) < 1e-12))
            throw DomainError("build_block_xi: diagonal block " + std::to_string(a + 1) + " is not invertible");
    }
    return xi;
}

int block_param_count(const std::vector<int>& partition, bool symmetric) {
    const int k = static_cast<int>(partition.size());
    int singletons = 0;
    for (int m : partition)
        if (m == 1) ++singletons;
    return symmetric ? k * (k + 3) / 2 - singletons : k * (k + 1) - singletons;
}

std::vector<Matrix> omega_decomposition(const Matrix& xi, const std::vector<int>& sizes) {
    const std::vector<int> off = offsets_of(sizes);
    std::vector<Matrix> out;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        const Matrix cols = xi.middleCols(off[k], sizes[k]);
        out.push_back(cols * cols.transpose());
    }
    return out;
}

Matrix symmetric_expm(const Matrix& gamma) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (gamma + gamma.transpose()));
    return eig.eigenvectors() * eig.eigenvalues().array().exp().matrix().asDiagonal() *
           eig.eigenvectors().transpose();
}

Matrix symmetric_logm(const Matrix& spd) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (spd + spd.transpose()));
    if (!(eig.eigenvalues().minCoeff() > 0.0)) throw DomainError("symmetric_logm: matrix is not positive definite");
    return eig.eigenvectors() * eig.eigenvalues().array().log().matrix().asDiagonal() *
           eig.eigenvectors().transpose();
}

Matrix symmetric_block_param(const std::vector<Matrix>& gamma, const Matrix& offdiag,
                             const std::vector<int>& sizes) {
    const int n = total_of(sizes);
    if (offdiag.rows() != n || offdiag.cols() != n || gamma.size() != sizes.size())
        throw DomainError("symmetric_block_param: size mismatch");
    Matrix xi = offdiag;
    const std::vector<int> off = offsets_of(sizes);
    for (std::size_t k = 0; k < sizes.size(); ++k)
        xi.block(off[k], off[k], sizes[k], sizes[k]) = symmetric_expm(gamma[k]);
    return xi;
}

}  // namespace convot
