#pragma once

#include "convot/distribution.hpp"
#include "convot/identification.hpp"
#include "convot/likelihood.hpp"
#include "convot/marginal.hpp"
#include "convot/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace convot {

struct FitOptions {
    int max_iterations = 1000;
    /// Infinity norm of the summed score at the optimum.
    double gradient_tolerance = 1e-6;
    /// Relative size of the last Newton step.
    double parameter_tolerance = 1e-9;
    int multistart = 3;
    std::uint64_t seed = 1;
    bool standardized = false;
    bool estimate_location = true;
    /// Reorder clusters to maximise tr(Xi) (just-identified structure only).
    bool trace_max = true;
    /// Also compute the marginal/copula split of the log-likelihood (one quadrature per entry).
    bool decompose = false;
    QuadratureConfig quadrature;
    /// Threads used for the multistarts.
    int workers = 1;

    void validate() const;
};

struct ParameterEstimate {
    std::string name;
    double value = 0.0;
    double se_sandwich = 0.0;
    /// NaN when the expected information does not exist (some nu <= 2).
    double se_fisher = 0.0;
};

struct FitDiagnostics {
    bool converged = false;
    int lbfgs_iterations = 0;
    int newton_steps = 0;
    double score_norm = 0.0;
    bool hessian_negative_definite = false;
    int best_start = 0;
    std::vector<double> start_logliks;
    /// permutation[j] = cluster of the input structure placed at position j.
    std::vector<int> permutation;
};

struct FitResult {
    explicit FitResult(CTSpec s) : spec(std::move(s)) {}

    /// Canonical (and, when requested, trace-max ordered) fitted specification.
    CTSpec spec;
    ClusterStructure structure;
    std::vector<ParameterEstimate> estimates;
    Matrix cov_sandwich;
    Matrix cov_fisher;
    bool fisher_available = false;
    double loglik = 0.0;
    double loglik_marginal = 0.0;
    double loglik_copula = 0.0;
    bool decomposed = false;
    double bic = 0.0;
    int param_count = 0;
    int observations = 0;
    FitDiagnostics diagnostics;
};

/// Maximum likelihood fit. `dof_init` may be empty or hold NaN entries (moment-based start);
/// an infinite entry fixes that cluster as Gaussian.
FitResult fit_mle(const Matrix& data, const ClusterStructure& structure, const std::vector<double>& dof_init,
                  const FitOptions& opts = {});

struct LoglikParts {
    double total = 0.0;
    double marginal = 0.0;
    double copula = 0.0;
};

LoglikParts loglik_decompose(const CTSpec& spec, const Matrix& data, const QuadratureConfig& q = {});

/// -2 loglik + p log T.
double bic(double loglik, int param_count, int observations);
double bic(const FitResult& fit);

/// Panel with the first 22 rows dropped and the daily, weekly and monthly lag averages.
struct HARDataset {
    Matrix y;
    Matrix daily;
    Matrix weekly;
    Matrix monthly;
    std::vector<std::string> names;
};

HARDataset build_har_features(const Matrix& panel, const std::vector<std::string>& names = {});

struct HARSeries {
    std::string name;
    /// (xi, beta_d, beta_w, beta_m).
    Vector coef;
    Vector se;
    double mean = 0.0;
    double persistence = 0.0;
    double resid_std = 0.0;
};

struct HARResult {
    explicit HARResult(FitResult f) : fit(std::move(f)) {}

    std::vector<HARSeries> series;
    Matrix residuals;
    FitResult fit;
    /// Free parameters of the error distribution only.
    int param_count_distribution = 0;
    /// Adds the four regression coefficients per series.
    int param_count_total = 0;
    double bic_distribution = 0.0;
    double bic_total = 0.0;
};

/// Stage 1: per-series OLS with classical (or heteroskedasticity-robust) standard errors.
/// Stage 2: fit_mle on the residuals with the location fixed at zero.
HARResult fit_har_two_stage(const HARDataset& data, const ClusterStructure& structure,
                            const std::vector<double>& dof_init, FitOptions opts, bool robust_se = false);

}  // namespace convot
