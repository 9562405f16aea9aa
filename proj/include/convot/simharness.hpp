#pragma once

#include "convot/distribution.hpp"
#include "convot/estimation.hpp"
#include "convot/identification.hpp"
#include "convot/io.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace convot {

struct MCConfig {
    explicit MCConfig(CTSpec t) : truth(std::move(t)) {}

    CTSpec truth;
    Restriction restriction = Restriction::just_identified;
    std::vector<int> blocks;
    /// Ascending.
    std::vector<int> sample_sizes;
    int replications = 2000;
    std::uint64_t seed = 1;
    int workers = 1;
    /// Add a T/2 run for every T so that R_sigma is available.
    bool companions = false;
    /// Fail the study when more than 1% of replications fail.
    bool strict = true;
    FitOptions fit;
    /// Resume file; empty disables checkpointing.
    std::string checkpoint;

    void validate() const;
};

/// Keys: the spec keys plus sizes, replications, seed, workers, structure, blocks, companions,
/// multistart, checkpoint.
MCConfig mc_config_from_keys(const KeyValues& kv);

struct ParameterSummary {
    double mean = 0.0;
    /// NaN with fewer than two successful replications.
    double std = 0.0;
    /// From the expected information at the truth; NaN when it does not exist.
    double astd = 0.0;
    double alpha_left = 0.0;
    double alpha_right = 0.0;
    /// Std at T/2 over Std at T; NaN when T/2 was not run.
    double r_sigma = 0.0;
};

struct SampleSizeResult {
    int sample_size = 0;
    bool companion = false;
    int failures = 0;
    /// Successful replications x parameters.
    Matrix estimates;
    std::vector<ParameterSummary> params;
};

struct MCStudyReport {
    std::vector<std::string> names;
    Vector truth;
    int replications = 0;
    std::vector<SampleSizeResult> results;
    /// Set when some sample size has fewer than two successes (Std undefined).
    bool std_undefined = false;
};

/// Seed for replication r at sample size T.
std::uint64_t replication_seed(std::uint64_t base, int sample_size, int replication);

/// Truth in the reported coordinates (mu, vec(Xi), 1/nu), canonicalized in the given cluster order.
Vector truth_vector(const CTSpec& truth, const MCConfig& cfg);

MCStudyReport run_mc_study(const MCConfig& cfg);
/// Same as run_mc_study with the T/2 companion runs switched on.
MCStudyReport run_rate_study(MCConfig cfg);

/// One row per parameter x sample size.
void write_report_csv(std::ostream& os, const MCStudyReport& report);
/// Parameter rows, one column group (Mean, Std, aStd, aL, aR, R) per sample size.
void write_report_text(std::ostream& os, const MCStudyReport& report);
/// Bin counts of the estimates per parameter and sample size.
void write_histograms(std::ostream& os, const MCStudyReport& report, int bins);

}  // namespace convot
