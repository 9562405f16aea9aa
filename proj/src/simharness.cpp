#include "convot/simharness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

namespace convot {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

ClusterStructure structure_of(const MCConfig& cfg) {
    return {cfg.truth.cluster_sizes(), cfg.restriction, cfg.blocks};
}

CTSpec canonical_truth(const MCConfig& cfg) {
    if (cfg.restriction != Restriction::just_identified) return cfg.truth;
    return cfg.truth.with_xi(canonicalize(cfg.truth.xi(), cfg.truth.cluster_sizes()));
}

Vector expanded_values(const CTSpec& s, bool with_location) {
    const int n = s.dim();
    std::vector<double> v;
    if (with_location)
        for (int i = 0; i < n; ++i) v.push_back(s.location()(i));
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) v.push_back(s.xi()(i, j));
    for (double nu : s.dof())
        if (!is_gaussian(nu)) v.push_back(1.0 / nu);
    return Eigen::Map<const Vector>(v.data(), static_cast<int>(v.size()));
}

std::string sizes_text(const std::vector<int>& sizes) {
    std::string out;
    for (std::size_t i = 0; i < sizes.size(); ++i) out += (i ? " " : "") + std::to_string(sizes[i]);
    return out;
}

}  // namespace

void MCConfig::validate() const {
    if (replications < 1) throw DomainError("mc config: replications must be at least 1");
    if (workers < 1) throw DomainError("mc config: workers must be at least 1");
    if (sample_sizes.empty()) throw DomainError("mc config: at least one sample size is required");
    for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
        if (sample_sizes[i] < 2) throw DomainError("mc config: sample sizes must be at least 2");
        if (i > 0 && sample_sizes[i] <= sample_sizes[i - 1])
            throw DomainError("mc config: sample sizes must be strictly ascending");
    }
    ClusterStructure{truth.cluster_sizes(), restriction, blocks}.validate();
    fit.validate();
}

MCConfig mc_config_from_keys(const KeyValues& kv) {
    MCConfig cfg(spec_from_keys(kv));
    cfg.sample_sizes = kv.get_ints("sizes");
    cfg.replications = static_cast<int>(kv.get_int("replications", 2000));
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    cfg.workers = static_cast<int>(kv.get_int("workers", 1));
    cfg.restriction = parse_restriction(kv.get("structure", "just"));
    if (kv.has("blocks")) cfg.blocks = kv.get_ints("blocks");
    cfg.companions = kv.get_bool("companions", false);
    cfg.strict = kv.get_bool("strict", true);
    cfg.fit.multistart = static_cast<int>(kv.get_int("multistart", cfg.fit.multistart));
    cfg.fit.estimate_location = kv.get_bool("estimate_location", true);
    cfg.checkpoint = kv.get("checkpoint", "");
    return cfg;
}

std::uint64_t replication_seed(std::uint64_t base, int sample_size, int replication) {
    std::uint64_t h = splitmix64(base);
    h = splitmix64(h ^ static_cast<std::uint64_t>(sample_size));
    return splitmix64(h ^ (static_cast<std::uint64_t>(replication) << 1));
}

Vector truth_vector(const CTSpec& truth, const MCConfig& cfg) {
    MCConfig c = cfg;
    c.truth = truth;
    return expanded_values(canonical_truth(c), cfg.fit.estimate_location);
}

MCStudyReport run_mc_study(const MCConfig& cfg) {
    cfg.validate();
    const CTSpec truth = canonical_truth(cfg);
    const ClusterStructure structure = structure_of(cfg);
    const bool with_loc = cfg.fit.estimate_location;
    const ParamLayout layout(structure, truth.dof(), with_loc);

    MCStudyReport report;
    report.names = layout.expanded_names();
    report.truth = expanded_values(truth, with_loc);
    report.replications = cfg.replications;
    const int p = static_cast<int>(report.truth.size());

    // Sample sizes to run, companions included, ascending and unique.
    std::map<int, bool> plan;  // T -> companion only
    for (int t : cfg.sample_sizes) plan[t] = false;
    if (cfg.companions)
        for (int t : cfg.sample_sizes)
            if (t % 2 == 0 && !plan.count(t / 2)) plan[t / 2] = true;
    std::vector<int> sizes;
    for (const auto& [t, comp] : plan) sizes.push_back(t);

    FitOptions fo = cfg.fit;
    fo.standardized = truth.standardized();
    fo.trace_max = false;  // keep the truth's cluster order so that estimates are comparable
    fo.decompose = false;
    fo.workers = 1;
    std::vector<double> dof_init(truth.dof().size(), kNan);
    for (std::size_t k = 0; k < dof_init.size(); ++k)
        if (is_gaussian(truth.dof()[k])) dof_init[k] = kGaussianDof;

    const int total = static_cast<int>(sizes.size()) * cfg.replications;
    std::vector<std::optional<Vector>> results(total);
    std::vector<char> done(total, 0);

    // Resume from the checkpoint.
    const std::string header = "# checkpoint seed=" + std::to_string(cfg.seed) + " params=" + std::to_string(p) +
                               " sizes=" + sizes_text(sizes) + " replications=" + std::to_string(cfg.replications);
    std::map<int, int> size_pos;
    for (std::size_t i = 0; i < sizes.size(); ++i) size_pos[sizes[i]] = static_cast<int>(i);
    std::ofstream ck;
    if (!cfg.checkpoint.empty()) {
        std::ifstream in(cfg.checkpoint);
        bool fresh = true;
        if (in) {
            std::string line;
            if (std::getline(in, line)) {
                if (line != header)
                    throw IoError("checkpoint '" + cfg.checkpoint + "' belongs to a different configuration");
                fresh = false;
                while (std::getline(in, line)) {
                    std::istringstream ls(line);
                    std::string f_t, f_r, status;
                    if (!std::getline(ls, f_t, ',') || !std::getline(ls, f_r, ',') || !std::getline(ls, status, ','))
                        continue;  // partial trailing line
                    const auto it = size_pos.find(std::stoi(f_t));
                    const int r = std::stoi(f_r);
                    if (it == size_pos.end() || r < 0 || r >= cfg.replications) continue;
                    const int idx = it->second * cfg.replications + r;
                    if (status == "ok") {
                        Vector v(p);
                        std::string field;
                        int c = 0;
                        while (c < p && std::getline(ls, field, ',')) v(c++) = parse_number(field);
                        if (c != p) continue;
                        results[idx] = v;
                    }
                    done[idx] = 1;
                }
            }
        }
        ck.open(cfg.checkpoint, std::ios::app);
        if (!ck) throw IoError("cannot write checkpoint '" + cfg.checkpoint + "'");
        if (fresh) ck << header << "\n" << std::flush;
    }

    std::mutex ck_mutex;
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int idx = next.fetch_add(1);
            if (idx >= total) return;
            if (done[idx]) continue;
            const int t = sizes[idx / cfg.replications];
            const int r = idx % cfg.replications;
            std::optional<Vector> est;
            try {
                const Matrix data = sample(truth, t, replication_seed(cfg.seed, t, r));
                FitOptions o = fo;
                o.seed = replication_seed(cfg.seed ^ 0x5bd1e995ULL, t, r);
                const FitResult fit = fit_mle(data, structure, dof_init, o);
                est = expanded_values(fit.spec, with_loc);
            } catch (const DomainError&) {
                est.reset();
            }
            results[idx] = est;
            if (ck.is_open()) {
                std::ostringstream line;
                line << t << "," << r << ",";
                if (est) {
                    line << "ok";
                    for (int c = 0; c < p; ++c) line << "," << format_number((*est)(c));
                } else {
                    line << "fail";
                }
                std::lock_guard<std::mutex> lock(ck_mutex);
                ck << line.str() << "\n" << std::flush;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < cfg.workers; ++w) pool.emplace_back(worker);
    worker();
    for (std::thread& th : pool) th.join();

    // Ordered aggregation.
    const Matrix info = [&]() -> Matrix {
        try {
            return layout.reported_information(truth, fisher_information(truth));
        } catch (const DomainError&) {
            return Matrix();
        }
    }();
    int worst_failures = 0;
    for (std::size_t si = 0; si < sizes.size(); ++si) {
        SampleSizeResult res;
        res.sample_size = sizes[si];
        res.companion = plan[sizes[si]];
        std::vector<Vector> ok;
        for (int r = 0; r < cfg.replications; ++r) {
            const auto& e = results[si * cfg.replications + r];
            if (e) ok.push_back(*e);
            else ++res.failures;
        }
        worst_failures = std::max(worst_failures, res.failures);
        res.estimates.resize(static_cast<int>(ok.size()), p);
        for (std::size_t r = 0; r < ok.size(); ++r) res.estimates.row(static_cast<int>(r)) = ok[r].transpose();
        Vector astd = Vector::Constant(p, kNan);
        if (info.size() > 0) {
            Eigen::FullPivLU<Matrix> lu(info);
            if (lu.isInvertible())
                astd = layout.expand_covariance(lu.inverse() / static_cast<double>(res.sample_size))
                           .diagonal()
                           .cwiseSqrt();
        }
        const int m = static_cast<int>(ok.size());
        if (m < 2) report.std_undefined = true;
        for (int c = 0; c < p; ++c) {
            ParameterSummary ps;
            const Vector col = res.estimates.col(c);
            ps.mean = m > 0 ? col.mean() : kNan;
            ps.std = m > 1 ? std::sqrt((col.array() - ps.mean).square().sum() / (m - 1)) : kNan;
            ps.astd = astd(c);
            const double scale = std::isnan(ps.astd) ? ps.std : ps.astd;
            int left = 0, right = 0;
            for (int r = 0; r < m; ++r) {
                const double z = (col(r) - report.truth(c)) / scale;
                if (z < -1.96) ++left;
                if (z > 1.96) ++right;
            }
            ps.alpha_left = m > 0 && scale > 0.0 ? static_cast<double>(left) / m : kNan;
            ps.alpha_right = m > 0 && scale > 0.0 ? static_cast<double>(right) / m : kNan;
            ps.r_sigma = kNan;
            res.params.push_back(ps);
        }
        report.results.push_back(std::move(res));
    }
    for (SampleSizeResult& res : report.results) {
        if (res.sample_size % 2 != 0) continue;
        for (const SampleSizeResult& half : report.results) {
            if (half.sample_size != res.sample_size / 2) continue;
            for (int c = 0; c < p; ++c) res.params[c].r_sigma = half.params[c].std / res.params[c].std;
        }
    }
    if (cfg.strict && worst_failures > 0.01 * cfg.replications)
        throw DomainError("mc study: " + std::to_string(worst_failures) + " of " + std::to_string(cfg.replications) +
                          " replications failed at one sample size (more than 1%)");
    return report;
}

MCStudyReport run_rate_study(MCConfig cfg) {
    cfg.companions = true;
    return run_mc_study(cfg);
}

void write_report_csv(std::ostream& os, const MCStudyReport& report) {
    os << "parameter,T,companion,truth,mean,std,astd,alpha_left,alpha_right,r_sigma,successes,failures\n";
    for (std::size_t c = 0; c < report.names.size(); ++c)
        for (const SampleSizeResult& res : report.results) {
            const ParameterSummary& ps = res.params[c];
            os << report.names[c] << "," << res.sample_size << "," << (res.companion ? 1 : 0) << ","
               << format_number(report.truth(static_cast<int>(c))) << "," << format_number(ps.mean) << ","
               << format_number(ps.std) << "," << format_number(ps.astd) << "," << format_number(ps.alpha_left)
               << "," << format_number(ps.alpha_right) << "," << format_number(ps.r_sigma) << ","
               << res.estimates.rows() << "," << res.failures << "\n";
        }
}

void write_report_text(std::ostream& os, const MCStudyReport& report) {
    std::ostringstream s;
    s << std::fixed;
    for (const SampleSizeResult& res : report.results) {
        s << "T = " << res.sample_size << (res.companion ? " (companion)" : "") << ", " << res.estimates.rows()
          << " replications, " << res.failures << " failed\n";
        s << std::left << std::setw(12) << "parameter" << std::right << std::setw(9) << "true" << std::setw(9)
          << "Mean" << std::setw(9) << "Std" << std::setw(9) << "aStd" << std::setw(9) << "aL" << std::setw(9)
          << "aR" << std::setw(9) << "R" << "\n";
        for (std::size_t c = 0; c < report.names.size(); ++c) {
            const ParameterSummary& ps = res.params[c];
            s << std::left << std::setw(12) << report.names[c] << std::right << std::setprecision(4) << std::setw(9)
              << report.truth(static_cast<int>(c)) << std::setw(9) << ps.mean << std::setw(9) << ps.std
              << std::setw(9) << ps.astd << std::setw(9) << ps.alpha_left << std::setw(9) << ps.alpha_right
              << std::setw(9) << ps.r_sigma << "\n";
        }
        s << "\n";
    }
    if (report.std_undefined) s << "note: Std is undefined where fewer than two replications succeeded\n";
    os << s.str();
}

void write_histograms(std::ostream& os, const MCStudyReport& report, int bins) {
    if (bins < 1) throw DomainError("histogram: bins must be at least 1");
    os << "parameter,T,bin_low,bin_high,count\n";
    for (std::size_t c = 0; c < report.names.size(); ++c)
        for (const SampleSizeResult& res : report.results) {
            if (res.estimates.rows() == 0) continue;
            const Vector col = res.estimates.col(static_cast<int>(c));
            const double lo = col.minCoeff();
            double hi = col.maxCoeff();
            if (hi <= lo) hi = lo + 1.0;
            std::vector<int> counts(bins, 0);
            for (int r = 0; r < col.size(); ++r) {
                const int b = std::min(bins - 1, static_cast<int>((col(r) - lo) / (hi - lo) * bins));
                ++counts[b];
            }
            for (int b = 0; b < bins; ++b)
                os << report.names[c] << "," << res.sample_size << "," << format_number(lo + (hi - lo) * b / bins)
                   << "," << format_number(lo + (hi - lo) * (b + 1) / bins) << "," << counts[b] << "\n";
        }
}

}  // namespace convot
