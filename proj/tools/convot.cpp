#include "convot/approximation.hpp"
#include "convot/distribution.hpp"
#include "convot/estimation.hpp"
#include "convot/io.hpp"
#include "convot/marginal.hpp"
#include "convot/simharness.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

using namespace convot;

namespace {

// Output sink: a file, or stdout for "-" / empty.
class Sink {
public:
    explicit Sink(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_) throw IoError("cannot write '" + path + "'");
        }
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }
    void finish() {
        stream().flush();
        if (!stream()) throw IoError("write failed");
    }

private:
    std::unique_ptr<std::ofstream> file_;
};

std::vector<int> parse_int_list(const std::string& s, const char* what) {
    std::vector<int> out;
    if (s.empty()) return out;
    const KeyValues kv = KeyValues::parse(std::string("v = ") + s, what);
    return kv.get_ints("v");
}

std::vector<double> parse_double_list(const std::string& s, const char* what) {
    if (s.empty()) return {};
    const KeyValues kv = KeyValues::parse(std::string("v = ") + s, what);
    return kv.get_doubles("v");
}

struct Grid {
    double lo, hi, step;
};

Grid parse_grid(const std::string& s) {
    std::vector<double> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(parse_number(item));
    if (parts.size() != 3) throw IoError("--grid expects lo:hi:step");
    if (!(parts[2] > 0.0) || !(parts[1] >= parts[0])) throw IoError("--grid needs step > 0 and hi >= lo");
    return {parts[0], parts[1], parts[2]};
}

int default_workers() {
    if (const char* env = std::getenv("CONVOT_WORKERS")) {
        try {
            const int w = std::stoi(env);
            if (w >= 1) return w;
        } catch (const std::exception&) {
        }
    }
    return 1;
}

Vector beta_for(const CTSpec& spec, int coord, const std::string& beta_text) {
    if (!beta_text.empty()) {
        const std::vector<double> b = parse_double_list(beta_text, "--beta");
        if (static_cast<int>(b.size()) != spec.dim()) throw IoError("--beta must have one entry per coordinate");
        return Eigen::Map<const Vector>(b.data(), spec.dim());
    }
    if (coord < 1 || coord > spec.dim()) throw DomainError("--coord must lie in 1.." + std::to_string(spec.dim()));
    return Vector::Unit(spec.dim(), coord - 1);
}

ClusterStructure structure_from(const std::string& clusters, const std::string& structure, const std::string& blocks,
                                int dim) {
    ClusterStructure cs;
    cs.cluster_sizes = parse_int_list(clusters, "--clusters");
    if (cs.cluster_sizes.empty()) cs.cluster_sizes = {dim};
    cs.restriction = parse_restriction(structure);
    cs.blocks = parse_int_list(blocks, "--blocks");
    return cs;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"convot: convolution-t distributions, estimation and simulation studies", "convot"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Print help for all subcommands");

    std::string spec_path, config_path, data_path, out_path = "-", grid_text, beta_text, clusters, structure = "just",
                                                  blocks, dof_text, text_path, hist_path, checkpoint;
    std::uint64_t seed = 1;
    int count = 0, coord = 1, workers = default_workers(), multistart = 3, bins = 50;
    double atol = QuadratureConfig{}.atol, rtol = QuadratureConfig{}.rtol;
    bool standardized = false, with_cdf = false, fixed_location = false, decompose = false, robust = false;
    std::string alphas_text = "0.01,0.025,0.05,0.1";

    auto add_quadrature = [&](CLI::App* sub) {
        sub->add_option("--atol", atol, "Absolute tolerance of the inversion integrals")->capture_default_str();
        sub->add_option("--rtol", rtol, "Relative tolerance of the inversion integrals")->capture_default_str();
    };

    CLI::App* s_sample = app.add_subcommand("sample", "Draw from a specification");
    s_sample->add_option("--spec", spec_path, "Specification file (key = value)")->required();
    s_sample->add_option("--count", count, "Number of draws")->required()->check(CLI::PositiveNumber);
    s_sample->add_option("--seed", seed, "Random seed")->capture_default_str();
    s_sample->add_option("--out", out_path, "Output CSV ('-' for stdout)")->capture_default_str();

    CLI::App* s_density = app.add_subcommand("density", "Log density of each row of a data file");
    s_density->add_option("--spec", spec_path, "Specification file")->required();
    s_density->add_option("--data", data_path, "Input CSV with a header row")->required();
    s_density->add_option("--out", out_path, "Output CSV ('-' for stdout)")->capture_default_str();

    CLI::App* s_marginal = app.add_subcommand("marginal", "Marginal density (and cdf) of beta'Y on a grid");
    s_marginal->add_option("--spec", spec_path, "Specification file")->required();
    s_marginal->add_option("--coord", coord, "1-based coordinate (ignored with --beta)")->capture_default_str();
    s_marginal->add_option("--beta", beta_text, "Comma-separated weights");
    s_marginal->add_option("--grid", grid_text, "lo:hi:step")->required();
    s_marginal->add_flag("--cdf", with_cdf, "Also emit the cdf");
    add_quadrature(s_marginal);
    s_marginal->add_option("--out", out_path, "Output CSV ('-' for stdout)")->capture_default_str();

    CLI::App* s_fit = app.add_subcommand("fit", "Maximum likelihood fit");
    s_fit->add_option("--data", data_path, "Input CSV with a header row")->required();
    s_fit->add_option("--clusters", clusters, "Comma-separated cluster sizes (default: one cluster)");
    s_fit->add_option("--structure", structure, "just | sym | block | block-asym")->capture_default_str();
    s_fit->add_option("--blocks", blocks, "Comma-separated block partition for the block structures");
    s_fit->add_option("--dof", dof_text, "Starting dof per cluster; inf fixes a Gaussian cluster");
    s_fit->add_flag("--standardized", standardized, "Use the unit-variance cluster form");
    s_fit->add_flag("--fixed-location", fixed_location, "Keep the location at zero");
    s_fit->add_flag("--decompose", decompose, "Report the marginal and copula parts of the log-likelihood");
    s_fit->add_option("--multistart", multistart, "Number of starts")->capture_default_str()->check(CLI::PositiveNumber);
    s_fit->add_option("--seed", seed, "Seed for the perturbed starts")->capture_default_str();
    s_fit->add_option("--workers", workers, "Threads for the starts (default: CONVOT_WORKERS or 1)")
        ->check(CLI::PositiveNumber);
    add_quadrature(s_fit);
    s_fit->add_option("--out", out_path, "Key-value result file ('-' for stdout)")->capture_default_str();
    s_fit->add_option("--report", text_path, "Text report file (default: stderr)");

    CLI::App* s_har = app.add_subcommand("har", "Two-stage HAR regression and error-distribution fit");
    s_har->add_option("--data", data_path, "Panel CSV, one column per series")->required();
    s_har->add_option("--clusters", clusters, "Comma-separated cluster sizes (default: one cluster)");
    s_har->add_option("--structure", structure, "just | sym | block | block-asym")->capture_default_str();
    s_har->add_option("--blocks", blocks, "Comma-separated block partition for the block structures");
    s_har->add_option("--dof", dof_text, "Starting dof per cluster; inf fixes a Gaussian cluster");
    s_har->add_flag("--standardized", standardized, "Use the unit-variance cluster form");
    s_har->add_flag("--robust", robust, "Heteroskedasticity-robust stage-1 standard errors");
    s_har->add_option("--multistart", multistart, "Number of starts")->capture_default_str()->check(CLI::PositiveNumber);
    s_har->add_option("--seed", seed, "Seed for the perturbed starts")->capture_default_str();
    s_har->add_option("--out", out_path, "Key-value result file ('-' for stdout)")->capture_default_str();

    CLI::App* s_approx = app.add_subcommand("approx", "t approximations of a marginal with VaR and ES");
    s_approx->add_option("--spec", spec_path, "Specification file")->required();
    s_approx->add_option("--coord", coord, "1-based coordinate (ignored with --beta)")->capture_default_str();
    s_approx->add_option("--beta", beta_text, "Comma-separated weights");
    s_approx->add_option("--alphas", alphas_text, "Comma-separated tail probabilities")->capture_default_str();
    add_quadrature(s_approx);
    s_approx->add_option("--out", out_path, "Output CSV ('-' for stdout)")->capture_default_str();

    auto add_study = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Study configuration file")->required();
        sub->add_option("--out", out_path, "Report CSV ('-' for stdout)")->capture_default_str();
        sub->add_option("--text", text_path, "Formatted table file");
        sub->add_option("--histograms", hist_path, "Histogram CSV file");
        sub->add_option("--bins", bins, "Histogram bins")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--checkpoint", checkpoint, "Resume file (overrides the config)");
        sub->add_option("--seed", seed, "Base seed (overrides the config)");
        sub->add_option("--workers", workers, "Worker threads (default: CONVOT_WORKERS or 1)")
            ->check(CLI::PositiveNumber);
    };
    CLI::App* s_simulate = app.add_subcommand("simulate", "Monte Carlo study of the estimator");
    add_study(s_simulate);
    CLI::App* s_rates = app.add_subcommand("rates", "Monte Carlo study with T/2 companion runs for R_sigma");
    add_study(s_rates);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const QuadratureConfig quad{atol, rtol};
    try {
        if (s_sample->parsed()) {
            const CTSpec spec = spec_from_keys(KeyValues::read(spec_path));
            const Matrix draws = sample(spec, count, seed);
            std::vector<std::string> header;
            for (int i = 0; i < spec.dim(); ++i) header.push_back("y" + std::to_string(i + 1));
            Sink sink(out_path);
            write_csv(sink.stream(), header, draws);
            sink.finish();
        } else if (s_density->parsed()) {
            const CTSpec spec = spec_from_keys(KeyValues::read(spec_path));
            const CsvTable data = read_csv(data_path);
            if (data.values.cols() != spec.dim()) throw IoError("data columns do not match the specification");
            Matrix out(data.values.rows(), 1);
            for (int t = 0; t < data.values.rows(); ++t) out(t, 0) = log_density(spec, data.values.row(t).transpose());
            Sink sink(out_path);
            write_csv(sink.stream(), {"log_density"}, out);
            sink.finish();
        } else if (s_marginal->parsed()) {
            const CTSpec spec = spec_from_keys(KeyValues::read(spec_path));
            const MarginalSpec m = marginal_of(spec, beta_for(spec, coord, beta_text));
            const Grid g = parse_grid(grid_text);
            const int points = static_cast<int>(std::floor((g.hi - g.lo) / g.step + 1e-9)) + 1;
            Matrix out(points, with_cdf ? 3 : 2);
            for (int i = 0; i < points; ++i) {
                const double y = g.lo + i * g.step;
                out(i, 0) = y;
                out(i, 1) = marginal_pdf(m, y, quad);
                if (with_cdf) out(i, 2) = marginal_cdf(m, y, quad);
            }
            Sink sink(out_path);
            write_csv(sink.stream(), with_cdf ? std::vector<std::string>{"y", "pdf", "cdf"}
                                              : std::vector<std::string>{"y", "pdf"},
                      out);
            sink.finish();
        } else if (s_fit->parsed() || s_har->parsed()) {
            const CsvTable data = read_csv(data_path);
            const ClusterStructure cs =
                structure_from(clusters, structure, blocks, static_cast<int>(data.values.cols()));
            FitOptions opts;
            opts.standardized = standardized;
            opts.multistart = multistart;
            opts.seed = seed;
            opts.workers = workers;
            opts.quadrature = quad;
            const std::vector<double> dof = parse_double_list(dof_text, "--dof");
            Sink sink(out_path);
            if (s_fit->parsed()) {
                opts.estimate_location = !fixed_location;
                opts.decompose = decompose;
                const FitResult fit = fit_mle(data.values, cs, dof, opts);
                write_fit_keys(sink.stream(), fit);
                if (text_path.empty()) {
                    write_fit_report(std::cerr, fit);
                } else {
                    Sink rep(text_path);
                    write_fit_report(rep.stream(), fit);
                    rep.finish();
                }
            } else {
                const HARDataset har = build_har_features(data.values, data.header);
                const HARResult res = fit_har_two_stage(har, cs, dof, opts, robust);
                std::ostream& os = sink.stream();
                for (const HARSeries& s : res.series) {
                    const char* labels[] = {"xi", "beta_d", "beta_w", "beta_m"};
                    for (int j = 0; j < 4; ++j) {
                        os << "har." << s.name << "." << labels[j] << " = " << format_number(s.coef(j)) << "\n";
                        os << "har." << s.name << ".se_" << labels[j] << " = " << format_number(s.se(j)) << "\n";
                    }
                    os << "har." << s.name << ".mean = " << format_number(s.mean) << "\n";
                    os << "har." << s.name << ".persistence = " << format_number(s.persistence) << "\n";
                    os << "har." << s.name << ".resid_std = " << format_number(s.resid_std) << "\n";
                }
                os << "param_count_distribution = " << res.param_count_distribution << "\n";
                os << "param_count_total = " << res.param_count_total << "\n";
                os << "bic_distribution = " << format_number(res.bic_distribution) << "\n";
                os << "bic_total = " << format_number(res.bic_total) << "\n";
                write_fit_keys(os, res.fit);
                write_fit_report(std::cerr, res.fit);
            }
            sink.finish();
        } else if (s_approx->parsed()) {
            const CTSpec spec = spec_from_keys(KeyValues::read(spec_path));
            const MarginalSpec m = marginal_of(spec, beta_for(spec, coord, beta_text));
            const std::vector<double> alphas = parse_double_list(alphas_text, "--alphas");
            struct Row {
                std::string method;
                TApprox a;
                double klic;
            };
            std::vector<Row> rows;
            const KLFit kl = kl_best_t(m, quad);
            if (!std::isnan(kl.klic_moment_match)) rows.push_back({"moments", moment_match_t(m), kl.klic_moment_match});
            rows.push_back({"kl", kl.approx, kl.klic});
            Sink sink(out_path);
            std::ostream& os = sink.stream();
            os << "method,location,scale2,dof,klic,alpha,var,es\n";
            for (const Row& r : rows)
                for (double alpha : alphas) {
                    const RiskMeasures rm = var_es(r.a, alpha);
                    os << r.method << "," << format_number(r.a.location) << "," << format_number(r.a.scale2) << ","
                       << format_number(r.a.dof) << "," << format_number(r.klic) << "," << format_number(alpha) << ","
                       << format_number(rm.var) << "," << format_number(rm.es) << "\n";
                }
            sink.finish();
        } else if (s_simulate->parsed() || s_rates->parsed()) {
            const KeyValues kv = KeyValues::read(config_path);
            MCConfig cfg = mc_config_from_keys(kv);
            if (!s_simulate->get_option("--workers")->empty() || !s_rates->get_option("--workers")->empty() ||
                !kv.has("workers"))
                cfg.workers = workers;
            if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
            if (!s_simulate->get_option("--seed")->empty() || !s_rates->get_option("--seed")->empty()) cfg.seed = seed;
            const MCStudyReport report = s_rates->parsed() ? run_rate_study(cfg) : run_mc_study(cfg);
            Sink sink(out_path);
            write_report_csv(sink.stream(), report);
            sink.finish();
            if (!text_path.empty()) {
                Sink t(text_path);
                write_report_text(t.stream(), report);
                t.finish();
            }
            if (!hist_path.empty()) {
                Sink h(hist_path);
                write_histograms(h.stream(), report, bins);
                h.finish();
            }
        }
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
