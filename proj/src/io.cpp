#include "convot/io.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace convot {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) out.push_back("");
    return out;
}

}  // namespace

KeyValues KeyValues::read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
    KeyValues kv;
    kv.origin_ = origin;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw IoError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (kv.values_.count(key)) throw IoError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv.values_[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

const std::string& KeyValues::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw IoError(origin_ + ": missing key '" + key + "'");
    return it->second;
}

std::string KeyValues::get(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

double KeyValues::get_double(const std::string& key) const {
    try {
        return parse_number(get(key));
    } catch (const IoError& e) {
        throw IoError(origin_ + ": key '" + key + "': " + e.what());
    }
}

double KeyValues::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

long KeyValues::get_int(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = get(key);
    std::size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != s.size() || s.empty()) throw IoError(origin_ + ": key '" + key + "' is not an integer: '" + s + "'");
    return v;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = get(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw IoError(origin_ + ": key '" + key + "' is not a boolean: '" + s + "'");
}

std::vector<double> KeyValues::get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& part : split(get(key), ',')) {
        try {
            out.push_back(parse_number(part));
        } catch (const IoError& e) {
            throw IoError(origin_ + ": key '" + key + "': " + e.what());
        }
    }
    return out;
}

std::vector<int> KeyValues::get_ints(const std::string& key) const {
    std::vector<int> out;
    for (double v : get_doubles(key)) {
        if (v != std::round(v) || !std::isfinite(v))
            throw IoError(origin_ + ": key '" + key + "' must hold integers");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

Matrix KeyValues::get_matrix(const std::string& key) const {
    const std::vector<std::string> rows = split(get(key), ';');
    std::vector<std::vector<double>> vals;
    for (const std::string& r : rows) {
        if (r.empty()) continue;
        std::vector<double> row;
        for (const std::string& part : split(r, ',')) row.push_back(parse_number(part));
        vals.push_back(row);
    }
    if (vals.empty()) throw IoError(origin_ + ": key '" + key + "' is empty");
    Matrix m(vals.size(), vals[0].size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (vals[i].size() != vals[0].size()) throw IoError(origin_ + ": key '" + key + "' has ragged rows");
        for (std::size_t j = 0; j < vals[i].size(); ++j) m(i, j) = vals[i][j];
    }
    return m;
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_number(const std::string& raw) {
    const std::string s = trim(raw);
    if (s == "inf" || s == "+inf" || s == "Inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf" || s == "-Inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    // strtod rather than stod: subnormal results are valid numbers here.
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || std::isspace(static_cast<unsigned char>(s[0])))
        throw IoError("not a number: '" + s + "'");
    if (errno == ERANGE && std::isinf(v)) throw IoError("number out of range: '" + s + "'");
    return v;
}

std::string join_numbers(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_number(v[i]);
    }
    return out;
}

CTSpec spec_from_keys(const KeyValues& kv) {
    const std::vector<int> sizes = kv.get_ints("clusters");
    const std::vector<double> dof = kv.get_doubles("dof");
    int n = 0;
    for (int s : sizes) n += s;
    const Matrix xi = kv.get_matrix("xi");
    Vector mu = Vector::Zero(n);
    if (kv.has("location")) {
        const std::vector<double> loc = kv.get_doubles("location");
        if (static_cast<int>(loc.size()) != n) throw IoError("location must have " + std::to_string(n) + " entries");
        mu = Eigen::Map<const Vector>(loc.data(), n);
    }
    return CTSpec(sizes, dof, mu, xi, kv.get_bool("standardized", false));
}

void write_spec(std::ostream& os, const CTSpec& spec) {
    std::string cl;
    for (std::size_t k = 0; k < spec.cluster_sizes().size(); ++k) cl += (k ? "," : "") + std::to_string(spec.cluster_sizes()[k]);
    os << "clusters = " << cl << "\n";
    os << "dof = " << join_numbers(spec.dof()) << "\n";
    os << "location = " << join_numbers(std::vector<double>(spec.location().begin(), spec.location().end())) << "\n";
    os << "xi = ";
    for (int i = 0; i < spec.dim(); ++i) {
        if (i) os << "; ";
        const Vector row = spec.xi().row(i).transpose();
        os << join_numbers(std::vector<double>(row.begin(), row.end()));
    }
    os << "\nstandardized = " << (spec.standardized() ? "true" : "false") << "\n";
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
    t.header = split(trim(line), ',');
    std::vector<std::vector<double>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty()) continue;
        const std::vector<std::string> parts = split(line, ',');
        if (parts.size() != t.header.size())
            throw IoError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                          " fields, found " + std::to_string(parts.size()));
        std::vector<double> row;
        for (const std::string& p : parts) {
            try {
                row.push_back(parse_number(p));
            } catch (const IoError& e) {
                throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
        rows.push_back(std::move(row));
    }
    t.values.resize(rows.size(), t.header.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) t.values(i, j) = rows[i][j];
    return t;
}

void write_csv(std::ostream& os, const std::vector<std::string>& header, const Matrix& values) {
    for (std::size_t j = 0; j < header.size(); ++j) os << (j ? "," : "") << header[j];
    os << "\n";
    for (int i = 0; i < values.rows(); ++i) {
        for (int j = 0; j < values.cols(); ++j) os << (j ? "," : "") << format_number(values(i, j));
        os << "\n";
    }
}

void write_csv(const std::string& path, const std::vector<std::string>& header, const Matrix& values) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    write_csv(out, header, values);
    if (!out) throw IoError("write to '" + path + "' failed");
}

void write_fit_keys(std::ostream& os, const FitResult& fit) {
    write_spec(os, fit.spec);
    os << "loglik = " << format_number(fit.loglik) << "\n";
    if (fit.decomposed) {
        os << "loglik_marginal = " << format_number(fit.loglik_marginal) << "\n";
        os << "loglik_copula = " << format_number(fit.loglik_copula) << "\n";
    }
    os << "bic = " << format_number(fit.bic) << "\n";
    os << "param_count = " << fit.param_count << "\n";
    os << "observations = " << fit.observations << "\n";
    std::string perm;
    for (std::size_t k = 0; k < fit.diagnostics.permutation.size(); ++k)
        perm += (k ? "," : "") + std::to_string(fit.diagnostics.permutation[k] + 1);
    os << "permutation = " << perm << "\n";
    os << "converged = " << (fit.diagnostics.converged ? "true" : "false") << "\n";
    os << "hessian_negative_definite = " << (fit.diagnostics.hessian_negative_definite ? "true" : "false") << "\n";
    os << "score_norm = " << format_number(fit.diagnostics.score_norm) << "\n";
    for (const ParameterEstimate& e : fit.estimates) {
        os << "estimate." << e.name << " = " << format_number(e.value) << "\n";
        os << "se_sandwich." << e.name << " = " << format_number(e.se_sandwich) << "\n";
        os << "se_fisher." << e.name << " = " << format_number(e.se_fisher) << "\n";
    }
}

void write_fit_report(std::ostream& os, const FitResult& fit) {
    std::ostringstream s;
    s << std::fixed;
    s << "observations " << fit.observations << ", parameters " << fit.param_count << "\n";
    s << std::setprecision(4) << "loglik " << fit.loglik;
    if (fit.decomposed) s << " (marginal " << fit.loglik_marginal << ", copula " << fit.loglik_copula << ")";
    s << "\nBIC " << fit.bic << "\n\n";
    s << std::left << std::setw(14) << "parameter" << std::right << std::setw(12) << "estimate" << std::setw(12)
      << "se" << std::setw(12) << "se(info)" << "\n";
    for (const ParameterEstimate& e : fit.estimates) {
        s << std::left << std::setw(14) << e.name << std::right << std::setprecision(4) << std::setw(12) << e.value
          << std::setw(12) << e.se_sandwich << std::setw(12);
        if (std::isnan(e.se_fisher)) s << "-";
        else s << e.se_fisher;
        s << "\n";
    }
    if (!fit.diagnostics.hessian_negative_definite) s << "\nwarning: Hessian is not negative definite at the optimum\n";
    os << s.str();
}

}  // namespace convot
