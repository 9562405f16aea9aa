#pragma once

#include "convot/distribution.hpp"
#include "convot/estimation.hpp"
#include "convot/types.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace convot {

/// Flat `key = value` file; '#' starts a comment. Throws IoError on malformed lines or duplicate keys.
class KeyValues {
public:
    static KeyValues read(const std::string& path);
    static KeyValues parse(const std::string& text, const std::string& origin = "<text>");

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const std::string& get(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long get_int(const std::string& key, long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key) const;
    std::vector<int> get_ints(const std::string& key) const;
    /// Rows separated by ';', entries by ','.
    Matrix get_matrix(const std::string& key) const;
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::string origin_;
};

/// Number with 17 significant digits ("inf" / "-inf" / "nan" for non-finite values).
std::string format_number(double v);
/// Parses a number; accepts inf, -inf and nan. Throws IoError.
double parse_number(const std::string& s);
std::string join_numbers(const std::vector<double>& v);

/// Keys: clusters, dof, location (optional, default 0), xi, standardized (optional).
CTSpec spec_from_keys(const KeyValues& kv);
void write_spec(std::ostream& os, const CTSpec& spec);

struct CsvTable {
    std::vector<std::string> header;
    Matrix values;
};

CsvTable read_csv(const std::string& path);
void write_csv(std::ostream& os, const std::vector<std::string>& header, const Matrix& values);
void write_csv(const std::string& path, const std::vector<std::string>& header, const Matrix& values);

/// Machine-readable key-value dump of a fit and a human-readable table.
void write_fit_keys(std::ostream& os, const FitResult& fit);
void write_fit_report(std::ostream& os, const FitResult& fit);

}  // namespace convot
