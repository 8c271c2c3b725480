#pragma once

// CSV datasets, the versioned model file, and provenance-stamped result tables.

#include "raitr/config.hpp"
#include "raitr/model.hpp"
#include "raitr/scenario.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace raitr {

// ---- CSV parsing -------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line_numbers;  // 1-based file line of each row

    std::optional<std::size_t> column(const std::string& name) const {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        return std::nullopt;
    }
};

/// Splits one line; fields may be double-quoted with "" as an escaped quote.
inline std::vector<std::string> split_csv_line(const std::string& line, int line_no, const std::string& origin) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                field += ch;
            }
        } else if (ch == '"' && trim(field).empty()) {
            quoted = was_quoted = true;
            field.clear();
        } else if (ch == ',') {
            out.push_back(was_quoted ? field : trim(field));
            field.clear();
            was_quoted = false;
        } else {
            field += ch;
        }
    }
    if (quoted) throw InvalidInput(origin + ": line " + std::to_string(line_no) + ": unterminated quoted field");
    out.push_back(was_quoted ? field : trim(field));
    return out;
}

/// Reads a headered CSV; blank lines and lines starting with '#' are skipped.
inline CsvTable parse_csv(std::istream& in, const std::string& origin) {
    CsvTable t;
    std::string line;
    int line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || trim(line).front() == '#') continue;
        auto fields = split_csv_line(line, line_no, origin);
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            throw InvalidInput(origin + ": line " + std::to_string(line_no) + ": expected " +
                               std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(line_no);
    }
    if (!have_header) throw InvalidInput(origin + ": empty file (a header row is required)");
    return t;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    return parse_csv(in, path);
}

/// Parses a real; "NA" and empty fields give NaN only when allowed.
inline double parse_field(const CsvTable& t, std::size_t row, std::size_t col, const std::string& origin,
                          bool allow_missing = false) {
    const std::string& s = t.rows[row][col];
    const std::string where = origin + ": row " + std::to_string(row + 1) + " (line " +
                              std::to_string(t.line_numbers[row]) + "), column '" + t.header[col] + "'";
    if (s.empty() || s == "NA") {
        if (allow_missing) return std::numeric_limits<double>::quiet_NaN();
        throw InvalidInput(where + ": missing value");
    }
    double v = 0;
    const char* begin = s.data() + (s[0] == '+' ? 1 : 0);
    const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw InvalidInput(where + ": '" + s + "' is not a number");
    if (!std::isfinite(v)) throw InvalidInput(where + ": non-finite value '" + s + "'");
    return v;
}

namespace detail {

inline std::size_t required_column(const CsvTable& t, const std::string& name, const std::string& origin) {
    const auto c = t.column(name);
    if (!c) throw InvalidInput(origin + ": missing required column '" + name + "'");
    return *c;
}

inline void check_unique_header(const CsvTable& t, const std::string& origin) {
    for (std::size_t i = 0; i < t.header.size(); ++i) {
        if (t.header[i].empty()) throw InvalidInput(origin + ": empty column name at position " + std::to_string(i + 1));
        for (std::size_t j = 0; j < i; ++j)
            if (t.header[i] == t.header[j]) throw InvalidInput(origin + ": duplicate column '" + t.header[i] + "'");
    }
}

}  // namespace detail

struct LoadedDataset {
    Dataset data;
    bool remapped_zero_one = false;  // labels were 0/1 and 0 became -1
};

/// Columns y and a plus covariates (every other column, in file order).
inline LoadedDataset read_dataset(const CsvTable& t, const std::string& origin) {
    detail::check_unique_header(t, origin);
    const std::size_t cy = detail::required_column(t, "y", origin);
    const std::size_t ca = detail::required_column(t, "a", origin);
    std::vector<std::size_t> cov;
    LoadedDataset out;
    for (std::size_t j = 0; j < t.header.size(); ++j)
        if (j != cy && j != ca) {
            cov.push_back(j);
            out.data.column_names.push_back(t.header[j]);
        }
    if (cov.empty()) throw InvalidInput(origin + ": no covariate columns");
    const auto n = static_cast<Index>(t.rows.size());
    if (n == 0) throw InvalidInput(origin + ": no data rows");
    Dataset& d = out.data;
    d.X.resize(n, static_cast<Index>(cov.size()));
    d.y.resize(n);
    d.a.resize(n);
    bool saw_zero = false, saw_minus_one = false;
    for (Index i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        d.y[i] = parse_field(t, r, cy, origin);
        const double a = parse_field(t, r, ca, origin);
        if (a != 1.0 && a != -1.0 && a != 0.0)
            throw InvalidInput(origin + ": row " + std::to_string(i + 1) + " (line " +
                               std::to_string(t.line_numbers[r]) + "): treatment label '" + t.rows[r][ca] +
                               "' is not -1/1 or 0/1");
        saw_zero = saw_zero || a == 0.0;
        saw_minus_one = saw_minus_one || a == -1.0;
        d.a[i] = a;
        for (std::size_t k = 0; k < cov.size(); ++k) d.X(i, static_cast<Index>(k)) = parse_field(t, r, cov[k], origin);
    }
    if (saw_zero && saw_minus_one)
        throw InvalidInput(origin + ": treatment column mixes 0 and -1 codings");
    if (saw_zero) {
        d.a = d.a.unaryExpr([](double v) { return v == 0.0 ? -1.0 : v; });
        out.remapped_zero_one = true;
    }
    const Index treated = d.treated_count();
    if (treated == 0 || treated == n)
        throw InvalidInput(origin + ": only one treatment arm present (" + std::to_string(treated) + " of " +
                           std::to_string(n) + " rows treated)");
    d.validate();
    return out;
}

inline LoadedDataset read_dataset(const std::string& path) { return read_dataset(read_csv(path), path); }

/// Covariates by name; extra columns (such as y and a) are ignored.
inline Matrix read_covariates(const CsvTable& t, const std::vector<std::string>& names, const std::string& origin) {
    std::vector<std::size_t> cols;
    for (const auto& name : names) cols.push_back(detail::required_column(t, name, origin));
    Matrix x(static_cast<Index>(t.rows.size()), static_cast<Index>(cols.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t k = 0; k < cols.size(); ++k)
            x(static_cast<Index>(r), static_cast<Index>(k)) = parse_field(t, r, cols[k], origin);
    return x;
}

/// Columns y_pos and y_neg (missing entries allowed) plus covariates.
inline PairedData read_paired(const CsvTable& t, const std::string& origin) {
    detail::check_unique_header(t, origin);
    const std::size_t cp = detail::required_column(t, "y_pos", origin);
    const std::size_t cn = detail::required_column(t, "y_neg", origin);
    PairedData out;
    std::vector<std::size_t> cov;
    for (std::size_t j = 0; j < t.header.size(); ++j)
        if (j != cp && j != cn) {
            cov.push_back(j);
            out.column_names.push_back(t.header[j]);
        }
    if (cov.empty()) throw InvalidInput(origin + ": no covariate columns");
    const auto n = static_cast<Index>(t.rows.size());
    out.X.resize(n, static_cast<Index>(cov.size()));
    out.y_pos.resize(n);
    out.y_neg.resize(n);
    for (Index i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        out.y_pos[i] = parse_field(t, r, cp, origin, true);
        out.y_neg[i] = parse_field(t, r, cn, origin, true);
        for (std::size_t k = 0; k < cov.size(); ++k)
            out.X(i, static_cast<Index>(k)) = parse_field(t, r, cov[k], origin);
    }
    return out;
}

inline PairedData read_paired(const std::string& path) { return read_paired(read_csv(path), path); }

// ---- CSV writing ---------------------------------------------------------------

/// Round-trip decimal; NaN is written as NA.
inline std::string format_number(double v) { return std::isnan(v) ? "NA" : shortest_decimal(v); }

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return out + "\"";
}

/// Accumulates a table and writes it with a provenance comment line.
class CsvWriter {
public:
    CsvWriter(std::uint64_t seed, std::string config_hash, std::vector<std::string> header)
        : seed_(seed), hash_(std::move(config_hash)), header_(std::move(header)) {}

    void add_row(const std::vector<std::string>& fields) {
        if (fields.size() != header_.size()) throw std::logic_error("CsvWriter: row width does not match header");
        rows_.push_back(fields);
    }

    std::string str() const {
        std::ostringstream out;
        out << "# seed=" << seed_ << " config_hash=" << hash_ << "\n";
        write_line(out, header_);
        for (const auto& r : rows_) write_line(out, r);
        return out.str();
    }

    void save(const std::string& path) const { write_text_file(path, str()); }

    static void write_text_file(const std::string& path, const std::string& text) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw InvalidInput("cannot open '" + path + "' for writing");
        out << text;
        if (!out) throw InvalidInput("failed writing '" + path + "'");
    }

private:
    static void write_line(std::ostream& out, const std::vector<std::string>& fields) {
        for (std::size_t k = 0; k < fields.size(); ++k) out << (k ? "," : "") << csv_escape(fields[k]);
        out << "\n";
    }

    std::uint64_t seed_;
    std::string hash_;
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

// ---- model file ------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

namespace detail {

using nlohmann::json;

// NaN is stored as null; every finite double round-trips exactly.
inline json number_json(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

inline double number_from(const json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!j.is_number()) throw InvalidInput("model file: expected a number");
    return j.get<double>();
}

inline json vector_json(const Vector& v) {
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(number_json(v[i]));
    return out;
}

inline Vector vector_from(const json& j, Index expected, const std::string& field) {
    if (!j.is_array() || static_cast<Index>(j.size()) != expected)
        throw InvalidInput("model file: field '" + field + "' must be an array of length " + std::to_string(expected));
    Vector out(expected);
    for (Index i = 0; i < expected; ++i) out[i] = number_from(j[static_cast<std::size_t>(i)]);
    return out;
}

inline std::vector<double> doubles_from(const json& j, const std::string& field) {
    if (!j.is_array()) throw InvalidInput("model file: field '" + field + "' must be an array");
    std::vector<double> out;
    for (const auto& e : j) out.push_back(number_from(e));
    return out;
}

inline const json& field(const json& j, const std::string& name) {
    if (!j.contains(name)) throw InvalidInput("model file: missing field '" + name + "'");
    return j.at(name);
}

inline json spline_json(const FittedSpline& s) {
    json out;
    out["knots"] = s.knots;
    out["values"] = s.values;
    out["second_derivs"] = s.second_derivs;
    out["smoothing_parameter"] = s.smoothing_parameter;
    out["effective_df"] = s.effective_df;
    out["domain_min"] = s.domain_min;
    out["domain_max"] = s.domain_max;
    out["fitted_sd"] = s.fitted_sd;
    return out;
}

inline FittedSpline spline_from(const json& j) {
    FittedSpline s;
    s.knots = doubles_from(field(j, "knots"), "knots");
    s.values = doubles_from(field(j, "values"), "values");
    s.second_derivs = doubles_from(field(j, "second_derivs"), "second_derivs");
    if (s.knots.empty() || s.values.size() != s.knots.size() || s.second_derivs.size() != s.knots.size())
        throw InvalidInput("model file: spline arrays must be nonempty and of equal length");
    s.smoothing_parameter = number_from(field(j, "smoothing_parameter"));
    s.effective_df = number_from(field(j, "effective_df"));
    s.domain_min = number_from(field(j, "domain_min"));
    s.domain_max = number_from(field(j, "domain_max"));
    s.fitted_sd = number_from(field(j, "fitted_sd"));
    return s;
}

}  // namespace detail

inline nlohmann::json model_to_json(const RaitrModel& m) {
    using detail::json;
    using detail::number_json;
    using detail::vector_json;
    json j;
    j["format_version"] = kModelFormatVersion;
    j["rule"] = to_string(m.rule);
    j["selection"] = to_string(m.selection);
    j["column_names"] = m.column_names;
    j["stage1"] = {{"intercept", m.stage1_intercept},
                   {"effect_intercept", m.stage1_effect_intercept},
                   {"coefficients", vector_json(m.stage1_coefficients)},
                   {"lambda", m.lambda1}};
    json splines = json::array();
    for (const auto& s : m.splines) splines.push_back(s ? detail::spline_json(*s) : json(nullptr));
    j["splines"] = splines;
    j["fitted_sd"] = vector_json(m.fitted_sd);
    j["gamma"] = vector_json(m.gamma);
    j["outcome_intercept"] = m.outcome_intercept;
    j["final_intercept"] = m.final_intercept;
    j["beta_lin"] = vector_json(m.beta_lin);
    j["beta_non"] = vector_json(m.beta_non);
    j["lambda2"] = m.lambda2;
    j["selected_index"] = m.selected_index;
    json trace = json::array();
    for (const auto& r : m.selection_trace)
        trace.push_back({{"lambda", number_json(r.lambda)},
                         {"df", number_json(r.df)},
                         {"concordance", number_json(r.concordance)},
                         {"kappa", number_json(r.kappa)},
                         {"cic", number_json(r.cic)},
                         {"cv_error", number_json(r.cv_error)}});
    j["selection_trace"] = trace;
    j["column_means"] = vector_json(m.column_means);
    j["column_sds"] = vector_json(m.column_sds);
    j["config"] = m.config_echo;
    return j;
}

inline RaitrModel model_from_json(const nlohmann::json& j) {
    using detail::field;
    using detail::number_from;
    using detail::vector_from;
    if (!j.is_object()) throw InvalidInput("model file: top level must be an object");
    const auto& version = field(j, "format_version");
    if (!version.is_number_integer() || version.get<int>() != kModelFormatVersion)
        throw InvalidInput("model file: unsupported format_version (this build reads version " +
                           std::to_string(kModelFormatVersion) + ")");
    try {
        RaitrModel m;
        m.rule = parse_rule_kind(field(j, "rule").get<std::string>());
        m.selection = parse_selection(field(j, "selection").get<std::string>());
        m.column_names = field(j, "column_names").get<std::vector<std::string>>();
        const auto p = static_cast<Index>(m.column_names.size());
        if (p < 1) throw InvalidInput("model file: no covariates");
        const auto& s1 = field(j, "stage1");
        m.stage1_intercept = number_from(field(s1, "intercept"));
        m.stage1_effect_intercept = number_from(field(s1, "effect_intercept"));
        m.stage1_coefficients = vector_from(field(s1, "coefficients"), p, "stage1.coefficients");
        m.lambda1 = number_from(field(s1, "lambda"));
        const auto& splines = field(j, "splines");
        if (!splines.is_array() || static_cast<Index>(splines.size()) != p)
            throw InvalidInput("model file: 'splines' must have one entry per covariate");
        for (const auto& s : splines) m.splines.push_back(s.is_null() ? std::nullopt : std::optional(detail::spline_from(s)));
        m.fitted_sd = vector_from(field(j, "fitted_sd"), p, "fitted_sd");
        m.gamma = vector_from(field(j, "gamma"), p, "gamma");
        m.outcome_intercept = number_from(field(j, "outcome_intercept"));
        m.final_intercept = number_from(field(j, "final_intercept"));
        m.beta_lin = vector_from(field(j, "beta_lin"), p, "beta_lin");
        m.beta_non = vector_from(field(j, "beta_non"), p, "beta_non");
        for (Index k = 0; k < p; ++k)
            if (m.beta_non[k] != 0.0 && !m.splines[static_cast<std::size_t>(k)])
                throw InvalidInput("model file: nonzero nonlinear coefficient without a spline");
        m.lambda2 = number_from(field(j, "lambda2"));
        m.selected_index = field(j, "selected_index").get<std::size_t>();
        for (const auto& r : field(j, "selection_trace"))
            m.selection_trace.push_back({number_from(field(r, "lambda")), number_from(field(r, "df")),
                                         number_from(field(r, "concordance")), number_from(field(r, "kappa")),
                                         number_from(field(r, "cic")), number_from(field(r, "cv_error"))});
        m.column_means = vector_from(field(j, "column_means"), p, "column_means");
        m.column_sds = vector_from(field(j, "column_sds"), p, "column_sds");
        m.config_echo = field(j, "config").get<std::map<std::string, std::string>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("model file: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::data) throw;
        throw InvalidInput(std::string("model file: ") + e.what());
    }
}

inline void save_model(const RaitrModel& m, const std::string& path) {
    CsvWriter::write_text_file(path, model_to_json(m).dump(1) + "\n");
}

inline RaitrModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open model file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("model file '" + path + "': " + e.what());
    }
    return model_from_json(j);
}

}  // namespace raitr
