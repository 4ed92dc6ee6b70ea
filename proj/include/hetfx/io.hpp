#pragma once
// Comma-separated dataset files: reading with a column-role schema and
// writing with shortest round-trip number formatting.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "core.hpp"
#include "data.hpp"

namespace hetfx {

/// Maps file columns to dataset roles.
struct Schema {
    std::string treatment;
    std::vector<std::string> outcomes;
    std::vector<std::string> confounders;
    std::vector<std::string> heterogeneity;
    std::string cluster;
    std::string id;  ///< optional; row numbers are used when empty
    std::vector<std::string> characteristics;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    Index column(const std::string& name) const {
        for (Index j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        throw SchemaError("missing column '" + name + "'");
    }
};

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

inline std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view text, double& out) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return false;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size();
}

} // namespace csv

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open '" + path + "'");
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("'" + path + "' is empty");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    table.header = csv::split_line(line);
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto fields = csv::split_line(line);
        if (fields.size() != table.header.size())
            throw ValidationError("row " + std::to_string(table.rows.size() + 1) + " of '" + path + "' has " +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(table.header.size()));
        table.rows.push_back(std::move(fields));
    }
    return table;
}

inline void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SchemaError("cannot write '" + path + "'");
    auto write_row = [&](const std::vector<std::string>& row) {
        for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << csv::quote(row[j]);
        out << '\n';
    };
    write_row(table.header);
    for (const auto& row : table.rows) write_row(row);
}

namespace detail {

inline Matrix numeric_block(const CsvTable& t, const std::vector<std::string>& names) {
    Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
        const Index col = t.column(names[j]);
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            double v = 0.0;
            if (!csv::parse_double(t.rows[i][col], v) || !std::isfinite(v))
                throw ValidationError("non-finite or non-numeric value '" + t.rows[i][col] + "' at row " +
                                      std::to_string(i + 1) + ", column '" + names[j] + "'");
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    }
    return m;
}

} // namespace detail

/// Reads a dataset; the constant column is prepended to the heterogeneity
/// block and row order is preserved.
inline Dataset load_dataset(const std::string& path, const Schema& schema) {
    if (schema.treatment.empty()) throw SchemaError("schema must name a treatment column");
    if (schema.outcomes.empty()) throw SchemaError("schema must name at least one outcome column");
    if (schema.confounders.empty()) throw SchemaError("schema must name at least one confounder column");
    if (schema.cluster.empty()) throw SchemaError("schema must name a cluster column");
    const CsvTable t = read_csv(path);

    Dataset::Columns c;
    const Index treat_col = t.column(schema.treatment);
    const Index cluster_col = t.column(schema.cluster);
    const Index id_col = schema.id.empty() ? t.header.size() : t.column(schema.id);
    c.outcomes = detail::numeric_block(t, schema.outcomes);
    c.confounders = detail::numeric_block(t, schema.confounders);
    const Matrix het = detail::numeric_block(t, schema.heterogeneity);
    c.characteristics = detail::numeric_block(t, schema.characteristics);
    const auto n = static_cast<Eigen::Index>(t.rows.size());
    c.heterogeneity.resize(n, het.cols() + 1);
    c.heterogeneity.col(0).setOnes();
    c.heterogeneity.rightCols(het.cols()) = het;

    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        double d = 0.0;
        if (!csv::parse_double(t.rows[i][treat_col], d) || (d != 0.0 && d != 1.0))
            throw ValidationError("treatment value '" + t.rows[i][treat_col] + "' at row " + std::to_string(i + 1) +
                                  " is not 0 or 1");
        c.treatment.push_back(static_cast<std::uint8_t>(d));
        c.cluster_ids.push_back(t.rows[i][cluster_col]);
        c.obs_ids.push_back(id_col < t.header.size() ? t.rows[i][id_col] : std::to_string(i));
    }
    c.outcome_names = schema.outcomes;
    c.confounder_names = schema.confounders;
    c.heterogeneity_names.push_back("const");
    c.heterogeneity_names.insert(c.heterogeneity_names.end(), schema.heterogeneity.begin(), schema.heterogeneity.end());
    c.characteristic_names = schema.characteristics;
    return Dataset::create(std::move(c));
}

/// Writes a dataset in the load_dataset format and returns the matching
/// schema. Columns that appear in several roles under the same name are
/// written once and must hold identical values.
inline Schema write_dataset(const std::string& path, const Dataset& d) {
    Schema schema;
    schema.treatment = "D";
    schema.cluster = "cluster";
    schema.id = "id";
    schema.outcomes = d.outcome_names();
    schema.confounders = d.confounder_names();
    schema.heterogeneity.assign(d.heterogeneity_names().begin() + 1, d.heterogeneity_names().end());
    schema.characteristics = d.characteristic_names();

    CsvTable t;
    t.header = {"id", "cluster", "D"};
    std::vector<Vector> cols;
    std::unordered_map<std::string, std::size_t> written;
    auto add_block = [&](const Matrix& m, const std::vector<std::string>& names, Index offset) {
        for (Index j = offset; j < names.size(); ++j) {
            const Vector col = m.col(static_cast<Eigen::Index>(j));
            auto it = written.find(names[j]);
            if (it != written.end()) {
                if (cols[it->second] != col)
                    throw SchemaError("column '" + names[j] + "' appears in two roles with different values");
                continue;
            }
            if (names[j] == "id" || names[j] == "cluster" || names[j] == "D")
                throw SchemaError("column name '" + names[j] + "' is reserved");
            written.emplace(names[j], cols.size());
            cols.push_back(col);
            t.header.push_back(names[j]);
        }
    };
    add_block(d.outcomes(), d.outcome_names(), 0);
    add_block(d.confounders(), d.confounder_names(), 0);
    add_block(d.heterogeneity(), d.heterogeneity_names(), 1);
    add_block(d.characteristics(), d.characteristic_names(), 0);

    t.rows.reserve(d.size());
    for (Index i = 0; i < d.size(); ++i) {
        std::vector<std::string> row{d.obs_ids()[i], d.cluster_ids()[i], d.treatment()[i] ? "1" : "0"};
        for (const auto& col : cols) row.push_back(csv::format_double(col(static_cast<Eigen::Index>(i))));
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
    return schema;
}

} // namespace hetfx
