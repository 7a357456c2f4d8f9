#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "deepsketch/datastore/date.hpp"
#include "deepsketch/datastore/histogram.hpp"
#include "deepsketch/datastore/schema.hpp"
#include "deepsketch/error.hpp"

namespace deepsketch {

/// Integers beyond 2^53 cannot be held exactly in the shared double storage.
inline constexpr double kMaxExactInteger = 9007199254740992.0;

struct ColumnStats {
  std::optional<double> min;
  std::optional<double> max;
  std::uint64_t distinct = 0;
  std::uint64_t null_count = 0;
};

/// Values of every kind share one double representation (dates as days since
/// epoch) so a single comparison path serves all kinds.
struct Column {
  ColumnDef def;
  std::vector<double> values;
  std::vector<std::uint8_t> nulls;  // 1 = NULL

  bool is_null(std::size_t row) const { return nulls[row] != 0; }
};

struct Table {
  TableDef def;
  std::size_t row_count = 0;
  std::vector<Column> columns;
  std::vector<ColumnStats> stats;
  std::vector<EquiDepthHistogram> histograms;

  const std::string& name() const { return def.name; }

  std::size_t column_index(std::string_view column) const {
    if (auto i = def.column_index(column)) return *i;
    fail(ErrorCode::UnknownColumn, def.name + "." + std::string(column));
  }
  const Column& column(std::string_view name) const { return columns[column_index(name)]; }
  const ColumnStats& column_stats(std::string_view name) const { return stats[column_index(name)]; }
  const EquiDepthHistogram& histogram(std::string_view name) const { return histograms[column_index(name)]; }

  /// Recomputes per-column stats and histograms in one pass over each column.
  void finalize(std::size_t histogram_buckets = EquiDepthHistogram::kDefaultBuckets) {
    for (const auto& c : columns)
      if (c.values.size() != row_count || c.nulls.size() != row_count)
        fail(ErrorCode::InvalidSchema, "column length mismatch in table " + def.name);
    stats.assign(columns.size(), {});
    histograms.assign(columns.size(), {});
    for (std::size_t ci = 0; ci < columns.size(); ++ci) {
      const auto& c = columns[ci];
      auto& s = stats[ci];
      std::unordered_set<double> distinct;
      std::vector<double> non_null;
      non_null.reserve(row_count);
      for (std::size_t r = 0; r < row_count; ++r) {
        if (c.is_null(r)) {
          ++s.null_count;
          continue;
        }
        const double v = c.values[r];
        if (!s.min || v < *s.min) s.min = v;
        if (!s.max || v > *s.max) s.max = v;
        distinct.insert(v);
        non_null.push_back(v);
      }
      s.distinct = distinct.size();
      histograms[ci] = EquiDepthHistogram::build(std::move(non_null), row_count, histogram_buckets);
    }
  }

  /// Convenience constructor for in-memory data; `nullopt` encodes NULL.
  static Table from_rows(TableDef def, const std::vector<std::vector<std::optional<double>>>& rows) {
    Table t;
    t.row_count = rows.size();
    for (const auto& cd : def.columns) t.columns.push_back(Column{cd, {}, {}});
    for (const auto& row : rows) {
      if (row.size() != def.columns.size()) fail(ErrorCode::InvalidSchema, "row width mismatch in " + def.name);
      for (std::size_t c = 0; c < row.size(); ++c) {
        t.columns[c].values.push_back(row[c].value_or(0.0));
        t.columns[c].nulls.push_back(row[c] ? 0 : 1);
      }
    }
    t.def = std::move(def);
    t.finalize();
    return t;
  }
};

/// Immutable after construction; safe for concurrent readers.
class TableStore {
 public:
  TableStore() = default;
  TableStore(SchemaCatalog schema, std::vector<Table> tables) : schema_(std::move(schema)), tables_(std::move(tables)) {
    for (const auto& def : schema_.tables())
      if (!find_table(def.name)) fail(ErrorCode::InvalidSchema, "no data for table " + def.name);
  }

  const SchemaCatalog& schema() const { return schema_; }
  const std::vector<Table>& tables() const { return tables_; }

  const Table* find_table(std::string_view name) const {
    for (const auto& t : tables_)
      if (t.name() == name) return &t;
    return nullptr;
  }
  const Table& table(std::string_view name) const {
    if (const auto* t = find_table(name)) return *t;
    fail(ErrorCode::UnknownTable, std::string(name));
  }

 private:
  SchemaCatalog schema_;
  std::vector<Table> tables_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvOptions {
  std::string null_token;  // a field equal to this token is NULL
  char delimiter = ',';
  std::size_t histogram_buckets = EquiDepthHistogram::kDefaultBuckets;
};

namespace detail {

/// Splits one RFC-4180 record starting at `pos`; advances `pos` past the
/// record terminator. Quoted fields may contain delimiters, doubled quotes and
/// line breaks. `quoted` reports which fields were quoted.
inline bool read_csv_record(std::string_view text, std::size_t& pos, char delim, std::vector<std::string>& fields,
                            std::vector<bool>& quoted) {
  fields.clear();
  quoted.clear();
  if (pos >= text.size()) return false;
  std::string field;
  bool in_quotes = false, was_quoted = false;
  while (pos < text.size()) {
    const char ch = text[pos];
    if (in_quotes) {
      if (ch == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          field.push_back('"');
          pos += 2;
          continue;
        }
        in_quotes = false;
        ++pos;
        continue;
      }
      field.push_back(ch);
      ++pos;
      continue;
    }
    if (ch == '"' && field.empty() && !was_quoted) {
      in_quotes = was_quoted = true;
      ++pos;
    } else if (ch == delim) {
      fields.push_back(std::move(field));
      quoted.push_back(was_quoted);
      field.clear();
      was_quoted = false;
      ++pos;
    } else if (ch == '\r' || ch == '\n') {
      if (ch == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') ++pos;
      ++pos;
      break;
    } else {
      field.push_back(ch);
      ++pos;
    }
  }
  fields.push_back(std::move(field));
  quoted.push_back(was_quoted);
  return true;
}

inline std::optional<double> parse_value(std::string_view s, ColumnKind kind) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  switch (kind) {
    case ColumnKind::Integer: {
      if (s.front() == '+') s.remove_prefix(1);
      std::int64_t v = 0;
      auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) return std::nullopt;
      if (v > (std::int64_t{1} << 53) || v < -(std::int64_t{1} << 53)) return std::nullopt;
      return static_cast<double>(v);
    }
    case ColumnKind::Float: {
      if (s.front() == '+') s.remove_prefix(1);
      double v = 0;
      auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
      return v;
    }
    case ColumnKind::Date: {
      if (auto d = parse_iso_date(s)) return static_cast<double>(*d);
      return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Parses one table from CSV text. The first record is the header; columns
/// not in the schema are ignored.
inline Table parse_csv_table(const TableDef& def, std::string_view text, const CsvOptions& options = {}) {
  std::size_t pos = 0;
  std::vector<std::string> fields;
  std::vector<bool> quoted;
  if (!detail::read_csv_record(text, pos, options.delimiter, fields, quoted))
    fail(ErrorCode::MissingColumn, def.name + ": missing header row");
  std::vector<std::size_t> source(def.columns.size());
  for (std::size_t c = 0; c < def.columns.size(); ++c) {
    auto it = std::find(fields.begin(), fields.end(), def.columns[c].name);
    if (it == fields.end()) fail(ErrorCode::MissingColumn, def.name + "." + def.columns[c].name);
    source[c] = static_cast<std::size_t>(it - fields.begin());
  }
  const std::size_t width = fields.size();

  Table t;
  t.def = def;
  for (const auto& cd : def.columns) t.columns.push_back(Column{cd, {}, {}});
  std::size_t row = 0;
  while (detail::read_csv_record(text, pos, options.delimiter, fields, quoted)) {
    if (fields.size() == 1 && fields[0].empty() && !quoted[0]) continue;  // blank line
    if (fields.size() != width)
      fail(ErrorCode::TypeParseError,
           def.name + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) + " fields, expected " +
               std::to_string(width),
           row);
    for (std::size_t c = 0; c < def.columns.size(); ++c) {
      const auto& raw = fields[source[c]];
      const auto& cd = def.columns[c];
      if (!quoted[source[c]] && raw == options.null_token) {
        if (!cd.nullable)
          fail(ErrorCode::TypeParseError,
               def.name + "." + cd.name + " row " + std::to_string(row) + ": NULL in non-nullable column", row);
        t.columns[c].values.push_back(0.0);
        t.columns[c].nulls.push_back(1);
        continue;
      }
      auto v = detail::parse_value(raw, cd.kind);
      if (!v)
        fail(ErrorCode::TypeParseError,
             def.name + "." + cd.name + " row " + std::to_string(row) + ": cannot parse '" + raw + "' as " +
                 std::string(to_string(cd.kind)),
             row);
      t.columns[c].values.push_back(*v);
      t.columns[c].nulls.push_back(0);
    }
    ++row;
  }
  t.row_count = row;
  t.finalize(options.histogram_buckets);
  return t;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Loads every schema table from its CSV file.
inline TableStore load_csv(const SchemaCatalog& schema, const std::vector<std::pair<std::string, std::string>>& files,
                           const CsvOptions& options = {}) {
  std::set<std::string> seen;
  std::vector<Table> tables;
  for (const auto& [name, path] : files) {
    if (!seen.insert(name).second) fail(ErrorCode::DuplicateTable, name);
    tables.push_back(parse_csv_table(schema.table(name), read_file(path), options));
  }
  return TableStore(schema, std::move(tables));
}

/// Loads a dataset directory described by `schema.json`.
inline TableStore load_dataset(const std::string& dir, const std::string& config_name = "schema.json") {
  const auto cfg = load_schema_config(dir + "/" + config_name);
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& t : cfg.schema.tables()) {
    auto it = cfg.files.find(t.name);
    const std::string rel = it != cfg.files.end() ? it->second : t.name + ".csv";
    files.emplace_back(t.name, rel.starts_with("/") ? rel : dir + "/" + rel);
  }
  CsvOptions options;
  options.null_token = cfg.null_token;
  return load_csv(cfg.schema, files, options);
}

inline std::string format_value(double v, ColumnKind kind) {
  if (kind == ColumnKind::Date) return format_iso_date(static_cast<std::int64_t>(v));
  char buf[64];
  // shortest form would print 100000 as "1e+05", which the integer parser rejects
  auto r = kind == ColumnKind::Integer ? std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed)
                                       : std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// Writes a table as CSV with a header row; NULL is written as `null_token`.
inline void write_csv_table(const Table& t, std::ostream& out, const std::string& null_token = "") {
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c].def.name;
  out << '\n';
  for (std::size_t r = 0; r < t.row_count; ++r) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (c) out << ',';
      const auto& col = t.columns[c];
      out << (col.is_null(r) ? null_token : format_value(col.values[r], col.def.kind));
    }
    out << '\n';
  }
}

}  // namespace deepsketch
