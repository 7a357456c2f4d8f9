#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepsketch/datastore/schema.hpp"
#include "deepsketch/datastore/table_store.hpp"
#include "deepsketch/error.hpp"

namespace deepsketch {

inline std::string column_key(const std::string& table, const std::string& column) { return table + "." + column; }

/// Frozen symbol -> one-hot index mapping plus the normalization constants
/// the model was trained with.
struct EncodingVocabulary {
  struct ColumnRange {
    double min = 0;
    double max = 0;
    friend bool operator==(const ColumnRange&, const ColumnRange&) = default;
  };

  std::map<std::string, std::uint32_t> tables;
  std::map<FkEdge, std::uint32_t> joins;
  std::map<std::string, std::uint32_t> columns;  // "table.column"
  std::vector<ColumnRange> column_ranges;        // by column index
  double label_log_max = 1.0;
  std::uint32_t sample_size = 0;

  static constexpr std::uint32_t kNumOps = 3;

  std::size_t num_tables() const { return tables.size(); }
  std::size_t num_joins() const { return joins.size(); }
  std::size_t num_columns() const { return columns.size(); }

  std::size_t table_feature_dim() const { return num_tables() + sample_size; }
  std::size_t join_feature_dim() const { return num_joins(); }
  std::size_t predicate_feature_dim() const { return num_columns() + kNumOps + 1; }

  std::uint32_t table_index(const std::string& t) const {
    auto it = tables.find(t);
    if (it == tables.end()) fail(ErrorCode::UnknownSymbol, "table " + t);
    return it->second;
  }
  std::uint32_t join_index(const FkEdge& e) const {
    auto it = joins.find(e);
    if (it == joins.end()) fail(ErrorCode::UnknownSymbol, "join " + to_string(e));
    return it->second;
  }
  std::uint32_t column_index(const std::string& table, const std::string& column) const {
    auto it = columns.find(column_key(table, column));
    if (it == columns.end()) fail(ErrorCode::UnknownSymbol, "column " + column_key(table, column));
    return it->second;
  }

  friend bool operator==(const EncodingVocabulary&, const EncodingVocabulary&) = default;
};

/// Enumerates the tables, FK edges and columns of `schema` in sorted-name
/// order; column ranges come from full-table stats and the label scale from
/// the largest training cardinality.
inline EncodingVocabulary build_vocabulary(const SchemaCatalog& schema, const TableStore& store,
                                           std::span<const std::uint64_t> training_cardinalities,
                                           std::size_t sample_size) {
  if (training_cardinalities.empty()) fail(ErrorCode::EmptyTrainingSet, "no training queries");
  const auto max_card = *std::max_element(training_cardinalities.begin(), training_cardinalities.end());
  if (max_card == 0) fail(ErrorCode::DegenerateLabels, "every training cardinality is 0; label scale would be log(1) = 0");
  EncodingVocabulary v;
  v.label_log_max = std::log1p(static_cast<double>(max_card));
  v.sample_size = static_cast<std::uint32_t>(sample_size);

  std::vector<std::string> names;
  for (const auto& t : schema.tables()) names.push_back(t.name);
  std::sort(names.begin(), names.end());
  for (std::uint32_t i = 0; i < names.size(); ++i) v.tables[names[i]] = i;

  std::vector<FkEdge> edges = schema.fk_edges();
  std::sort(edges.begin(), edges.end());
  for (std::uint32_t i = 0; i < edges.size(); ++i) v.joins[edges[i]] = i;

  std::vector<std::pair<std::string, EncodingVocabulary::ColumnRange>> cols;
  for (const auto& name : names) {
    const auto& data = store.table(name);
    for (const auto& c : schema.table(name).columns) {
      const auto& st = data.column_stats(c.name);
      cols.push_back({column_key(name, c.name), {st.min.value_or(0.0), st.max.value_or(0.0)}});
    }
  }
  std::sort(cols.begin(), cols.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::uint32_t i = 0; i < cols.size(); ++i) {
    v.columns[cols[i].first] = i;
    v.column_ranges.push_back(cols[i].second);
  }
  return v;
}

/// (value - min) / (max - min), clamped to [0, 1]; 0.5 for constant columns.
inline double normalize_literal(const EncodingVocabulary& v, const std::string& table, const std::string& column,
                                double value) {
  const auto& r = v.column_ranges[v.column_index(table, column)];
  if (r.max == r.min) return 0.5;
  return std::clamp((value - r.min) / (r.max - r.min), 0.0, 1.0);
}

inline bool literal_out_of_range(const EncodingVocabulary& v, const std::string& table, const std::string& column,
                                 double value) {
  const auto& r = v.column_ranges[v.column_index(table, column)];
  return value < r.min || value > r.max;
}

inline double normalize_label(const EncodingVocabulary& v, double card) {
  return std::log1p(std::max(0.0, card)) / v.label_log_max;
}

inline double denormalize_label(const EncodingVocabulary& v, double y) {
  return std::max(0.0, std::expm1(y * v.label_log_max));
}

inline nlohmann::json vocabulary_to_json(const EncodingVocabulary& v) {
  nlohmann::json j;
  j["tables"] = v.tables;
  j["joins"] = nlohmann::json::array();
  for (const auto& [e, i] : v.joins) j["joins"].push_back({{"edge", to_string(e)}, {"index", i}});
  j["columns"] = nlohmann::json::array();
  for (const auto& [name, i] : v.columns)
    j["columns"].push_back({{"column", name}, {"index", i}, {"min", v.column_ranges[i].min}, {"max", v.column_ranges[i].max}});
  j["ops"] = {"=", "<", ">"};
  j["label_log_max"] = v.label_log_max;
  j["sample_size"] = v.sample_size;
  return j;
}

}  // namespace deepsketch
