#pragma once

#include <cmath>
#include <filesystem>
#include <set>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deepsketch/datastore/date.hpp"
#include "deepsketch/datastore/table_store.hpp"
#include "deepsketch/random.hpp"

namespace deepsketch {

/// Star-schema generator configuration.
///
/// Every dimension row carries a skewed categorical `attr`, a value `val` and a
/// date `day`; every fact row carries a latent category `y`. With probability
/// `correlation` a fact row references only dimension rows whose `attr` equals
/// its `y`, `z` is drawn from the band owned by `y`, and each dimension's `val`
/// and `day` follow its `attr`. With probability 1 - correlation each choice
/// is uniform and independent.
struct SyntheticSpec {
  struct TableSize {
    std::string name;
    std::size_t rows = 0;
  };
  std::vector<TableSize> facts{{"fact", 100000}};
  std::vector<TableSize> dimensions{{"dim1", 1000}, {"dim2", 1000}, {"dim3", 1000}};
  double correlation = 0.8;
  int attr_cardinality = 10;
  double null_fraction = 0.0;  // applies to dim.val and fact.amount
  int high_cardinality_domain = 100000;

  void validate() const {
    if (facts.empty()) fail(ErrorCode::InvalidSpec, "at least one fact table required");
    if (dimensions.empty()) fail(ErrorCode::InvalidSpec, "at least one dimension table required");
    if (!(correlation >= 0.0 && correlation <= 1.0)) fail(ErrorCode::InvalidSpec, "correlation must be in [0,1]");
    if (attr_cardinality < 1) fail(ErrorCode::InvalidSpec, "attr_cardinality must be >= 1");
    if (!(null_fraction >= 0.0 && null_fraction < 1.0)) fail(ErrorCode::InvalidSpec, "null_fraction must be in [0,1)");
    if (high_cardinality_domain < 1) fail(ErrorCode::InvalidSpec, "high_cardinality_domain must be >= 1");
    std::set<std::string> names;
    for (const auto& t : facts) {
      if (t.rows == 0) fail(ErrorCode::InvalidSpec, "fact " + t.name + " has no rows");
      if (!names.insert(t.name).second) fail(ErrorCode::InvalidSpec, "duplicate table " + t.name);
    }
    for (const auto& t : dimensions) {
      if (t.rows == 0) fail(ErrorCode::InvalidSpec, "dimension " + t.name + " has no rows");
      if (!names.insert(t.name).second) fail(ErrorCode::InvalidSpec, "duplicate table " + t.name);
    }
  }

  static SyntheticSpec from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    try {
      auto sizes = [](const nlohmann::json& arr) {
        std::vector<TableSize> out;
        for (const auto& e : arr) out.push_back({e.at("name").get<std::string>(), e.at("rows").get<std::size_t>()});
        return out;
      };
      if (j.contains("facts")) s.facts = sizes(j.at("facts"));
      if (j.contains("dimensions")) s.dimensions = sizes(j.at("dimensions"));
      s.correlation = j.value("correlation", s.correlation);
      s.attr_cardinality = j.value("attr_cardinality", s.attr_cardinality);
      s.null_fraction = j.value("null_fraction", s.null_fraction);
      s.high_cardinality_domain = j.value("high_cardinality_domain", s.high_cardinality_domain);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::InvalidSpec, e.what());
    }
    s.validate();
    return s;
  }
};

struct SyntheticDataset {
  SchemaCatalog schema;
  TableStore store;
};

inline constexpr std::int64_t kSyntheticEpochYear = 1990;

inline SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int A = spec.attr_cardinality;
  std::vector<TableDef> defs;
  std::vector<FkEdge> edges;
  for (const auto& d : spec.dimensions)
    defs.push_back({d.name,
                    {{"id", ColumnKind::Integer, false},
                     {"attr", ColumnKind::Integer, false},
                     {"val", ColumnKind::Integer, spec.null_fraction > 0},
                     {"day", ColumnKind::Date, false}},
                    "id"});
  for (const auto& f : spec.facts) {
    TableDef def{f.name, {{"id", ColumnKind::Integer, false}}, "id"};
    for (const auto& d : spec.dimensions) {
      def.columns.push_back({d.name + "_id", ColumnKind::Integer, false});
      edges.push_back({f.name, d.name + "_id", d.name});
    }
    def.columns.push_back({"y", ColumnKind::Integer, false});
    def.columns.push_back({"z", ColumnKind::Integer, false});
    def.columns.push_back({"x", ColumnKind::Integer, false});
    def.columns.push_back({"amount", ColumnKind::Float, spec.null_fraction > 0});
    defs.push_back(std::move(def));
  }
  SchemaCatalog schema(defs, edges);

  // Zipf-like skew over attribute values: P(a) ~ 1 / (a + 1).
  std::vector<double> attr_cdf(A);
  double norm = 0;
  for (int a = 0; a < A; ++a) norm += 1.0 / (a + 1);
  for (int a = 0; a < A; ++a) attr_cdf[a] = (a ? attr_cdf[a - 1] : 0.0) + (1.0 / (a + 1)) / norm;
  auto draw_attr = [&](Rng& rng) {
    const double u = rng.uniform01();
    for (int a = 0; a < A; ++a)
      if (u < attr_cdf[a]) return a;
    return A - 1;
  };
  const int year_span = std::max(A, 10);

  std::vector<Table> tables;
  // Per dimension: row ids grouped by attr, for correlated FK choice.
  std::vector<std::vector<std::vector<double>>> ids_by_attr;
  for (std::size_t di = 0; di < spec.dimensions.size(); ++di) {
    const auto& d = spec.dimensions[di];
    Rng rng(derive_seed(seed, "dim:" + d.name));
    std::vector<std::vector<std::optional<double>>> rows;
    std::vector<std::vector<double>> by_attr(A);
    for (std::size_t r = 0; r < d.rows; ++r) {
      const double id = static_cast<double>(r + 1);
      const int attr = draw_attr(rng);
      const bool corr = rng.bernoulli(spec.correlation);
      double val = corr ? attr * (1000.0 / A) + static_cast<double>(rng.uniform_below(std::max(1, 1000 / A)))
                        : static_cast<double>(rng.uniform_below(1000));
      val = std::floor(val);
      const std::int64_t year = corr ? kSyntheticEpochYear + (attr % year_span)
                                     : kSyntheticEpochYear + static_cast<std::int64_t>(rng.uniform_below(year_span));
      const double day = static_cast<double>(days_from_civil(year, 1, 1)) + static_cast<double>(rng.uniform_below(365));
      std::optional<double> val_cell = val;
      if (spec.null_fraction > 0 && rng.bernoulli(spec.null_fraction)) val_cell.reset();
      rows.push_back({id, static_cast<double>(attr), val_cell, day});
      by_attr[attr].push_back(id);
    }
    tables.push_back(Table::from_rows(defs[di], rows));
    ids_by_attr.push_back(std::move(by_attr));
  }

  for (std::size_t fi = 0; fi < spec.facts.size(); ++fi) {
    const auto& f = spec.facts[fi];
    Rng rng(derive_seed(seed, "fact:" + f.name));
    std::vector<std::vector<std::optional<double>>> rows;
    rows.reserve(f.rows);
    const int band = std::max(1, 1000 / A);
    for (std::size_t r = 0; r < f.rows; ++r) {
      std::vector<std::optional<double>> row;
      row.push_back(static_cast<double>(r + 1));
      const int y = static_cast<int>(rng.uniform_below(A));
      for (std::size_t di = 0; di < spec.dimensions.size(); ++di) {
        const auto& pool = ids_by_attr[di][y];
        if (rng.bernoulli(spec.correlation) && !pool.empty())
          row.push_back(pool[rng.uniform_below(pool.size())]);
        else
          row.push_back(static_cast<double>(rng.uniform_below(spec.dimensions[di].rows) + 1));
      }
      row.push_back(static_cast<double>(y));
      const double z = rng.bernoulli(spec.correlation) ? static_cast<double>(y * band + rng.uniform_below(band))
                                                       : static_cast<double>(rng.uniform_below(1000));
      row.push_back(z);
      row.push_back(static_cast<double>(rng.uniform_below(spec.high_cardinality_domain)));
      std::optional<double> amount = std::round(std::exp(rng.normal()) * 10000.0) / 100.0;
      if (spec.null_fraction > 0 && rng.bernoulli(spec.null_fraction)) amount.reset();
      row.push_back(amount);
      rows.push_back(std::move(row));
    }
    tables.push_back(Table::from_rows(defs[spec.dimensions.size() + fi], rows));
  }
  TableStore store(schema, std::move(tables));
  return {std::move(schema), std::move(store)};
}

/// For correlation = 1 every fact row must reference, in every dimension, a
/// row whose `attr` equals the fact row's `y` (when such a row exists).
inline bool check_full_correlation(const SyntheticSpec& spec, const TableStore& store) {
  for (const auto& f : spec.facts) {
    const auto& ft = store.table(f.name);
    const auto& y = ft.column("y");
    for (const auto& d : spec.dimensions) {
      const auto& dt = store.table(d.name);
      const auto& attr = dt.column("attr");
      std::vector<bool> present(spec.attr_cardinality, false);
      for (std::size_t r = 0; r < dt.row_count; ++r) present[static_cast<int>(attr.values[r])] = true;
      const auto& fk = ft.column(d.name + "_id");
      for (std::size_t r = 0; r < ft.row_count; ++r) {
        const int yv = static_cast<int>(y.values[r]);
        if (!present[yv]) continue;
        const auto dim_row = static_cast<std::size_t>(fk.values[r]) - 1;  // ids are 1..rows
        if (static_cast<int>(attr.values[dim_row]) != yv) return false;
      }
    }
  }
  return true;
}

/// Writes `schema.json` plus one CSV per table into `dir`.
inline void write_dataset(const std::string& dir, const TableStore& store, const std::string& null_token = "") {
  std::filesystem::create_directories(dir);
  auto j = schema_to_json(store.schema());
  for (auto& jt : j["tables"]) jt["file"] = jt["name"].get<std::string>() + ".csv";
  j["null_token"] = null_token;
  {
    std::ofstream out(dir + "/schema.json");
    if (!out) fail(ErrorCode::Io, "cannot write " + dir + "/schema.json");
    out << j.dump(2) << '\n';
  }
  for (const auto& t : store.tables()) {
    std::ofstream out(dir + "/" + t.name() + ".csv");
    if (!out) fail(ErrorCode::Io, "cannot write " + dir + "/" + t.name() + ".csv");
    write_csv_table(t, out, null_token);
  }
}

}  // namespace deepsketch
