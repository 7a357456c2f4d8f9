#pragma once

#include <array>
#include <cmath>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "deepsketch/datastore/table_store.hpp"
#include "deepsketch/queryir/query.hpp"
#include "deepsketch/random.hpp"

namespace deepsketch {

struct GeneratorConfig {
  enum class LiteralSource { DataValues, UniformInRange };

  int max_joins = 2;
  int max_predicates_per_table = 2;
  std::array<double, 3> op_weights{1.0, 1.0, 1.0};  // =, <, >
  LiteralSource literal_source = LiteralSource::DataValues;
  bool include_key_columns = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_joins < 0) fail(ErrorCode::InvalidConfig, "max_joins must be >= 0");
    if (max_predicates_per_table < 1) fail(ErrorCode::InvalidConfig, "max_predicates_per_table must be >= 1");
    double sum = 0;
    for (double w : op_weights) {
      if (!(w >= 0)) fail(ErrorCode::InvalidConfig, "op weights must be non-negative");
      sum += w;
    }
    if (sum <= 0) fail(ErrorCode::InvalidConfig, "op weights must not all be zero");
  }
};

inline constexpr int kMaxWalkAttempts = 100;

/// Draws one random conjunctive query over the tables of `schema` (which may
/// be a subset of the store's schema).
///
/// Join count is uniform on [0, min(max_joins, tables - 1)]; the join set
/// grows by a random walk over FK edges from a uniform start table. Each
/// included table receives a uniform number of predicates in
/// [0, max_predicates_per_table] on distinct (column, op) pairs; literals come
/// from a uniformly chosen row of the store.
inline Query generate_query(const SchemaCatalog& schema, const TableStore& store, const GeneratorConfig& config,
                            Rng& rng) {
  config.validate();
  const auto& defs = schema.tables();
  if (defs.empty()) fail(ErrorCode::InvalidConfig, "schema has no tables");
  const int max_joins = std::min<int>(config.max_joins, static_cast<int>(defs.size()) - 1);
  const int joins = static_cast<int>(rng.uniform_int(0, max_joins));

  std::vector<std::string> tables;
  std::vector<FkEdge> edges;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= kMaxWalkAttempts)
      fail(ErrorCode::InvalidConfig, "could not grow a join of size " + std::to_string(joins) + " after " +
                                         std::to_string(kMaxWalkAttempts) + " attempts");
    tables = {defs[rng.uniform_below(defs.size())].name};
    edges.clear();
    bool dead_end = false;
    for (int j = 0; j < joins; ++j) {
      std::vector<const FkEdge*> frontier;
      for (const auto& e : schema.fk_edges()) {
        const bool has_child = std::find(tables.begin(), tables.end(), e.child_table) != tables.end();
        const bool has_parent = std::find(tables.begin(), tables.end(), e.parent_table) != tables.end();
        if (has_child != has_parent) frontier.push_back(&e);
      }
      if (frontier.empty()) {
        dead_end = true;
        break;
      }
      const auto& e = *frontier[rng.uniform_below(frontier.size())];
      const bool has_child = std::find(tables.begin(), tables.end(), e.child_table) != tables.end();
      tables.push_back(has_child ? e.parent_table : e.child_table);
      edges.push_back(e);
    }
    if (!dead_end) break;
  }

  double weight_sum = 0;
  for (double w : config.op_weights) weight_sum += w;
  auto draw_op = [&] {
    double u = rng.uniform01() * weight_sum;
    for (int i = 0; i < 3; ++i) {
      if (u < config.op_weights[i]) return kAllOps[i];
      u -= config.op_weights[i];
    }
    for (int i = 2; i >= 0; --i)
      if (config.op_weights[i] > 0) return kAllOps[i];
    return CmpOp::Eq;
  };

  std::vector<Predicate> preds;
  for (const auto& name : tables) {
    const auto& def = schema.table(name);
    const auto& data = store.table(name);
    std::vector<const ColumnDef*> eligible;
    for (const auto& c : def.columns)
      if (config.include_key_columns || !schema.is_key_column(name, c.name)) eligible.push_back(&c);
    if (eligible.empty() || data.row_count == 0) continue;
    const int count = static_cast<int>(rng.uniform_int(0, config.max_predicates_per_table));
    std::set<std::pair<std::string, CmpOp>> used;
    for (int k = 0; k < count; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < 16 && !placed; ++attempt) {
        const auto& col = *eligible[rng.uniform_below(eligible.size())];
        const CmpOp op = draw_op();
        if (used.count({col.name, op})) continue;
        const auto& column = data.column(col.name);
        const auto& stats = data.column_stats(col.name);
        if (!stats.min) break;  // all NULL
        double literal = 0;
        if (config.literal_source == GeneratorConfig::LiteralSource::DataValues) {
          std::size_t row = 0;
          bool found = false;
          for (int tries = 0; tries < 32 && !found; ++tries) {
            row = rng.uniform_below(data.row_count);
            found = !column.is_null(row);
          }
          if (!found) continue;
          literal = column.values[row];
        } else {
          literal = *stats.min + rng.uniform01() * (*stats.max - *stats.min);
          if (col.kind != ColumnKind::Float) literal = std::floor(literal);
        }
        used.insert({col.name, op});
        preds.push_back({name, col.name, op, literal});
        placed = true;
      }
    }
  }
  return Query(std::move(tables), std::move(edges), std::move(preds));
}

/// Generates `n` queries from one RNG stream seeded by `config.seed`.
inline std::vector<Query> generate_queries(const SchemaCatalog& schema, const TableStore& store,
                                           const GeneratorConfig& config, std::size_t n) {
  Rng rng(derive_seed(config.seed, "queries"));
  std::vector<Query> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_query(schema, store, config, rng));
  return out;
}

}  // namespace deepsketch
