#pragma once

#include <gtest/gtest.h>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deepsketch/datastore/date.hpp"
#include "deepsketch/datastore/synthetic.hpp"
#include "deepsketch/datastore/table_store.hpp"
#include "deepsketch/queryir/query.hpp"
#include "deepsketch/random.hpp"

#define EXPECT_DS_ERROR(stmt, ecode)                                                  \
  do {                                                                                \
    try {                                                                             \
      stmt;                                                                           \
      ADD_FAILURE() << "expected " << deepsketch::to_string(ecode) << ", no throw";   \
    } catch (const deepsketch::Error& e_) {                                           \
      EXPECT_EQ(e_.code(), ecode) << e_.what();                                       \
    }                                                                                 \
  } while (0)

namespace testsupport {

using namespace deepsketch;

/// Brute-force COUNT(*): nested loops over the query's tables in listed
/// order. Each join and predicate is tested in the innermost loop that binds
/// all of its tables, so partial row tuples that already fail are skipped.
inline std::uint64_t nested_loop_count(const TableStore& store, const Query& q) {
  std::vector<const Table*> ts;
  for (const auto& t : q.tables()) ts.push_back(&store.table(t));
  auto pos = [&](const std::string& name) {
    for (std::size_t i = 0; i < ts.size(); ++i)
      if (ts[i]->name() == name) return i;
    return ts.size();
  };
  // checks[d]: conditions decidable once tables 0..d are bound
  std::vector<std::vector<std::function<bool(const std::vector<std::size_t>&)>>> checks(ts.size());
  for (const auto& j : q.joins()) {
    const auto ci = pos(j.child_table), pi = pos(j.parent_table);
    const auto* cc = &ts[ci]->column(j.child_column);
    const auto* pc = &ts[pi]->column(ts[pi]->def.primary_key);
    checks[std::max(ci, pi)].push_back([=](const std::vector<std::size_t>& row) {
      return !cc->is_null(row[ci]) && !pc->is_null(row[pi]) && cc->values[row[ci]] == pc->values[row[pi]];
    });
  }
  for (const auto& p : q.predicates()) {
    const auto i = pos(p.table);
    const auto* c = &ts[i]->column(p.column);
    checks[i].push_back([=](const std::vector<std::size_t>& row) {
      if (c->is_null(row[i])) return false;
      const double v = c->values[row[i]];
      return p.op == CmpOp::Eq ? v == p.value : p.op == CmpOp::Lt ? v < p.value : v > p.value;
    });
  }
  std::vector<std::size_t> row(ts.size(), 0);
  std::function<std::uint64_t(std::size_t)> loop = [&](std::size_t d) -> std::uint64_t {
    if (d == ts.size()) return 1;
    std::uint64_t n = 0;
    for (row[d] = 0; row[d] < ts[d]->row_count; ++row[d]) {
      bool ok = true;
      for (const auto& check : checks[d])
        if (!check(row)) {
          ok = false;
          break;
        }
      if (ok) n += loop(d + 1);
    }
    return n;
  };
  return loop(0);
}

/// Snowflake schema a -> b -> c, d -> b, e -> c with small random tables.
/// FK values may dangle or be NULL; attribute columns have small domains.
inline TableStore random_snowflake(std::uint64_t seed, std::size_t max_rows = 9) {
  Rng rng(seed);
  auto rows_for = [&] { return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_rows))); };
  std::vector<TableDef> defs = {
      {"a", {{"id", ColumnKind::Integer, false}, {"b_id", ColumnKind::Integer, true}, {"v", ColumnKind::Integer, true}}, "id"},
      {"b", {{"id", ColumnKind::Integer, false}, {"c_id", ColumnKind::Integer, true}, {"w", ColumnKind::Float, false}}, "id"},
      {"c", {{"id", ColumnKind::Integer, false}, {"u", ColumnKind::Integer, false}}, "id"},
      {"d", {{"id", ColumnKind::Integer, false}, {"b_id", ColumnKind::Integer, false}, {"v", ColumnKind::Integer, true}}, "id"},
      {"e", {{"id", ColumnKind::Integer, false}, {"c_id", ColumnKind::Integer, false}, {"t", ColumnKind::Date, false}}, "id"},
  };
  std::vector<FkEdge> edges = {{"a", "b_id", "b"}, {"b", "c_id", "c"}, {"d", "b_id", "b"}, {"e", "c_id", "c"}};
  SchemaCatalog schema(defs, edges);
  std::vector<Table> tables;
  for (const auto& def : defs) {
    const auto n = rows_for();
    std::vector<std::vector<std::optional<double>>> rows;
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<std::optional<double>> row;
      for (const auto& c : def.columns) {
        std::optional<double> v;
        if (c.name == "id")
          v = static_cast<double>(r + 1);
        else if (c.name.ends_with("_id"))
          v = static_cast<double>(rng.uniform_int(1, static_cast<std::int64_t>(max_rows) + 1));
        else if (c.kind == ColumnKind::Float)
          v = static_cast<double>(rng.uniform_int(0, 4)) / 2.0;
        else if (c.kind == ColumnKind::Date)
          v = static_cast<double>(10000 + rng.uniform_int(0, 5));
        else
          v = static_cast<double>(rng.uniform_int(0, 4));
        if (c.nullable && rng.bernoulli(0.15)) v.reset();
        row.push_back(v);
      }
      rows.push_back(std::move(row));
    }
    tables.push_back(Table::from_rows(def, rows));
  }
  return TableStore(schema, std::move(tables));
}

/// A miniature of the paper's example schema: title <- movie_keyword -> keyword.
/// keyword strings are replaced by integer ids (string predicates are out of scope).
inline TableStore imdb_mini(std::uint64_t seed = 1, std::size_t titles = 300, std::size_t keywords = 60,
                            std::size_t links = 900) {
  Rng rng(seed);
  TableDef title{"title",
                 {{"id", ColumnKind::Integer, false},
                  {"production_year", ColumnKind::Integer, true},
                  {"kind_id", ColumnKind::Integer, false},
                  {"release_date", ColumnKind::Date, false},
                  {"rating", ColumnKind::Float, true}},
                 "id"};
  TableDef keyword{"keyword", {{"id", ColumnKind::Integer, false}, {"phonetic_code", ColumnKind::Integer, false}}, "id"};
  TableDef mk{"movie_keyword",
              {{"id", ColumnKind::Integer, false},
               {"movie_id", ColumnKind::Integer, false},
               {"keyword_id", ColumnKind::Integer, false}},
              "id"};
  SchemaCatalog schema({title, keyword, mk}, {{"movie_keyword", "movie_id", "title"}, {"movie_keyword", "keyword_id", "keyword"}});
  std::vector<std::vector<std::optional<double>>> t, k, m;
  for (std::size_t r = 0; r < titles; ++r) {
    const auto year = rng.uniform_int(1994, 1996);
    std::optional<double> py = static_cast<double>(year);
    if (rng.bernoulli(0.05)) py.reset();
    std::optional<double> rating = static_cast<double>(rng.uniform_int(10, 100)) / 10.0;
    if (rng.bernoulli(0.1)) rating.reset();
    t.push_back({static_cast<double>(r + 1), py, static_cast<double>(rng.uniform_int(1, 7)),
                 static_cast<double>(days_from_civil(year, 1, 1) + rng.uniform_int(0, 364)), rating});
  }
  for (std::size_t r = 0; r < keywords; ++r)
    k.push_back({static_cast<double>(r + 1), static_cast<double>(rng.uniform_int(0, 20))});
  for (std::size_t r = 0; r < links; ++r)
    m.push_back({static_cast<double>(r + 1), static_cast<double>(rng.uniform_int(1, static_cast<std::int64_t>(titles))),
                 static_cast<double>(rng.uniform_int(1, static_cast<std::int64_t>(keywords)))});
  return TableStore(schema, {Table::from_rows(title, t), Table::from_rows(keyword, k), Table::from_rows(mk, m)});
}

inline SyntheticSpec small_spec(double corr = 0.8, std::size_t fact_rows = 2000, std::size_t dim_rows = 100) {
  SyntheticSpec s;
  s.facts = {{"fact", fact_rows}};
  s.dimensions = {{"dim1", dim_rows}, {"dim2", dim_rows}, {"dim3", dim_rows}};
  s.correlation = corr;
  return s;
}

}  // namespace testsupport
