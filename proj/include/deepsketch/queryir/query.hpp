#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "deepsketch/datastore/predicate.hpp"
#include "deepsketch/datastore/schema.hpp"
#include "deepsketch/error.hpp"

namespace deepsketch {

struct Predicate {
  std::string table;
  std::string column;
  CmpOp op = CmpOp::Eq;
  double value = 0.0;

  friend auto operator<=>(const Predicate&, const Predicate&) = default;
  friend bool operator==(const Predicate&, const Predicate&) = default;
};

/// A conjunctive COUNT(*) query as three sets. Stored canonically (each set
/// sorted and deduplicated), so equality is set equality regardless of the
/// order the parts were supplied in.
class Query {
 public:
  Query() = default;
  Query(std::vector<std::string> tables, std::vector<FkEdge> joins, std::vector<Predicate> predicates)
      : tables_(std::move(tables)), joins_(std::move(joins)), predicates_(std::move(predicates)) {
    canonicalize();
  }

  const std::vector<std::string>& tables() const { return tables_; }
  const std::vector<FkEdge>& joins() const { return joins_; }
  const std::vector<Predicate>& predicates() const { return predicates_; }

  std::vector<Predicate> predicates_on(const std::string& table) const {
    std::vector<Predicate> out;
    for (const auto& p : predicates_)
      if (p.table == table) out.push_back(p);
    return out;
  }

  bool has_table(const std::string& t) const { return std::binary_search(tables_.begin(), tables_.end(), t); }

  friend bool operator==(const Query&, const Query&) = default;
  friend auto operator<=>(const Query& a, const Query& b) {
    return std::tie(a.tables_, a.joins_, a.predicates_) <=> std::tie(b.tables_, b.joins_, b.predicates_);
  }

 private:
  void canonicalize() {
    auto dedup = [](auto& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    dedup(tables_);
    dedup(joins_);
    dedup(predicates_);
  }

  std::vector<std::string> tables_;
  std::vector<FkEdge> joins_;
  std::vector<Predicate> predicates_;
};

/// Checks every structural invariant of a Query against `schema`:
/// tables exist, join edges are schema FK edges among the query tables and
/// form a spanning tree, predicates reference query tables and known columns,
/// integer/date literals are integral, and at most one predicate exists per
/// (column, op).
inline void validate_query(const Query& q, const SchemaCatalog& schema) {
  if (q.tables().empty()) fail(ErrorCode::InvalidQuery, "query has no tables");
  for (const auto& t : q.tables()) schema.table(t);
  for (const auto& j : q.joins()) {
    if (!q.has_table(j.child_table) || !q.has_table(j.parent_table))
      fail(ErrorCode::InvalidQuery, "join " + to_string(j) + " references a table outside the query");
    auto e = schema.edge_between(j.child_table, j.parent_table);
    if (!e || *e != j) fail(ErrorCode::NonFkJoin, to_string(j));
  }
  if (q.joins().size() + 1 != q.tables().size())
    fail(ErrorCode::InvalidQuery, "join graph must be a spanning tree over the query tables");
  // n-1 edges + connected => tree
  std::set<std::string> seen{q.tables().front()};
  std::vector<std::string> stack{q.tables().front()};
  while (!stack.empty()) {
    auto cur = stack.back();
    stack.pop_back();
    for (const auto& j : q.joins())
      if (j.touches(cur) && seen.insert(j.other(cur)).second) stack.push_back(j.other(cur));
  }
  if (seen.size() != q.tables().size()) fail(ErrorCode::InvalidQuery, "join graph is not connected");

  std::set<std::tuple<std::string, std::string, CmpOp>> pairs;
  for (const auto& p : q.predicates()) {
    if (!q.has_table(p.table)) fail(ErrorCode::InvalidQuery, "predicate on table outside the query: " + p.table);
    const auto& col = schema.column(p.table, p.column);
    if (col.kind != ColumnKind::Float && p.value != static_cast<double>(static_cast<long long>(p.value)))
      fail(ErrorCode::InvalidQuery, "non-integral literal for " + p.table + "." + p.column);
    if (!pairs.insert({p.table, p.column, p.op}).second)
      fail(ErrorCode::InvalidQuery, "more than one '" + std::string(to_string(p.op)) + "' predicate on " + p.table +
                                        "." + p.column);
  }
}

}  // namespace deepsketch
