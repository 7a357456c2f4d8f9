#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepsketch/datastore/table_store.hpp"
#include "deepsketch/queryir/query.hpp"

namespace deepsketch {

namespace detail {

inline std::vector<std::uint64_t> filter_weights(const Table& t, const std::vector<Predicate>& preds) {
  std::vector<std::uint64_t> w(t.row_count, 1);
  for (const auto& p : preds) {
    const auto& col = t.column(p.column);
    for (std::size_t r = 0; r < t.row_count; ++r)
      if (w[r] && (col.is_null(r) || !compare(col.values[r], p.op, p.value))) w[r] = 0;
  }
  return w;
}

}  // namespace detail

/// Exact COUNT(*) of a conjunctive PK/FK join with selections.
///
/// The join graph is a tree, so the count factorizes: rooting the tree at one
/// table, every row carries the number of matching combinations in its
/// subtree, computed bottom-up with one hash aggregation per edge. Cost is
/// linear in the total row count of the query tables.
inline std::uint64_t true_cardinality(const TableStore& store, const Query& query) {
  validate_query(query, store.schema());
  std::map<std::string, std::vector<std::uint64_t>> weights;
  for (const auto& name : query.tables())
    weights[name] = detail::filter_weights(store.table(name), query.predicates_on(name));

  std::function<void(const std::string&, const std::string&)> fold = [&](const std::string& x,
                                                                          const std::string& from) {
    for (const auto& e : query.joins()) {
      if (!e.touches(x) || e.other(x) == from) continue;
      const std::string& y = e.other(x);
      fold(y, x);
      const auto& tx = store.table(x);
      const auto& ty = store.table(y);
      const bool y_is_child = e.child_table == y;
      const auto& ykey = ty.column(y_is_child ? e.child_column : ty.def.primary_key);
      const auto& xkey = tx.column(y_is_child ? tx.def.primary_key : e.child_column);
      std::unordered_map<double, std::uint64_t> agg;
      const auto& wy = weights[y];
      for (std::size_t r = 0; r < ty.row_count; ++r)
        if (wy[r] && !ykey.is_null(r)) agg[ykey.values[r]] += wy[r];
      auto& wx = weights[x];
      for (std::size_t r = 0; r < tx.row_count; ++r) {
        if (!wx[r]) continue;
        if (xkey.is_null(r)) {
          wx[r] = 0;
          continue;
        }
        auto it = agg.find(xkey.values[r]);
        wx[r] = it == agg.end() ? 0 : wx[r] * it->second;
      }
    }
  };
  const auto& root = query.tables().front();
  fold(root, "");
  std::uint64_t total = 0;
  for (auto w : weights[root]) total += w;
  return total;
}

}  // namespace deepsketch
