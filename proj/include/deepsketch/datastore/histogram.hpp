#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "deepsketch/datastore/predicate.hpp"

namespace deepsketch {

/// Equi-depth histogram over the non-null values of one column. Runs of equal
/// values never straddle a bucket boundary, so heavy hitters get exact
/// frequencies.
struct EquiDepthHistogram {
  struct Bucket {
    double lo = 0;
    double hi = 0;
    std::uint64_t count = 0;
    std::uint64_t distinct = 0;
  };

  std::vector<Bucket> buckets;
  std::uint64_t total_rows = 0;  // including nulls

  static constexpr std::size_t kDefaultBuckets = 100;

  static EquiDepthHistogram build(std::vector<double> values, std::uint64_t total_rows,
                                  std::size_t num_buckets = kDefaultBuckets) {
    EquiDepthHistogram h;
    h.total_rows = total_rows;
    if (values.empty() || num_buckets == 0) return h;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    const std::size_t depth = std::max<std::size_t>(1, (n + num_buckets - 1) / num_buckets);
    // Greedy over runs of equal values: a run at least one bucket deep gets a
    // bucket of its own, so heavy hitters keep exact frequencies.
    Bucket cur;
    auto flush = [&] {
      if (cur.count) h.buckets.push_back(cur);
      cur = Bucket{};
    };
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i + 1;
      while (j < n && values[j] == values[i]) ++j;
      const std::size_t run = j - i;
      if (run >= depth) {
        flush();
        cur = {values[i], values[i], run, 1};
        flush();
      } else {
        if (!cur.count) cur.lo = values[i];
        cur.hi = values[i];
        cur.count += run;
        ++cur.distinct;
        if (cur.count >= depth) flush();
      }
      i = j;
    }
    flush();
    return h;
  }

  /// Estimated fraction of all rows (nulls included) satisfying `value op literal`.
  double selectivity(CmpOp op, double literal) const {
    if (total_rows == 0 || buckets.empty()) return 0.0;
    double rows = 0.0;
    for (const auto& b : buckets) {
      const double c = static_cast<double>(b.count);
      const double width = b.hi - b.lo;
      switch (op) {
        case CmpOp::Eq:
          if (literal >= b.lo && literal <= b.hi) rows += c / static_cast<double>(b.distinct);
          break;
        case CmpOp::Lt:
          if (b.hi < literal)
            rows += c;
          else if (b.lo < literal && width > 0)
            rows += c * (literal - b.lo) / width;
          break;
        case CmpOp::Gt:
          if (b.lo > literal)
            rows += c;
          else if (b.hi > literal && width > 0)
            rows += c * (b.hi - literal) / width;
          break;
      }
    }
    return std::clamp(rows / static_cast<double>(total_rows), 0.0, 1.0);
  }
};

}  // namespace deepsketch
