#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <json.hpp>

namespace deepsketch {

/// Symmetric multiplicative error after clamping both operands to >= floor.
inline double qerror(double estimate, double truth, double floor = 1.0) {
  const double e = std::max(estimate, floor);
  const double t = std::max(truth, floor);
  return std::max(e / t, t / e);
}

/// The quantile columns reported for a set of q-errors.
struct QErrorSummary {
  double median = 1;
  double p90 = 1;
  double p95 = 1;
  double p99 = 1;
  double max = 1;
  double mean = 1;
  std::size_t count = 0;

  static constexpr const char* kColumns[] = {"median", "90th", "95th", "99th", "max", "mean"};

  std::vector<double> values() const { return {median, p90, p95, p99, max, mean}; }
};

/// Nearest-rank quantile of an ascending-sorted, non-empty sample: the value
/// at rank ceil(p * n).
inline double nearest_rank(const std::vector<double>& sorted, double p) {
  const auto n = sorted.size();
  // the small tolerance keeps e.g. 0.9 * 10 from rounding up to rank 10
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

inline QErrorSummary summarize_qerrors(std::vector<double> q) {
  QErrorSummary s;
  s.count = q.size();
  if (q.empty()) return s;
  std::sort(q.begin(), q.end());
  s.median = nearest_rank(q, 0.5);
  s.p90 = nearest_rank(q, 0.9);
  s.p95 = nearest_rank(q, 0.95);
  s.p99 = nearest_rank(q, 0.99);
  s.max = q.back();
  double sum = 0;
  for (double v : q) sum += v;
  s.mean = sum / static_cast<double>(q.size());
  return s;
}

inline nlohmann::json to_json(const QErrorSummary& s) {
  nlohmann::json j;
  const auto v = s.values();
  for (std::size_t i = 0; i < v.size(); ++i) j[QErrorSummary::kColumns[i]] = v[i];
  return j;
}

}  // namespace deepsketch
