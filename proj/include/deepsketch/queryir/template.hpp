#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "deepsketch/datastore/date.hpp"
#include "deepsketch/datastore/schema.hpp"
#include "deepsketch/queryir/query.hpp"
#include "deepsketch/queryir/sql.hpp"

namespace deepsketch {

struct Grouping {
  enum class Kind { DistinctValue, ExtractYear, EquiWidthBuckets };
  Kind kind = Kind::DistinctValue;
  int buckets = 1;  // only for EquiWidthBuckets

  static Grouping distinct() { return {Kind::DistinctValue, 1}; }
  static Grouping year() { return {Kind::ExtractYear, 1}; }
  static Grouping equi_width(int k) { return {Kind::EquiWidthBuckets, k}; }

  friend bool operator==(const Grouping&, const Grouping&) = default;
};

inline std::string_view to_string(Grouping::Kind kind) {
  switch (kind) {
    case Grouping::Kind::DistinctValue: return "distinct";
    case Grouping::Kind::ExtractYear: return "year";
    case Grouping::Kind::EquiWidthBuckets: return "buckets";
  }
  return "distinct";
}

inline Grouping parse_grouping(std::string_view name, int k = 1) {
  if (name == "distinct" || name == "value") return Grouping::distinct();
  if (name == "year") return Grouping::year();
  if (name == "buckets" || name == "equi-width") return Grouping::equi_width(k);
  fail(ErrorCode::InvalidTemplate, "unknown grouping '" + std::string(name) + "'");
}

struct QueryTemplate {
  Query base;
  PlaceholderRef placeholder;
  Grouping grouping;
};

/// Validates template invariants against `schema`.
inline void validate_template(const QueryTemplate& t, const SchemaCatalog& schema) {
  validate_query(t.base, schema);
  if (!t.base.has_table(t.placeholder.table))
    fail(ErrorCode::InvalidTemplate, "placeholder table " + t.placeholder.table + " is not part of the query");
  const auto& col = schema.column(t.placeholder.table, t.placeholder.column);
  for (const auto& p : t.base.predicates())
    if (p.table == t.placeholder.table && p.column == t.placeholder.column && p.op == CmpOp::Eq)
      fail(ErrorCode::InvalidTemplate, "placeholder column already constrained by an equality predicate");
  if (t.grouping.kind == Grouping::Kind::ExtractYear && col.kind != ColumnKind::Date)
    fail(ErrorCode::NonDateColumnForYear, t.placeholder.table + "." + t.placeholder.column);
  if (t.grouping.kind == Grouping::Kind::EquiWidthBuckets && t.grouping.buckets < 1)
    fail(ErrorCode::InvalidTemplate, "bucket count must be >= 1");
}

inline QueryTemplate parse_template(std::string_view sql, const SchemaCatalog& schema, Grouping grouping) {
  auto parsed = parse_statement(sql, schema);
  if (!parsed.placeholder) fail(ErrorCode::InvalidTemplate, "template needs exactly one '?' placeholder");
  QueryTemplate t{std::move(parsed.query), *parsed.placeholder, grouping};
  validate_template(t, schema);
  return t;
}

struct TemplateInstance {
  std::string label;
  double sort_key = 0;
  // Closed range of column values the instance covers (lo == hi for distinct).
  double lo = 0;
  double hi = 0;
  Query query;
};

namespace detail {

/// Adds `p`, keeping the tighter bound if the query already has a predicate
/// with the same (column, op).
inline Query with_predicates(const Query& base, const std::vector<Predicate>& extra) {
  auto preds = base.predicates();
  for (const auto& p : extra) {
    auto it = std::find_if(preds.begin(), preds.end(), [&](const Predicate& q) {
      return q.table == p.table && q.column == p.column && q.op == p.op;
    });
    if (it == preds.end()) {
      preds.push_back(p);
    } else if (p.op == CmpOp::Lt) {
      it->value = std::min(it->value, p.value);
    } else if (p.op == CmpOp::Gt) {
      it->value = std::max(it->value, p.value);
    }
  }
  return Query(base.tables(), base.joins(), std::move(preds));
}

/// Largest representable literal strictly below `v` for the column kind, so
/// that `col > below(v)` is equivalent to `col >= v`.
inline double below(double v, ColumnKind kind) {
  return kind == ColumnKind::Float ? std::nextafter(v, -INFINITY) : std::ceil(v) - 1.0;
}
/// Smallest literal strictly above `v`, so that `col < above(v)` is `col <= v`.
inline double above(double v, ColumnKind kind) {
  return kind == ColumnKind::Float ? std::nextafter(v, INFINITY) : std::floor(v) + 1.0;
}

inline std::string label_for(double v, ColumnKind kind) {
  if (kind == ColumnKind::Date) return format_iso_date(static_cast<std::int64_t>(v));
  return format_literal(v, kind);
}

}  // namespace detail

/// Expands a template against the non-null sampled values of its placeholder
/// column. Instances are sorted by label order and deduplicated.
inline std::vector<TemplateInstance> expand_template(const QueryTemplate& t, std::vector<double> sample_values,
                                                     ColumnKind kind) {
  if (sample_values.empty())
    fail(ErrorCode::EmptySample, "no sampled values for " + t.placeholder.table + "." + t.placeholder.column);
  std::sort(sample_values.begin(), sample_values.end());
  sample_values.erase(std::unique(sample_values.begin(), sample_values.end()), sample_values.end());
  const auto& tbl = t.placeholder.table;
  const auto& col = t.placeholder.column;
  std::vector<TemplateInstance> out;

  switch (t.grouping.kind) {
    case Grouping::Kind::DistinctValue:
      for (double v : sample_values)
        out.push_back({detail::label_for(v, kind), v, v, v, detail::with_predicates(t.base, {{tbl, col, CmpOp::Eq, v}})});
      break;

    case Grouping::Kind::ExtractYear: {
      if (kind != ColumnKind::Date) fail(ErrorCode::NonDateColumnForYear, tbl + "." + col);
      std::set<std::int64_t> years;
      for (double v : sample_values) years.insert(year_of_days(static_cast<std::int64_t>(v)));
      for (auto y : years) {
        const auto first = static_cast<double>(days_from_civil(y, 1, 1));
        const auto next = static_cast<double>(days_from_civil(y + 1, 1, 1));
        // col >= Jan 1 expressed as col > Dec 31 of the previous year
        out.push_back({std::to_string(y), static_cast<double>(y), first, next - 1,
                       detail::with_predicates(t.base, {{tbl, col, CmpOp::Gt, first - 1}, {tbl, col, CmpOp::Lt, next}})});
      }
      break;
    }

    case Grouping::Kind::EquiWidthBuckets: {
      const double lo = sample_values.front(), hi = sample_values.back();
      const int k = t.grouping.buckets;
      if (k < 1) fail(ErrorCode::InvalidTemplate, "bucket count must be >= 1");
      if (lo == hi) {
        out.push_back({"[" + detail::label_for(lo, kind) + ", " + detail::label_for(hi, kind) + "]", lo, lo, hi,
                       detail::with_predicates(t.base, {{tbl, col, CmpOp::Gt, detail::below(lo, kind)},
                                                        {tbl, col, CmpOp::Lt, detail::above(hi, kind)}})});
        break;
      }
      const double width = (hi - lo) / k;
      for (int b = 0; b < k; ++b) {
        const double b_lo = lo + width * b;
        const bool last = b == k - 1;
        const double b_hi = last ? hi : lo + width * (b + 1);
        // [b_lo, b_hi) except the last bucket, which is closed
        const double upper = last ? detail::above(b_hi, kind)
                                  : (kind == ColumnKind::Float ? b_hi : std::ceil(b_hi));
        std::string label = "[" + detail::label_for(b_lo, ColumnKind::Float) + ", " +
                            detail::label_for(b_hi, ColumnKind::Float) + (last ? "]" : ")");
        if (kind == ColumnKind::Date)
          label = "[" + detail::label_for(std::ceil(b_lo), kind) + ", " + detail::label_for(std::ceil(b_hi), kind) +
                  (last ? "]" : ")");
        out.push_back({label, b_lo, b_lo, b_hi,
                       detail::with_predicates(t.base, {{tbl, col, CmpOp::Gt, detail::below(b_lo, kind)},
                                                        {tbl, col, CmpOp::Lt, upper}})});
      }
      break;
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TemplateInstance& a, const TemplateInstance& b) { return a.sort_key < b.sort_key; });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const TemplateInstance& a, const TemplateInstance& b) { return a.query == b.query; }),
            out.end());
  return out;
}

}  // namespace deepsketch
