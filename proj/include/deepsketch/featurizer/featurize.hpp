#pragma once

#include <bit>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deepsketch/datastore/sampling.hpp"
#include "deepsketch/featurizer/vocabulary.hpp"
#include "deepsketch/queryir/query.hpp"

namespace deepsketch {

/// Featurized query in compact form: one-hot blocks are kept as indices and
/// bitmaps as bit words. Dense vectors are produced on demand or directly
/// into a batch.
struct FeaturizedQuery {
  struct TableElement {
    std::uint32_t table = 0;
    Bitmap bitmap;
    friend bool operator==(const TableElement&, const TableElement&) = default;
  };
  struct PredicateElement {
    std::uint32_t column = 0;
    std::uint32_t op = 0;
    double value = 0;  // normalized to [0, 1]
    friend bool operator==(const PredicateElement&, const PredicateElement&) = default;
  };

  std::vector<TableElement> tables;
  std::vector<std::uint32_t> joins;
  std::vector<PredicateElement> predicates;

  /// one-hot(T) ++ bitmap(s)
  std::vector<double> table_vector(std::size_t i, const EncodingVocabulary& v) const {
    std::vector<double> out(v.table_feature_dim(), 0.0);
    out[tables[i].table] = 1.0;
    for (std::size_t b = 0; b < v.sample_size; ++b)
      if (tables[i].bitmap.test(b)) out[v.num_tables() + b] = 1.0;
    return out;
  }
  /// one-hot(J)
  std::vector<double> join_vector(std::size_t i, const EncodingVocabulary& v) const {
    std::vector<double> out(v.join_feature_dim(), 0.0);
    out[joins[i]] = 1.0;
    return out;
  }
  /// one-hot(C) ++ one-hot(3) ++ value
  std::vector<double> predicate_vector(std::size_t i, const EncodingVocabulary& v) const {
    std::vector<double> out(v.predicate_feature_dim(), 0.0);
    out[predicates[i].column] = 1.0;
    out[v.num_columns() + predicates[i].op] = 1.0;
    out[v.num_columns() + EncodingVocabulary::kNumOps] = predicates[i].value;
    return out;
  }

  friend bool operator==(const FeaturizedQuery&, const FeaturizedQuery&) = default;
};

/// Featurizes `query` given the per-table conjunctive sample bitmaps.
inline FeaturizedQuery featurize(const EncodingVocabulary& v, const Query& query,
                                 const std::map<std::string, Bitmap>& bitmaps) {
  FeaturizedQuery f;
  for (const auto& t : query.tables()) {
    const auto idx = v.table_index(t);
    auto it = bitmaps.find(t);
    if (it == bitmaps.end()) fail(ErrorCode::UnknownSymbol, "no sample bitmap for table " + t);
    if (it->second.size != v.sample_size)
      fail(ErrorCode::ShapeMismatch, "bitmap for " + t + " has " + std::to_string(it->second.size) +
                                         " slots, vocabulary expects " + std::to_string(v.sample_size));
    f.tables.push_back({idx, it->second});
  }
  for (const auto& j : query.joins()) f.joins.push_back(v.join_index(j));
  for (const auto& p : query.predicates())
    f.predicates.push_back(
        {v.column_index(p.table, p.column), static_cast<std::uint32_t>(p.op), normalize_literal(v, p.table, p.column, p.value)});
  return f;
}

inline std::map<std::string, Bitmap> query_bitmaps(const Query& query, const TableStore& store,
                                                   const SampleSet& samples) {
  std::map<std::string, Bitmap> out;
  for (const auto& t : query.tables()) {
    const auto preds = query.predicates_on(t);
    out[t] = predicate_bitmap(store, samples, t, preds);
  }
  return out;
}

inline FeaturizedQuery featurize(const EncodingVocabulary& v, const Query& query, const TableStore& store,
                                 const SampleSet& samples) {
  // resolve symbols first so an out-of-vocabulary query reports UnknownSymbol
  for (const auto& t : query.tables()) v.table_index(t);
  return featurize(v, query, query_bitmaps(query, store, samples));
}

/// Zero-padded, masked dense batch. Row `b * max_n + i` of each set matrix is
/// element `i` of query `b`; its mask entry is 1 for real elements and 0 for
/// padding. Padding rows are all-zero.
template <typename Scalar>
struct FeaturizedBatch {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Set {
    Matrix features;
    Vector mask;
    std::size_t max_n = 1;
  };

  std::size_t size = 0;
  Set tables;
  Set joins;
  Set predicates;
};

template <typename Scalar>
FeaturizedBatch<Scalar> make_batch(std::span<const FeaturizedQuery* const> queries, const EncodingVocabulary& v) {
  FeaturizedBatch<Scalar> batch;
  const std::size_t B = queries.size();
  batch.size = B;
  std::size_t mt = 1, mj = 1, mp = 1;
  for (const auto* q : queries) {
    mt = std::max(mt, q->tables.size());
    mj = std::max(mj, q->joins.size());
    mp = std::max(mp, q->predicates.size());
  }
  auto init = [B](auto& set, std::size_t max_n, std::size_t dim) {
    set.max_n = max_n;
    set.features.setZero(static_cast<Eigen::Index>(B * max_n), static_cast<Eigen::Index>(dim));
    set.mask.setZero(static_cast<Eigen::Index>(B * max_n));
  };
  init(batch.tables, mt, v.table_feature_dim());
  init(batch.joins, mj, v.join_feature_dim());
  init(batch.predicates, mp, v.predicate_feature_dim());
  const auto T = static_cast<Eigen::Index>(v.num_tables());
  const auto C = static_cast<Eigen::Index>(v.num_columns());
  for (std::size_t b = 0; b < B; ++b) {
    const auto& q = *queries[b];
    for (std::size_t i = 0; i < q.tables.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(b * mt + i);
      batch.tables.mask(row) = 1;
      batch.tables.features(row, q.tables[i].table) = 1;
      const auto& bm = q.tables[i].bitmap;
      for (std::size_t w = 0; w < bm.words.size(); ++w) {
        auto word = bm.words[w];
        while (word) {
          const int bit = std::countr_zero(word);
          batch.tables.features(row, T + static_cast<Eigen::Index>(w * 64 + bit)) = 1;
          word &= word - 1;
        }
      }
    }
    for (std::size_t i = 0; i < q.joins.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(b * mj + i);
      batch.joins.mask(row) = 1;
      batch.joins.features(row, q.joins[i]) = 1;
    }
    for (std::size_t i = 0; i < q.predicates.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(b * mp + i);
      const auto& p = q.predicates[i];
      batch.predicates.mask(row) = 1;
      batch.predicates.features(row, p.column) = 1;
      batch.predicates.features(row, C + p.op) = 1;
      batch.predicates.features(row, C + EncodingVocabulary::kNumOps) = static_cast<Scalar>(p.value);
    }
  }
  return batch;
}

template <typename Scalar>
FeaturizedBatch<Scalar> make_batch(const std::vector<FeaturizedQuery>& queries, const EncodingVocabulary& v) {
  std::vector<const FeaturizedQuery*> ptrs;
  for (const auto& q : queries) ptrs.push_back(&q);
  return make_batch<Scalar>(std::span<const FeaturizedQuery* const>(ptrs), v);
}

}  // namespace deepsketch
