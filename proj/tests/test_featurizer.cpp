#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deepsketch/datastore/executor.hpp"
#include "deepsketch/featurizer/featurize.hpp"
#include "deepsketch/featurizer/vocabulary.hpp"
#include "deepsketch/queryir/generator.hpp"
#include "deepsketch/queryir/sql.hpp"
#include "test_support.hpp"

using namespace deepsketch;

namespace {

struct Fixture {
  TableStore store = testsupport::imdb_mini();
  SampleSet samples = draw_samples(store, 64, 3);
  std::vector<std::uint64_t> cards{10, 900, 0, 4};
  EncodingVocabulary vocab = build_vocabulary(store.schema(), store, cards, 64);
};

}  // namespace

TEST(Vocabulary, CountsAndOrder) {
  Fixture f;
  const auto& v = f.vocab;
  EXPECT_EQ(v.num_tables(), 3U);
  EXPECT_EQ(v.num_joins(), 2U);
  EXPECT_EQ(v.num_columns(), 5U + 2U + 3U);
  EXPECT_EQ(v.table_feature_dim(), 3U + 64U);
  EXPECT_EQ(v.join_feature_dim(), 2U);
  EXPECT_EQ(v.predicate_feature_dim(), 10U + 4U);
  EXPECT_EQ(v.table_index("keyword"), 0U);
  EXPECT_EQ(v.table_index("title"), 2U);
  EXPECT_EQ(v.column_index("keyword", "id"), 0U);
  EXPECT_DOUBLE_EQ(v.label_log_max, std::log1p(900.0));
  for (const auto& r : v.column_ranges) EXPECT_LE(r.min, r.max);
  EXPECT_EQ(v, build_vocabulary(f.store.schema(), f.store, f.cards, 64));
  EXPECT_DS_ERROR(v.table_index("nope"), ErrorCode::UnknownSymbol);
  EXPECT_DS_ERROR(v.column_index("title", "nope"), ErrorCode::UnknownSymbol);
  const auto j = vocabulary_to_json(v);
  EXPECT_EQ(j["tables"].size(), 3U);
}

TEST(Vocabulary, Guards) {
  Fixture f;
  std::vector<std::uint64_t> none;
  EXPECT_DS_ERROR(build_vocabulary(f.store.schema(), f.store, none, 64), ErrorCode::EmptyTrainingSet);
  std::vector<std::uint64_t> zeros{0, 0};
  EXPECT_DS_ERROR(build_vocabulary(f.store.schema(), f.store, zeros, 64), ErrorCode::DegenerateLabels);
}

TEST(Vocabulary, LiteralNormalization) {
  EncodingVocabulary v;
  v.columns = {{"t.a", 0}, {"t.b", 1}};
  v.column_ranges = {{0, 200}, {5, 5}};
  EXPECT_DOUBLE_EQ(normalize_literal(v, "t", "a", 0), 0.0);
  EXPECT_DOUBLE_EQ(normalize_literal(v, "t", "a", 200), 1.0);
  EXPECT_DOUBLE_EQ(normalize_literal(v, "t", "a", 50), 0.25);
  EXPECT_DOUBLE_EQ(normalize_literal(v, "t", "a", -10), 0.0);
  EXPECT_DOUBLE_EQ(normalize_literal(v, "t", "a", 1e9), 1.0);
  EXPECT_TRUE(literal_out_of_range(v, "t", "a", 201));
  EXPECT_FALSE(literal_out_of_range(v, "t", "a", 200));
  EXPECT_DOUBLE_EQ(normalize_literal(v, "t", "b", 5), 0.5);
  EXPECT_DS_ERROR(normalize_literal(v, "t", "c", 1), ErrorCode::UnknownSymbol);
}

TEST(Vocabulary, LabelNormalization) {
  EncodingVocabulary v;
  v.label_log_max = std::log1p(1e6);
  EXPECT_DOUBLE_EQ(normalize_label(v, 1e6), 1.0);
  EXPECT_DOUBLE_EQ(normalize_label(v, 0), 0.0);
  EXPECT_NEAR(denormalize_label(v, normalize_label(v, 12345)), 12345, 12345 * 1e-6);
  EXPECT_EQ(denormalize_label(v, -0.5), 0.0);
  double prev = -1;
  for (double c : {0.0, 0.5, 1.0, 2.0, 10.0, 1e3, 1e6, 1e9}) {
    const double y = normalize_label(v, c);
    EXPECT_GT(y, prev);
    prev = y;
  }
}

TEST(Featurize, SingleTableWithoutPredicates) {
  Fixture f;
  auto q = parse_query("SELECT COUNT(*) FROM keyword", f.store.schema());
  auto fq = featurize(f.vocab, q, f.store, f.samples);
  ASSERT_EQ(fq.tables.size(), 1U);
  EXPECT_TRUE(fq.joins.empty());
  EXPECT_TRUE(fq.predicates.empty());
  const auto vec = fq.table_vector(0, f.vocab);
  // keyword has 60 rows < 64 slots: ones on the 60 valid slots only
  EXPECT_EQ(vec[0], 1.0);
  for (std::size_t b = 0; b < 64; ++b) EXPECT_EQ(vec[3 + b], b < 60 ? 1.0 : 0.0);
}

TEST(Featurize, PaperQueryShapeAndZeroTuples) {
  Fixture f;
  auto q = parse_query(
      "SELECT COUNT(*) FROM title t, movie_keyword mk, keyword k WHERE mk.movie_id=t.id AND mk.keyword_id=k.id "
      "AND k.id=17 AND t.production_year=1995",
      f.store.schema());
  auto fq = featurize(f.vocab, q, f.store, f.samples);
  EXPECT_EQ(fq.tables.size(), 3U);
  EXPECT_EQ(fq.joins.size(), 2U);
  EXPECT_EQ(fq.predicates.size(), 2U);

  auto zero = parse_query("SELECT COUNT(*) FROM title t WHERE t.kind_id > 100", f.store.schema());
  auto fz = featurize(f.vocab, zero, f.store, f.samples);
  EXPECT_TRUE(fz.tables[0].bitmap.none());
  EXPECT_DOUBLE_EQ(fz.predicates[0].value, 1.0);  // clamped
}

TEST(Featurize, InvariantsOnGeneratedQueries) {
  Fixture f;
  GeneratorConfig gc;
  gc.max_joins = 2;
  gc.max_predicates_per_table = 3;
  gc.include_key_columns = true;
  gc.literal_source = GeneratorConfig::LiteralSource::UniformInRange;
  for (const auto& q : generate_queries(f.store.schema(), f.store, gc, 300)) {
    auto fq = featurize(f.vocab, q, f.store, f.samples);
    ASSERT_EQ(fq.tables.size(), q.tables().size());
    for (std::size_t i = 0; i < fq.tables.size(); ++i) {
      const auto vec = fq.table_vector(i, f.vocab);
      EXPECT_EQ(vec.size(), f.vocab.table_feature_dim());
      EXPECT_DOUBLE_EQ(std::accumulate(vec.begin(), vec.begin() + 3, 0.0), 1.0);
      for (double x : vec) EXPECT_TRUE(x == 0.0 || x == 1.0);
      // bitmap block equals the datastore's conjunctive bitmap bit for bit
      const auto& t = q.tables()[i];
      auto preds = q.predicates_on(t);
      EXPECT_EQ(fq.tables[i].bitmap, predicate_bitmap(f.store, f.samples, t, preds));
    }
    for (std::size_t i = 0; i < fq.joins.size(); ++i) {
      const auto vec = fq.join_vector(i, f.vocab);
      EXPECT_DOUBLE_EQ(std::accumulate(vec.begin(), vec.end(), 0.0), 1.0);
    }
    for (std::size_t i = 0; i < fq.predicates.size(); ++i) {
      const auto vec = fq.predicate_vector(i, f.vocab);
      const auto C = static_cast<std::ptrdiff_t>(f.vocab.num_columns());
      EXPECT_EQ(vec.size(), f.vocab.predicate_feature_dim());
      EXPECT_DOUBLE_EQ(std::accumulate(vec.begin(), vec.begin() + C, 0.0), 1.0);
      EXPECT_DOUBLE_EQ(std::accumulate(vec.begin() + C, vec.begin() + C + 3, 0.0), 1.0);
      EXPECT_GE(vec.back(), 0.0);
      EXPECT_LE(vec.back(), 1.0);
    }
  }
}

TEST(Featurize, OutOfVocabularyQuery) {
  Fixture f;
  // Vocabulary built over a subset schema does not know the other tables.
  TableDef only{"keyword", {{"id", ColumnKind::Integer, false}, {"phonetic_code", ColumnKind::Integer, false}}, "id"};
  SchemaCatalog sub({only}, {});
  std::vector<std::uint64_t> cards{5};
  auto v = build_vocabulary(sub, f.store, cards, 64);
  auto q = parse_query("SELECT COUNT(*) FROM title", f.store.schema());
  EXPECT_DS_ERROR(featurize(v, q, f.store, f.samples), ErrorCode::UnknownSymbol);
}

TEST(Featurize, PermutedInputsGiveEqualFeatures) {
  Fixture f;
  Query a({"title", "movie_keyword"}, {{"movie_keyword", "movie_id", "title"}},
          {{"title", "kind_id", CmpOp::Lt, 4}, {"movie_keyword", "keyword_id", CmpOp::Gt, 10}});
  Query b({"movie_keyword", "title"}, {{"movie_keyword", "movie_id", "title"}},
          {{"movie_keyword", "keyword_id", CmpOp::Gt, 10}, {"title", "kind_id", CmpOp::Lt, 4}});
  EXPECT_EQ(featurize(f.vocab, a, f.store, f.samples), featurize(f.vocab, b, f.store, f.samples));
}

TEST(Batch, PaddingRowsAreZeroAndMasked) {
  Fixture f;
  GeneratorConfig gc;
  gc.max_joins = 2;
  std::vector<FeaturizedQuery> fqs;
  for (const auto& q : generate_queries(f.store.schema(), f.store, gc, 20)) fqs.push_back(featurize(f.vocab, q, f.store, f.samples));
  auto batch = make_batch<double>(fqs, f.vocab);
  EXPECT_EQ(batch.size, 20U);
  auto check = [&](const auto& set, auto count, auto row_of) {
    for (std::size_t b = 0; b < fqs.size(); ++b)
      for (std::size_t i = 0; i < set.max_n; ++i) {
        const auto row = static_cast<Eigen::Index>(b * set.max_n + i);
        const std::size_t n = count(fqs[b]);
        if (i < n) {
          EXPECT_EQ(set.mask(row), 1.0);
          const auto expect = row_of(fqs[b], i);
          for (std::size_t c = 0; c < expect.size(); ++c) EXPECT_EQ(set.features(row, static_cast<Eigen::Index>(c)), expect[c]);
        } else {
          EXPECT_EQ(set.mask(row), 0.0);
          EXPECT_EQ(set.features.row(row).squaredNorm(), 0.0);
        }
      }
  };
  check(batch.tables, [](const FeaturizedQuery& q) { return q.tables.size(); },
        [&](const FeaturizedQuery& q, std::size_t i) { return q.table_vector(i, f.vocab); });
  check(batch.joins, [](const FeaturizedQuery& q) { return q.joins.size(); },
        [&](const FeaturizedQuery& q, std::size_t i) { return q.join_vector(i, f.vocab); });
  check(batch.predicates, [](const FeaturizedQuery& q) { return q.predicates.size(); },
        [&](const FeaturizedQuery& q, std::size_t i) { return q.predicate_vector(i, f.vocab); });
}
