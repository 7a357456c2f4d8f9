#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deepsketch/datastore/executor.hpp"
#include "deepsketch/datastore/sampling.hpp"
#include "deepsketch/datastore/table_store.hpp"
#include "deepsketch/featurizer/featurize.hpp"
#include "deepsketch/featurizer/vocabulary.hpp"
#include "deepsketch/mscn/train.hpp"
#include "deepsketch/parallel.hpp"
#include "deepsketch/queryir/generator.hpp"
#include "deepsketch/queryir/sql.hpp"
#include "deepsketch/queryir/template.hpp"

namespace deepsketch {

inline constexpr std::uint32_t kSketchFormatVersion = 1;
inline constexpr std::size_t kDefaultMaxSketchTables = 6;

struct SketchMetadata {
  std::uint32_t format_version = kSketchFormatVersion;
  std::uint64_t seed = 0;
  std::uint64_t train_config_hash = 0;
  std::int64_t created_at = 0;  // unix seconds; caller-supplied so files stay reproducible
  std::uint64_t num_training_queries = 0;
  int epochs = 0;
  QErrorSummary validation;

  friend bool operator==(const SketchMetadata& a, const SketchMetadata& b) {
    return a.format_version == b.format_version && a.seed == b.seed && a.train_config_hash == b.train_config_hash &&
           a.created_at == b.created_at && a.num_training_queries == b.num_training_queries && a.epochs == b.epochs &&
           a.validation.values() == b.validation.values() && a.validation.count == b.validation.count;
  }
};

/// A trained model together with everything needed to answer estimates
/// without the underlying tables: the schema subset it covers, the encoding
/// vocabulary, the materialized sample rows, and the statistics used by the
/// baseline estimators.
struct DeepSketch {
  SchemaCatalog schema;
  EncodingVocabulary vocab;
  mscn::MscnParams<float> params;
  SampleSet samples;
  std::map<std::string, Table> sample_rows;  // sampled rows only, in sample order
  std::map<std::string, std::uint64_t> row_counts;
  std::map<std::string, EquiDepthHistogram> histograms;               // "table.column"
  std::map<std::vector<std::string>, std::uint64_t> join_cardinalities;  // sorted table set -> unfiltered count
  SketchMetadata meta;

  const Table& sample_table(const std::string& t) const {
    auto it = sample_rows.find(t);
    if (it == sample_rows.end()) fail(ErrorCode::UnknownSymbol, "table " + t);
    return it->second;
  }

  /// Non-null sampled values of one column (input to template expansion).
  std::vector<double> sampled_values(const std::string& table, const std::string& column) const {
    const auto& t = sample_table(table);
    const auto& c = t.column(column);
    std::vector<double> out;
    for (std::size_t r = 0; r < t.row_count; ++r)
      if (!c.is_null(r)) out.push_back(c.values[r]);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Creation

enum class SketchPhase { Queued, Generating, Labeling, Training, Done, Failed, Cancelled };

inline std::string_view to_string(SketchPhase p) {
  switch (p) {
    case SketchPhase::Queued: return "queued";
    case SketchPhase::Generating: return "generating";
    case SketchPhase::Labeling: return "labeling";
    case SketchPhase::Training: return "training";
    case SketchPhase::Done: return "done";
    case SketchPhase::Failed: return "failed";
    case SketchPhase::Cancelled: return "cancelled";
  }
  return "queued";
}

struct ProgressEvent {
  SketchPhase phase = SketchPhase::Queued;
  double fraction = 0;  // within the phase
  std::optional<mscn::EpochMetrics> epoch;
};

/// Receives progress; returning false requests cancellation.
using ProgressSink = std::function<bool(const ProgressEvent&)>;

struct SketchConfig {
  std::vector<std::string> tables;
  std::size_t num_queries = 10000;
  std::size_t sample_size = kDefaultSampleSize;
  std::uint64_t seed = 0;
  GeneratorConfig generator;
  mscn::TrainConfig train;
  std::size_t threads = 1;  // labeling workers; results do not depend on it
  std::size_t max_tables = kDefaultMaxSketchTables;
  std::int64_t created_at = 0;
  std::size_t label_batch = 64;  // cancellation granularity during labeling
};

struct CreateResult {
  DeepSketch sketch;
  mscn::TrainReport report;
};

namespace detail {

inline Table materialize_sample(const Table& source, const std::vector<std::uint32_t>& rows) {
  Table t;
  t.def = source.def;
  t.row_count = rows.size();
  for (const auto& c : source.columns) {
    Column col{c.def, {}, {}};
    col.values.reserve(rows.size());
    col.nulls.reserve(rows.size());
    for (auto r : rows) {
      col.values.push_back(c.values[r]);
      col.nulls.push_back(c.nulls[r]);
    }
    t.columns.push_back(std::move(col));
  }
  t.finalize(0);
  return t;
}

/// All connected table subsets of `schema` (each sorted).
inline std::vector<std::vector<std::string>> connected_subsets(const SchemaCatalog& schema) {
  std::vector<std::string> names;
  for (const auto& t : schema.tables()) names.push_back(t.name);
  std::sort(names.begin(), names.end());
  std::vector<std::vector<std::string>> out;
  const std::size_t n = names.size();
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) {
    std::vector<std::string> subset;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1U) subset.push_back(names[i]);
    if (schema.is_connected(subset)) out.push_back(std::move(subset));
  }
  return out;
}

inline Query unfiltered_join(const SchemaCatalog& schema, const std::vector<std::string>& tables) {
  std::vector<FkEdge> edges;
  for (const auto& e : schema.fk_edges())
    if (std::find(tables.begin(), tables.end(), e.child_table) != tables.end() &&
        std::find(tables.begin(), tables.end(), e.parent_table) != tables.end())
      edges.push_back(e);
  return Query(tables, edges, {});
}

}  // namespace detail

/// Builds a sketch: draw samples, generate training queries, label them with
/// exact cardinalities and sample bitmaps, then featurize and train.
inline CreateResult create_sketch(const TableStore& store, const SketchConfig& config, const ProgressSink& sink = {}) {
  auto emit = [&](SketchPhase phase, double fraction, std::optional<mscn::EpochMetrics> epoch = std::nullopt) {
    if (sink && !sink({phase, fraction, epoch})) fail(ErrorCode::Cancelled, "sketch creation cancelled");
  };
  if (config.tables.empty()) fail(ErrorCode::InvalidConfig, "no tables selected");
  if (config.tables.size() > config.max_tables)
    fail(ErrorCode::InvalidConfig, "at most " + std::to_string(config.max_tables) + " tables per sketch");
  if (!store.schema().is_connected(config.tables))
    fail(ErrorCode::InvalidConfig, "selected tables do not form a connected FK subgraph");
  if (config.num_queries == 0) fail(ErrorCode::EmptyCorpus, "number of training queries must be >= 1");
  config.train.validate();
  const auto schema = store.schema().subset(config.tables);

  // (1) samples
  emit(SketchPhase::Generating, 0.0);
  const auto samples = draw_samples(store, config.sample_size, derive_seed(config.seed, "samples"), config.tables);

  // (2) training queries
  GeneratorConfig gen = config.generator;
  gen.seed = derive_seed(config.seed, "generator");
  Rng rng(derive_seed(gen.seed, "queries"));
  std::vector<Query> queries;
  queries.reserve(config.num_queries);
  const std::size_t step = std::max<std::size_t>(1, config.num_queries / 20);
  for (std::size_t i = 0; i < config.num_queries; ++i) {
    queries.push_back(generate_query(schema, store, gen, rng));
    if ((i + 1) % step == 0) emit(SketchPhase::Generating, static_cast<double>(i + 1) / config.num_queries);
  }

  // (3) labels and bitmaps
  emit(SketchPhase::Labeling, 0.0);
  std::vector<std::uint64_t> cards(queries.size());
  std::vector<std::map<std::string, Bitmap>> bitmaps(queries.size());
  for (std::size_t start = 0; start < queries.size(); start += config.label_batch) {
    const auto end = std::min(queries.size(), start + config.label_batch);
    parallel_for(start, end, config.threads, [&](std::size_t i) {
      cards[i] = true_cardinality(store, queries[i]);
      bitmaps[i] = query_bitmaps(queries[i], store, samples);
    });
    emit(SketchPhase::Labeling, static_cast<double>(end) / queries.size());
  }

  // (4) featurize and train
  emit(SketchPhase::Training, 0.0);
  DeepSketch sketch;
  sketch.schema = schema;
  sketch.vocab = build_vocabulary(schema, store, cards, config.sample_size);
  std::vector<mscn::LabeledSample> corpus;
  corpus.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i)
    corpus.push_back(mscn::make_labeled_sample(sketch.vocab, featurize(sketch.vocab, queries[i], bitmaps[i]), cards[i]));
  bitmaps.clear();

  mscn::TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, "train");
  auto init = mscn::MscnParams<float>::for_vocabulary(sketch.vocab, tc.hidden, tc.seed);
  bool cancelled = false;
  mscn::TrainObserver observer;
  observer.should_stop = [&] { return cancelled; };
  observer.on_progress = [&](double f) {
    if (sink && !sink({SketchPhase::Training, f, std::nullopt})) cancelled = true;
  };
  observer.on_epoch = [&](const mscn::EpochMetrics& m) {
    if (sink && !sink({SketchPhase::Training, static_cast<double>(m.epoch) / tc.epochs, m})) cancelled = true;
  };
  auto trained = mscn::train(std::move(init), corpus, sketch.vocab, tc, observer);
  if (cancelled) fail(ErrorCode::Cancelled, "sketch creation cancelled");
  sketch.params = std::move(trained.params);

  sketch.samples = samples;
  for (const auto& t : config.tables) {
    const auto& data = store.table(t);
    sketch.sample_rows[t] = detail::materialize_sample(data, samples.of(t));
    sketch.row_counts[t] = data.row_count;
    for (std::size_t c = 0; c < data.columns.size(); ++c)
      sketch.histograms[column_key(t, data.columns[c].def.name)] = data.histograms[c];
  }
  for (const auto& subset : detail::connected_subsets(schema))
    sketch.join_cardinalities[subset] = true_cardinality(store, detail::unfiltered_join(schema, subset));

  sketch.meta.seed = config.seed;
  sketch.meta.train_config_hash = tc.hash();
  sketch.meta.created_at = config.created_at;
  sketch.meta.num_training_queries = queries.size();
  sketch.meta.epochs = tc.epochs;
  sketch.meta.validation = trained.report.validation;
  emit(SketchPhase::Done, 1.0);
  return {std::move(sketch), std::move(trained.report)};
}

// ---------------------------------------------------------------------------
// Estimation

struct EstimateResult {
  double cardinality = 0;
  std::vector<std::string> zero_tuple_tables;  // tables whose sample bitmap is all zero
  std::vector<std::string> clamped_literals;   // "table.column" with literal outside [min, max]
};

/// Parses SQL against the sketch's own schema subset. Tables or columns
/// outside it are out of the sketch's scope and reported as UnknownSymbol.
inline Query parse_for_sketch(const DeepSketch& sketch, std::string_view sql) {
  try {
    return parse_query(sql, sketch.schema);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::UnknownTable || e.code() == ErrorCode::UnknownColumn)
      fail(ErrorCode::UnknownSymbol, e.detail(), e.position());
    throw;
  }
}

namespace detail {

inline void check_scope(const DeepSketch& sketch, const Query& q) {
  for (const auto& t : q.tables()) sketch.vocab.table_index(t);
  for (const auto& j : q.joins()) sketch.vocab.join_index(j);
  for (const auto& p : q.predicates()) sketch.vocab.column_index(p.table, p.column);
  validate_query(q, sketch.schema);
}

inline std::map<std::string, Bitmap> sketch_bitmaps(const DeepSketch& sketch, const Query& q) {
  std::map<std::string, Bitmap> out;
  for (const auto& t : q.tables()) {
    const auto& rows = sketch.sample_table(t);
    std::vector<std::uint32_t> identity(rows.row_count);
    for (std::uint32_t i = 0; i < identity.size(); ++i) identity[i] = i;
    const auto preds = q.predicates_on(t);
    out[t] = conjunctive_bitmap(rows, identity, sketch.samples.sample_size, preds);
  }
  return out;
}

inline std::uint64_t join_cardinality(const DeepSketch& sketch, const Query& q) {
  auto it = sketch.join_cardinalities.find(q.tables());
  if (it == sketch.join_cardinalities.end())
    fail(ErrorCode::UnknownSymbol, "no join statistics for this table set");
  return it->second;
}

}  // namespace detail

/// Learned estimate. Touches only the sketch.
inline EstimateResult estimate(const DeepSketch& sketch, const Query& q) {
  detail::check_scope(sketch, q);
  const auto bitmaps = detail::sketch_bitmaps(sketch, q);
  EstimateResult r;
  for (const auto& [t, bm] : bitmaps)
    if (bm.none()) r.zero_tuple_tables.push_back(t);
  for (const auto& p : q.predicates())
    if (literal_out_of_range(sketch.vocab, p.table, p.column, p.value))
      r.clamped_literals.push_back(column_key(p.table, p.column));
  r.cardinality = mscn::predict(sketch.params, sketch.vocab, featurize(sketch.vocab, q, bitmaps));
  return r;
}

struct SamplingOptions {
  /// Selectivity assumed for a table whose predicates match no sampled row,
  /// as a function of the table's valid sample count.
  std::function<double(std::size_t)> zero_tuple_selectivity = [](std::size_t valid) {
    return 1.0 / static_cast<double>(valid + 1);
  };
};

/// Per-table sample selectivities multiplied under independence and scaled
/// by the exact unfiltered join size.
inline double sampling_estimate(const DeepSketch& sketch, const Query& q, const SamplingOptions& options = {}) {
  detail::check_scope(sketch, q);
  double card = static_cast<double>(detail::join_cardinality(sketch, q));
  for (const auto& [t, bm] : detail::sketch_bitmaps(sketch, q)) {
    if (bm.valid == 0) return 0.0;
    const auto hits = bm.popcount();
    card *= hits == 0 ? options.zero_tuple_selectivity(bm.valid)
                      : static_cast<double>(hits) / static_cast<double>(bm.valid);
  }
  return card;
}

/// Histogram selectivities multiplied under independence and uniformity,
/// scaled by the exact unfiltered join size.
inline double independence_estimate(const DeepSketch& sketch, const Query& q) {
  detail::check_scope(sketch, q);
  double card = static_cast<double>(detail::join_cardinality(sketch, q));
  for (const auto& p : q.predicates()) {
    auto it = sketch.histograms.find(column_key(p.table, p.column));
    if (it == sketch.histograms.end()) fail(ErrorCode::UnknownColumn, column_key(p.table, p.column));
    card *= it->second.selectivity(p.op, p.value);
  }
  return card;
}

/// Same baseline computed directly from a store's histograms.
inline double independence_estimate(const TableStore& store, const Query& q) {
  validate_query(q, store.schema());
  const auto join = true_cardinality(store, Query(q.tables(), q.joins(), {}));
  double card = static_cast<double>(join);
  for (const auto& p : q.predicates()) card *= store.table(p.table).histogram(p.column).selectivity(p.op, p.value);
  return card;
}

/// Expands a template against the sketch's sample of the placeholder column.
inline std::vector<TemplateInstance> expand_template(const QueryTemplate& t, const DeepSketch& sketch) {
  validate_template(t, sketch.schema);
  return expand_template(t, sketch.sampled_values(t.placeholder.table, t.placeholder.column),
                         sketch.schema.column(t.placeholder.table, t.placeholder.column).kind);
}

/// Expands a template against a SampleSet drawn from a store.
inline std::vector<TemplateInstance> expand_template(const QueryTemplate& t, const SampleSet& samples,
                                                     const TableStore& store) {
  validate_template(t, store.schema());
  const auto& table = store.table(t.placeholder.table);
  const auto& col = table.column(t.placeholder.column);
  std::vector<double> values;
  for (auto r : samples.of(t.placeholder.table))
    if (!col.is_null(r)) values.push_back(col.values[r]);
  return expand_template(t, std::move(values), col.def.kind);
}

}  // namespace deepsketch
