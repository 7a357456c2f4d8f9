#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "deepsketch/datastore/table_store.hpp"
#include "deepsketch/queryir/query.hpp"
#include "deepsketch/random.hpp"

namespace deepsketch {

inline constexpr std::size_t kDefaultSampleSize = 1000;

/// Fixed-width bitvector over sample slots. Slots at or beyond `valid` (when a
/// table has fewer rows than the sample size) are always zero.
struct Bitmap {
  std::size_t size = 0;
  std::size_t valid = 0;
  std::vector<std::uint64_t> words;

  Bitmap() = default;
  Bitmap(std::size_t size_, std::size_t valid_) : size(size_), valid(valid_), words((size_ + 63) / 64, 0) {}

  static Bitmap all_valid(std::size_t size, std::size_t valid) {
    Bitmap b(size, valid);
    for (std::size_t i = 0; i < valid; ++i) b.set(i);
    return b;
  }

  bool test(std::size_t i) const { return (words[i / 64] >> (i % 64)) & 1U; }
  void set(std::size_t i) { words[i / 64] |= std::uint64_t{1} << (i % 64); }

  std::size_t popcount() const {
    std::size_t n = 0;
    for (auto w : words) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  bool none() const { return popcount() == 0; }

  Bitmap& operator&=(const Bitmap& other) {
    for (std::size_t i = 0; i < words.size(); ++i) words[i] &= other.words[i];
    return *this;
  }

  friend bool operator==(const Bitmap&, const Bitmap&) = default;
};

/// Per-table sampled row indices (ascending), drawn uniformly without
/// replacement.
struct SampleSet {
  std::size_t sample_size = kDefaultSampleSize;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<std::uint32_t>> indices;

  const std::vector<std::uint32_t>& of(const std::string& table) const {
    auto it = indices.find(table);
    if (it == indices.end()) fail(ErrorCode::UnknownTable, "no sample for table " + table);
    return it->second;
  }

  friend bool operator==(const SampleSet&, const SampleSet&) = default;
};

/// Uniform sample of `s` row indices from [0, row_count) via reservoir
/// sampling (Algorithm R). Returns all rows when row_count <= s.
inline std::vector<std::uint32_t> sample_rows(std::size_t row_count, std::size_t s, Rng& rng) {
  std::vector<std::uint32_t> out;
  if (row_count <= s) {
    out.resize(row_count);
    for (std::size_t i = 0; i < row_count; ++i) out[i] = static_cast<std::uint32_t>(i);
    return out;
  }
  out.resize(s);
  for (std::size_t i = 0; i < s; ++i) out[i] = static_cast<std::uint32_t>(i);
  for (std::size_t i = s; i < row_count; ++i) {
    const auto j = rng.uniform_below(i + 1);
    if (j < s) out[j] = static_cast<std::uint32_t>(i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Draws the materialized samples for every table (or only `tables`, when
/// given). Each table gets its own stream derived from (seed, table name), so
/// a table's sample does not depend on which other tables are sampled.
inline SampleSet draw_samples(const TableStore& store, std::size_t s, std::uint64_t seed,
                              const std::vector<std::string>& tables = {}) {
  if (s == 0) fail(ErrorCode::InvalidConfig, "sample size must be >= 1");
  SampleSet out;
  out.sample_size = s;
  out.seed = seed;
  for (const auto& t : store.tables()) {
    if (!tables.empty() && std::find(tables.begin(), tables.end(), t.name()) == tables.end()) continue;
    Rng rng(derive_seed(seed, "sample:" + t.name()));
    out.indices[t.name()] = sample_rows(t.row_count, s, rng);
  }
  return out;
}

/// Bitmap over `rows` (the i-th entry is a row index of `table`) marking rows
/// that satisfy every predicate. NULL never satisfies.
inline Bitmap conjunctive_bitmap(const Table& table, std::span<const std::uint32_t> rows, std::size_t s,
                                 std::span<const Predicate> predicates) {
  Bitmap b = Bitmap::all_valid(s, std::min(rows.size(), s));
  for (const auto& p : predicates) {
    const auto& col = table.column(p.column);
    for (std::size_t i = 0; i < b.valid; ++i) {
      if (!b.test(i)) continue;
      const auto r = rows[i];
      if (col.is_null(r) || !compare(col.values[r], p.op, p.value)) b.words[i / 64] &= ~(std::uint64_t{1} << (i % 64));
    }
  }
  return b;
}

inline Bitmap predicate_bitmap(const TableStore& store, const SampleSet& samples, const std::string& table,
                               std::span<const Predicate> predicates) {
  const auto& t = store.table(table);
  for (const auto& p : predicates)
    if (p.table != table) fail(ErrorCode::UnknownColumn, p.table + "." + p.column + " is not a column of " + table);
  return conjunctive_bitmap(t, samples.of(table), samples.sample_size, predicates);
}

inline Bitmap predicate_bitmap(const TableStore& store, const SampleSet& samples, const std::string& table,
                               const Predicate& predicate) {
  return predicate_bitmap(store, samples, table, std::span<const Predicate>(&predicate, 1));
}

}  // namespace deepsketch
