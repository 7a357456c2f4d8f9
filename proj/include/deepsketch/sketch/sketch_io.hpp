#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepsketch/sketch/binary_io.hpp"
#include "deepsketch/sketch/sketch.hpp"

namespace deepsketch {

// File layout (little-endian):
//
//   "DSK1"                      magic
//   u32 version
//   u32 section count
//   { u32 id, u64 offset, u64 length } x count    offsets from file start
//   section payloads
//   u64 FNV-1a checksum of every preceding byte

inline constexpr char kSketchMagic[4] = {'D', 'S', 'K', '1'};

enum class SketchSection : std::uint32_t { Schema = 1, Vocabulary = 2, Params = 3, Samples = 4, Stats = 5, Metadata = 6 };

namespace detail {

inline void write_table_rows(ByteWriter& w, const Table& t) {
  w.put<std::uint64_t>(t.row_count);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.columns.size()));
  for (const auto& c : t.columns) {
    w.put_string(c.def.name);
    w.put_vector(c.values);
    w.put_vector(c.nulls);
  }
}

inline Table read_table_rows(ByteReader& r, const TableDef& def) {
  Table t;
  t.def = def;
  t.row_count = r.get<std::uint64_t>();
  const auto ncols = r.get<std::uint32_t>();
  if (ncols != def.columns.size()) fail(ErrorCode::ShapeMismatch, "sample rows for " + def.name + " have wrong width");
  for (std::uint32_t i = 0; i < ncols; ++i) {
    Column c;
    const auto name = r.get_string();
    const auto* cd = def.find_column(name);
    if (!cd) fail(ErrorCode::UnknownColumn, def.name + "." + name);
    c.def = *cd;
    c.values = r.get_vector<double>();
    c.nulls = r.get_vector<std::uint8_t>();
    t.columns.push_back(std::move(c));
  }
  t.finalize(0);
  return t;
}

inline void write_histogram(ByteWriter& w, const EquiDepthHistogram& h) {
  w.put<std::uint64_t>(h.total_rows);
  w.put<std::uint64_t>(h.buckets.size());
  for (const auto& b : h.buckets) {
    w.put(b.lo);
    w.put(b.hi);
    w.put(b.count);
    w.put(b.distinct);
  }
}

inline EquiDepthHistogram read_histogram(ByteReader& r) {
  EquiDepthHistogram h;
  h.total_rows = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    EquiDepthHistogram::Bucket b;
    b.lo = r.get<double>();
    b.hi = r.get<double>();
    b.count = r.get<std::uint64_t>();
    b.distinct = r.get<std::uint64_t>();
    h.buckets.push_back(b);
  }
  return h;
}

inline void write_dense(ByteWriter& w, const mscn::Dense<float>& d) {
  w.put<std::uint64_t>(static_cast<std::uint64_t>(d.weight.rows()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(d.weight.cols()));
  w.put_array(d.weight.data(), static_cast<std::size_t>(d.weight.size()));
  w.put_array(d.bias.data(), static_cast<std::size_t>(d.bias.size()));
}

inline void read_dense(ByteReader& r, mscn::Dense<float>& d) {
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  if (rows > (1ULL << 32) || cols > (1ULL << 32)) fail(ErrorCode::ShapeMismatch, "implausible layer shape");
  d.resize(rows, cols);
  r.get_into(d.weight.data(), static_cast<std::size_t>(d.weight.size()));
  r.get_into(d.bias.data(), static_cast<std::size_t>(d.bias.size()));
}

inline std::string encode_section(const DeepSketch& s, SketchSection id) {
  ByteWriter w;
  switch (id) {
    case SketchSection::Schema:
      w.put_string(schema_to_json(s.schema).dump());
      break;
    case SketchSection::Vocabulary: {
      const auto& v = s.vocab;
      w.put<std::uint32_t>(static_cast<std::uint32_t>(v.tables.size()));
      for (const auto& [name, i] : v.tables) {
        w.put_string(name);
        w.put(i);
      }
      w.put<std::uint32_t>(static_cast<std::uint32_t>(v.joins.size()));
      for (const auto& [e, i] : v.joins) {
        w.put_string(e.child_table);
        w.put_string(e.child_column);
        w.put_string(e.parent_table);
        w.put(i);
      }
      w.put<std::uint32_t>(static_cast<std::uint32_t>(v.columns.size()));
      for (const auto& [name, i] : v.columns) {
        w.put_string(name);
        w.put(i);
        w.put(v.column_ranges[i].min);
        w.put(v.column_ranges[i].max);
      }
      w.put(v.label_log_max);
      w.put(v.sample_size);
      break;
    }
    case SketchSection::Params:
      w.put<std::uint64_t>(s.params.hidden);
      s.params.for_each_layer([&](const mscn::Dense<float>& d) { write_dense(w, d); });
      break;
    case SketchSection::Samples:
      w.put<std::uint64_t>(s.samples.sample_size);
      w.put<std::uint64_t>(s.samples.seed);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(s.samples.indices.size()));
      for (const auto& [t, idx] : s.samples.indices) {
        w.put_string(t);
        w.put_vector(idx);
        write_table_rows(w, s.sample_table(t));
      }
      break;
    case SketchSection::Stats:
      w.put<std::uint32_t>(static_cast<std::uint32_t>(s.row_counts.size()));
      for (const auto& [t, n] : s.row_counts) {
        w.put_string(t);
        w.put(n);
      }
      w.put<std::uint32_t>(static_cast<std::uint32_t>(s.histograms.size()));
      for (const auto& [c, h] : s.histograms) {
        w.put_string(c);
        write_histogram(w, h);
      }
      w.put<std::uint32_t>(static_cast<std::uint32_t>(s.join_cardinalities.size()));
      for (const auto& [tables, n] : s.join_cardinalities) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(tables.size()));
        for (const auto& t : tables) w.put_string(t);
        w.put(n);
      }
      break;
    case SketchSection::Metadata: {
      const auto& m = s.meta;
      w.put(m.seed);
      w.put(m.train_config_hash);
      w.put(m.created_at);
      w.put(m.num_training_queries);
      w.put<std::int32_t>(m.epochs);
      for (double v : m.validation.values()) w.put(v);
      w.put<std::uint64_t>(m.validation.count);
      break;
    }
  }
  return w.take();
}

inline void decode_section(DeepSketch& s, SketchSection id, std::string_view bytes) {
  ByteReader r(bytes);
  switch (id) {
    case SketchSection::Schema: {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(r.get_string());
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidSchema, e.what());
      }
      s.schema = schema_config_from_json(j).schema;
      break;
    }
    case SketchSection::Vocabulary: {
      auto& v = s.vocab;
      for (auto n = r.get<std::uint32_t>(); n > 0; --n) {
        auto name = r.get_string();
        v.tables[name] = r.get<std::uint32_t>();
      }
      for (auto n = r.get<std::uint32_t>(); n > 0; --n) {
        FkEdge e;
        e.child_table = r.get_string();
        e.child_column = r.get_string();
        e.parent_table = r.get_string();
        v.joins[e] = r.get<std::uint32_t>();
      }
      const auto ncols = r.get<std::uint32_t>();
      v.column_ranges.assign(ncols, {});
      for (std::uint32_t k = 0; k < ncols; ++k) {
        auto name = r.get_string();
        const auto i = r.get<std::uint32_t>();
        if (i >= ncols) fail(ErrorCode::ShapeMismatch, "column index out of range");
        v.columns[name] = i;
        v.column_ranges[i].min = r.get<double>();
        v.column_ranges[i].max = r.get<double>();
      }
      v.label_log_max = r.get<double>();
      v.sample_size = r.get<std::uint32_t>();
      break;
    }
    case SketchSection::Params:
      s.params.hidden = r.get<std::uint64_t>();
      s.params.for_each_layer([&](mscn::Dense<float>& d) { read_dense(r, d); });
      break;
    case SketchSection::Samples: {
      s.samples.sample_size = r.get<std::uint64_t>();
      s.samples.seed = r.get<std::uint64_t>();
      for (auto n = r.get<std::uint32_t>(); n > 0; --n) {
        auto t = r.get_string();
        s.samples.indices[t] = r.get_vector<std::uint32_t>();
        s.sample_rows[t] = read_table_rows(r, s.schema.table(t));
      }
      break;
    }
    case SketchSection::Stats:
      for (auto n = r.get<std::uint32_t>(); n > 0; --n) {
        auto t = r.get_string();
        s.row_counts[t] = r.get<std::uint64_t>();
      }
      for (auto n = r.get<std::uint32_t>(); n > 0; --n) {
        auto c = r.get_string();
        s.histograms[c] = read_histogram(r);
      }
      for (auto n = r.get<std::uint32_t>(); n > 0; --n) {
        std::vector<std::string> tables(r.get<std::uint32_t>());
        for (auto& t : tables) t = r.get_string();
        s.join_cardinalities[tables] = r.get<std::uint64_t>();
      }
      break;
    case SketchSection::Metadata: {
      auto& m = s.meta;
      m.seed = r.get<std::uint64_t>();
      m.train_config_hash = r.get<std::uint64_t>();
      m.created_at = r.get<std::int64_t>();
      m.num_training_queries = r.get<std::uint64_t>();
      m.epochs = r.get<std::int32_t>();
      m.validation.median = r.get<double>();
      m.validation.p90 = r.get<double>();
      m.validation.p95 = r.get<double>();
      m.validation.p99 = r.get<double>();
      m.validation.max = r.get<double>();
      m.validation.mean = r.get<double>();
      m.validation.count = r.get<std::uint64_t>();
      break;
    }
  }
  if (!r.at_end()) fail(ErrorCode::ShapeMismatch, "trailing bytes in sketch section");
}

}  // namespace detail

inline std::string serialize_sketch(const DeepSketch& sketch) {
  // Schema must precede Samples: sample rows are decoded against it.
  const SketchSection order[] = {SketchSection::Schema,  SketchSection::Vocabulary, SketchSection::Params,
                                 SketchSection::Samples, SketchSection::Stats,      SketchSection::Metadata};
  std::vector<std::string> payloads;
  for (auto id : order) payloads.push_back(detail::encode_section(sketch, id));
  ByteWriter w;
  w.put_raw(std::string_view(kSketchMagic, 4));
  w.put<std::uint32_t>(kSketchFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(payloads.size()));
  std::uint64_t offset = 4 + 4 + 4 + payloads.size() * (4 + 8 + 8);
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    w.put(static_cast<std::uint32_t>(order[i]));
    w.put<std::uint64_t>(offset);
    w.put<std::uint64_t>(payloads[i].size());
    offset += payloads[i].size();
  }
  for (const auto& p : payloads) w.put_raw(p);
  w.put<std::uint64_t>(checksum64(w.bytes()));
  return w.take();
}

inline DeepSketch deserialize_sketch(std::string_view bytes) {
  if (bytes.size() < 4) fail(ErrorCode::TruncatedFile, "file too short");
  if (bytes.substr(0, 4) != std::string_view(kSketchMagic, 4)) fail(ErrorCode::BadMagic, "not a sketch file");
  ByteReader header(bytes.substr(4));
  const auto version = header.get<std::uint32_t>();
  if (version != kSketchFormatVersion)
    fail(ErrorCode::VersionMismatch, "file version " + std::to_string(version) + ", supported " +
                                         std::to_string(kSketchFormatVersion));
  const auto count = header.get<std::uint32_t>();
  if (count > 64) fail(ErrorCode::TruncatedFile, "implausible section count");
  struct Entry {
    std::uint32_t id;
    std::uint64_t offset, length;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e{header.get<std::uint32_t>(), header.get<std::uint64_t>(), header.get<std::uint64_t>()};
    entries.push_back(e);
  }
  if (bytes.size() < 8) fail(ErrorCode::TruncatedFile, "missing checksum");
  const auto body_end = bytes.size() - 8;
  for (const auto& e : entries)
    if (e.offset > body_end || e.length > body_end - e.offset) fail(ErrorCode::TruncatedFile, "section past end of file");
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body_end, 8);
  if (stored != checksum64(bytes.substr(0, body_end))) fail(ErrorCode::ChecksumMismatch, "sketch file is corrupted");

  DeepSketch s;
  for (const auto& e : entries) {
    if (e.id < 1 || e.id > 6) fail(ErrorCode::VersionMismatch, "unknown section " + std::to_string(e.id));
    detail::decode_section(s, static_cast<SketchSection>(e.id), bytes.substr(e.offset, e.length));
  }
  if (s.params.table_dim() != s.vocab.table_feature_dim() || s.params.join_dim() != s.vocab.join_feature_dim() ||
      s.params.predicate_dim() != s.vocab.predicate_feature_dim())
    fail(ErrorCode::ShapeMismatch, "model dimensions do not match the stored vocabulary");
  s.meta.format_version = version;
  return s;
}

/// Writes atomically: the file appears only once fully written.
inline void save_sketch(const DeepSketch& sketch, const std::string& path) {
  const auto bytes = serialize_sketch(sketch);
  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline DeepSketch load_sketch(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_sketch(ss.str());
}

}  // namespace deepsketch
