#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "deepsketch/error.hpp"

namespace deepsketch {

enum class ColumnKind : std::uint8_t { Integer = 0, Float = 1, Date = 2 };

inline std::string_view to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::Integer: return "integer";
    case ColumnKind::Float: return "float";
    case ColumnKind::Date: return "date";
  }
  return "integer";
}

inline ColumnKind parse_column_kind(std::string_view text) {
  if (text == "integer" || text == "int") return ColumnKind::Integer;
  if (text == "float" || text == "real" || text == "double") return ColumnKind::Float;
  if (text == "date") return ColumnKind::Date;
  fail(ErrorCode::InvalidSchema, "unknown column kind '" + std::string(text) + "'");
}

struct ColumnDef {
  std::string name;
  ColumnKind kind = ColumnKind::Integer;
  bool nullable = false;

  friend bool operator==(const ColumnDef&, const ColumnDef&) = default;
};

struct TableDef {
  std::string name;
  std::vector<ColumnDef> columns;
  std::string primary_key;

  std::optional<std::size_t> column_index(std::string_view column) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].name == column) return i;
    return std::nullopt;
  }
  const ColumnDef* find_column(std::string_view column) const {
    auto i = column_index(column);
    return i ? &columns[*i] : nullptr;
  }

  friend bool operator==(const TableDef&, const TableDef&) = default;
};

/// `child_table.child_column` references the primary key of `parent_table`.
struct FkEdge {
  std::string child_table;
  std::string child_column;
  std::string parent_table;

  bool touches(std::string_view table) const { return child_table == table || parent_table == table; }
  const std::string& other(std::string_view table) const {
    return child_table == table ? parent_table : child_table;
  }

  friend auto operator<=>(const FkEdge&, const FkEdge&) = default;
  friend bool operator==(const FkEdge&, const FkEdge&) = default;
};

inline std::string to_string(const FkEdge& e) {
  return e.child_table + "." + e.child_column + "->" + e.parent_table;
}

/// Tables plus PK/FK edges. Validated on construction: names unique, FK
/// endpoints exist, and the undirected FK graph is a forest.
class SchemaCatalog {
 public:
  SchemaCatalog() = default;
  SchemaCatalog(std::vector<TableDef> tables, std::vector<FkEdge> fk_edges)
      : tables_(std::move(tables)), fk_edges_(std::move(fk_edges)) {
    validate();
  }

  const std::vector<TableDef>& tables() const { return tables_; }
  const std::vector<FkEdge>& fk_edges() const { return fk_edges_; }

  const TableDef* find_table(std::string_view name) const {
    for (const auto& t : tables_)
      if (t.name == name) return &t;
    return nullptr;
  }
  const TableDef& table(std::string_view name) const {
    if (const auto* t = find_table(name)) return *t;
    fail(ErrorCode::UnknownTable, std::string(name));
  }
  const ColumnDef& column(std::string_view table_name, std::string_view column_name) const {
    const auto& t = table(table_name);
    if (const auto* c = t.find_column(column_name)) return *c;
    fail(ErrorCode::UnknownColumn, std::string(table_name) + "." + std::string(column_name));
  }

  /// The FK edge between two tables in either direction.
  std::optional<FkEdge> edge_between(std::string_view a, std::string_view b) const {
    for (const auto& e : fk_edges_)
      if ((e.child_table == a && e.parent_table == b) || (e.child_table == b && e.parent_table == a)) return e;
    return std::nullopt;
  }

  bool is_key_column(std::string_view table_name, std::string_view column_name) const {
    const auto& t = table(table_name);
    if (t.primary_key == column_name) return true;
    for (const auto& e : fk_edges_)
      if (e.child_table == table_name && e.child_column == column_name) return true;
    return false;
  }

  /// True iff `names` is non-empty and induces a connected FK subgraph.
  bool is_connected(const std::vector<std::string>& names) const {
    if (names.empty()) return false;
    std::set<std::string> wanted(names.begin(), names.end());
    for (const auto& n : wanted)
      if (!find_table(n)) return false;
    std::set<std::string> seen{*wanted.begin()};
    std::vector<std::string> stack{*wanted.begin()};
    while (!stack.empty()) {
      auto cur = stack.back();
      stack.pop_back();
      for (const auto& e : fk_edges_) {
        if (!e.touches(cur)) continue;
        const auto& nb = e.other(cur);
        if (wanted.count(nb) && seen.insert(nb).second) stack.push_back(nb);
      }
    }
    return seen.size() == wanted.size();
  }

  /// Catalog restricted to `names` and the FK edges among them.
  SchemaCatalog subset(const std::vector<std::string>& names) const {
    std::set<std::string> wanted(names.begin(), names.end());
    std::vector<TableDef> tables;
    for (const auto& t : tables_)
      if (wanted.count(t.name)) tables.push_back(t);
    if (tables.size() != wanted.size()) {
      for (const auto& n : wanted)
        if (!find_table(n)) fail(ErrorCode::UnknownTable, n);
    }
    std::vector<FkEdge> edges;
    for (const auto& e : fk_edges_)
      if (wanted.count(e.child_table) && wanted.count(e.parent_table)) edges.push_back(e);
    return SchemaCatalog(std::move(tables), std::move(edges));
  }

  friend bool operator==(const SchemaCatalog&, const SchemaCatalog&) = default;

 private:
  void validate() const {
    std::set<std::string> names;
    for (const auto& t : tables_) {
      if (t.name.empty()) fail(ErrorCode::InvalidSchema, "empty table name");
      if (!names.insert(t.name).second) fail(ErrorCode::DuplicateTable, t.name);
      std::set<std::string> cols;
      for (const auto& c : t.columns)
        if (!cols.insert(c.name).second) fail(ErrorCode::InvalidSchema, "duplicate column " + t.name + "." + c.name);
      if (!t.primary_key.empty() && !t.find_column(t.primary_key))
        fail(ErrorCode::InvalidSchema, "primary key " + t.name + "." + t.primary_key + " is not a column");
    }
    std::set<std::pair<std::string, std::string>> pairs;
    for (const auto& e : fk_edges_) {
      const auto* child = find_table(e.child_table);
      const auto* parent = find_table(e.parent_table);
      if (!child || !parent) fail(ErrorCode::InvalidSchema, "FK edge references unknown table: " + to_string(e));
      if (!child->find_column(e.child_column)) fail(ErrorCode::InvalidSchema, "FK column missing: " + to_string(e));
      if (parent->primary_key.empty()) fail(ErrorCode::InvalidSchema, "FK parent has no primary key: " + to_string(e));
      if (e.child_table == e.parent_table) fail(ErrorCode::InvalidSchema, "self-referencing FK: " + to_string(e));
      if (!pairs.insert({e.child_table, e.parent_table}).second)
        fail(ErrorCode::InvalidSchema, "more than one FK edge between " + e.child_table + " and " + e.parent_table);
    }
    // Forest check via union-find; a second edge between the same pair (in
    // either direction) also closes a cycle.
    std::map<std::string, std::string> parent_of;
    for (const auto& t : tables_) parent_of[t.name] = t.name;
    auto find = [&](std::string x) {
      while (parent_of[x] != x) x = parent_of[x] = parent_of[parent_of[x]];
      return x;
    };
    for (const auto& e : fk_edges_) {
      auto a = find(e.child_table), b = find(e.parent_table);
      if (a == b) fail(ErrorCode::InvalidSchema, "cyclic FK graph at edge " + to_string(e));
      parent_of[a] = b;
    }
  }

  std::vector<TableDef> tables_;
  std::vector<FkEdge> fk_edges_;
};

// ---------------------------------------------------------------------------
// Declarative schema config (JSON).
//
// {
//   "tables": [ { "name": "title", "file": "title.csv", "primary_key": "id",
//                 "columns": [ {"name": "id", "kind": "integer"}, ... ] } ],
//   "foreign_keys": [ {"child_table": "movie_keyword", "child_column": "movie_id",
//                      "parent_table": "title"} ],
//   "null_token": ""
// }

struct SchemaConfig {
  SchemaCatalog schema;
  std::map<std::string, std::string> files;  // table -> CSV path (relative to config dir)
  std::string null_token;
};

inline nlohmann::json schema_to_json(const SchemaCatalog& schema) {
  nlohmann::json j;
  j["tables"] = nlohmann::json::array();
  for (const auto& t : schema.tables()) {
    nlohmann::json jt;
    jt["name"] = t.name;
    jt["primary_key"] = t.primary_key;
    jt["columns"] = nlohmann::json::array();
    for (const auto& c : t.columns)
      jt["columns"].push_back({{"name", c.name}, {"kind", std::string(to_string(c.kind))}, {"nullable", c.nullable}});
    j["tables"].push_back(std::move(jt));
  }
  j["foreign_keys"] = nlohmann::json::array();
  for (const auto& e : schema.fk_edges())
    j["foreign_keys"].push_back(
        {{"child_table", e.child_table}, {"child_column", e.child_column}, {"parent_table", e.parent_table}});
  return j;
}

inline SchemaConfig schema_config_from_json(const nlohmann::json& j) {
  try {
    std::vector<TableDef> tables;
    std::map<std::string, std::string> files;
    for (const auto& jt : j.at("tables")) {
      TableDef t;
      t.name = jt.at("name").get<std::string>();
      t.primary_key = jt.value("primary_key", std::string{});
      for (const auto& jc : jt.at("columns")) {
        ColumnDef c;
        c.name = jc.at("name").get<std::string>();
        c.kind = parse_column_kind(jc.at("kind").get<std::string>());
        c.nullable = jc.value("nullable", false);
        t.columns.push_back(std::move(c));
      }
      files[t.name] = jt.value("file", t.name + ".csv");
      tables.push_back(std::move(t));
    }
    std::vector<FkEdge> edges;
    if (j.contains("foreign_keys"))
      for (const auto& je : j.at("foreign_keys"))
        edges.push_back({je.at("child_table").get<std::string>(), je.at("child_column").get<std::string>(),
                         je.at("parent_table").get<std::string>()});
    SchemaConfig cfg{SchemaCatalog(std::move(tables), std::move(edges)), std::move(files),
                     j.value("null_token", std::string{})};
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidSchema, e.what());
  }
}

inline SchemaConfig load_schema_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open schema config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidSchema, path + ": " + e.what());
  }
  return schema_config_from_json(j);
}

}  // namespace deepsketch
