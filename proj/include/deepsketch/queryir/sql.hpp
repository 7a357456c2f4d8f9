#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deepsketch/datastore/date.hpp"
#include "deepsketch/datastore/schema.hpp"
#include "deepsketch/error.hpp"
#include "deepsketch/queryir/query.hpp"

namespace deepsketch {

// Supported grammar (keywords case-insensitive):
//
//   statement  := SELECT COUNT '(' '*' ')' FROM table_ref { ',' table_ref }
//                 [ WHERE condition { AND condition } ] [ ';' ]
//   table_ref  := identifier [ [ AS ] alias ]
//   condition  := column_ref '=' column_ref          -- PK/FK join
//               | column_ref op ( literal | '?' )    -- selection
//   column_ref := alias '.' column | column
//   op         := '=' | '<' | '>'
//   literal    := [ '-' | '+' ] number | date_string | DATE date_string
//   date_string:= '\'' YYYY-MM-DD '\''
//
// At most one '?' may appear; it marks the placeholder of a query template.

/// Location of the '?' literal in a template statement.
struct PlaceholderRef {
  std::string table;
  std::string column;

  friend bool operator==(const PlaceholderRef&, const PlaceholderRef&) = default;
};

struct ParsedStatement {
  Query query;  // without the placeholder predicate
  std::optional<PlaceholderRef> placeholder;
};

namespace detail {

enum class TokKind { Ident, Number, String, Symbol, End };

struct Token {
  TokKind kind;
  std::string text;
  std::size_t pos;
};

inline std::vector<Token> tokenize(std::string_view sql) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < sql.size()) {
    const char c = sql[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (i < sql.size() && (std::isalnum(static_cast<unsigned char>(sql[i])) || sql[i] == '_')) ++i;
      out.push_back({TokKind::Ident, std::string(sql.substr(start, i - start)), start});
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               (c == '.' && i + 1 < sql.size() && std::isdigit(static_cast<unsigned char>(sql[i + 1])))) {
      while (i < sql.size() && (std::isdigit(static_cast<unsigned char>(sql[i])) || sql[i] == '.')) ++i;
      if (i < sql.size() && (sql[i] == 'e' || sql[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < sql.size() && (sql[j] == '+' || sql[j] == '-')) ++j;
        if (j < sql.size() && std::isdigit(static_cast<unsigned char>(sql[j]))) {
          i = j;
          while (i < sql.size() && std::isdigit(static_cast<unsigned char>(sql[i]))) ++i;
        }
      }
      out.push_back({TokKind::Number, std::string(sql.substr(start, i - start)), start});
    } else if (c == '\'') {
      ++i;
      std::string text;
      while (true) {
        if (i >= sql.size()) fail(ErrorCode::SyntaxError, "unterminated string literal", start);
        if (sql[i] == '\'') {
          if (i + 1 < sql.size() && sql[i + 1] == '\'') {
            text.push_back('\'');
            i += 2;
            continue;
          }
          ++i;
          break;
        }
        text.push_back(sql[i++]);
      }
      out.push_back({TokKind::String, std::move(text), start});
    } else {
      // two-character operators are recognized only to reject them precisely
      static constexpr std::string_view kTwo[] = {"<=", ">=", "<>", "!="};
      bool matched = false;
      for (auto two : kTwo)
        if (sql.substr(i, 2) == two) {
          out.push_back({TokKind::Symbol, std::string(two), start});
          i += 2;
          matched = true;
          break;
        }
      if (matched) continue;
      static constexpr std::string_view kSymbols = "(),.*=<>;?-+";
      if (kSymbols.find(c) == std::string_view::npos)
        fail(ErrorCode::SyntaxError, std::string("unexpected character '") + c + "'", start);
      out.push_back({TokKind::Symbol, std::string(1, c), start});
      ++i;
    }
  }
  out.push_back({TokKind::End, "", sql.size()});
  return out;
}

inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i]))) return false;
  return true;
}

class Parser {
 public:
  Parser(std::string_view sql, const SchemaCatalog& schema) : tokens_(tokenize(sql)), schema_(schema) {}

  ParsedStatement parse() {
    expect_keyword("SELECT");
    expect_keyword("COUNT");
    expect_symbol("(");
    expect_symbol("*");
    expect_symbol(")");
    expect_keyword("FROM");
    parse_table_ref();
    while (accept_symbol(",")) parse_table_ref();
    if (accept_keyword("WHERE")) {
      parse_condition();
      while (accept_keyword("AND")) parse_condition();
    }
    accept_symbol(";");
    if (peek().kind != TokKind::End) fail(ErrorCode::SyntaxError, "unexpected '" + peek().text + "'", peek().pos);

    std::vector<std::string> tables;
    for (const auto& [alias, table] : aliases_) tables.push_back(table);
    ParsedStatement out{Query(std::move(tables), std::move(joins_), std::move(predicates_)), placeholder_};
    try {
      validate_query(out.query, schema_);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidQuery) fail(ErrorCode::InvalidQuery, e.detail(), 0);
      throw;
    }
    if (placeholder_) {
      for (const auto& p : out.query.predicates())
        if (p.table == placeholder_->table && p.column == placeholder_->column && p.op == CmpOp::Eq)
          fail(ErrorCode::InvalidTemplate, "placeholder column already has an equality predicate", placeholder_pos_);
    }
    return out;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& next() { return tokens_[pos_ < tokens_.size() - 1 ? pos_++ : pos_]; }

  bool accept_keyword(std::string_view kw) {
    if (peek().kind == TokKind::Ident && iequals(peek().text, kw)) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect_keyword(std::string_view kw) {
    if (!accept_keyword(kw))
      fail(ErrorCode::SyntaxError, "expected " + std::string(kw) + " but found '" + peek().text + "'", peek().pos);
  }
  bool accept_symbol(std::string_view s) {
    if (peek().kind == TokKind::Symbol && peek().text == s) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect_symbol(std::string_view s) {
    if (!accept_symbol(s))
      fail(ErrorCode::SyntaxError, "expected '" + std::string(s) + "' but found '" + peek().text + "'", peek().pos);
  }
  const Token& expect_ident(std::string_view what) {
    if (peek().kind != TokKind::Ident || is_reserved(peek().text))
      fail(ErrorCode::SyntaxError, "expected " + std::string(what) + " but found '" + peek().text + "'", peek().pos);
    return next();
  }
  static bool is_reserved(std::string_view s) {
    for (auto kw : {"SELECT", "FROM", "WHERE", "AND", "AS", "COUNT", "DATE", "OR", "NOT"})
      if (iequals(s, kw)) return true;
    return false;
  }

  void parse_table_ref() {
    const auto& name = expect_ident("table name");
    if (!schema_.find_table(name.text)) fail(ErrorCode::UnknownTable, name.text, name.pos);
    std::string alias = name.text;
    if (accept_keyword("AS")) {
      alias = expect_ident("alias").text;
    } else if (peek().kind == TokKind::Ident && !is_reserved(peek().text)) {
      alias = next().text;
    }
    for (const auto& [a, t] : aliases_) {
      if (a == alias) fail(ErrorCode::SyntaxError, "duplicate alias '" + alias + "'", name.pos);
      if (t == name.text) fail(ErrorCode::SyntaxError, "table '" + name.text + "' appears twice", name.pos);
    }
    aliases_.emplace_back(alias, name.text);
  }

  struct ColumnRef {
    std::string table;
    std::string column;
    std::size_t pos;
  };

  ColumnRef parse_column_ref() {
    const auto& first = expect_ident("column reference");
    if (accept_symbol(".")) {
      const auto& col = expect_ident("column name");
      for (const auto& [a, t] : aliases_)
        if (a == first.text) {
          if (!schema_.table(t).find_column(col.text)) fail(ErrorCode::UnknownColumn, t + "." + col.text, col.pos);
          return {t, col.text, first.pos};
        }
      fail(ErrorCode::UnknownTable, "unknown alias '" + first.text + "'", first.pos);
    }
    std::optional<ColumnRef> found;
    for (const auto& [a, t] : aliases_)
      if (schema_.table(t).find_column(first.text)) {
        if (found) fail(ErrorCode::SyntaxError, "ambiguous column '" + first.text + "'", first.pos);
        found = ColumnRef{t, first.text, first.pos};
      }
    if (!found) fail(ErrorCode::UnknownColumn, first.text, first.pos);
    return *found;
  }

  CmpOp parse_op() {
    const auto& t = peek();
    if (t.kind == TokKind::Symbol) {
      if (auto op = parse_cmp_op(t.text)) {
        ++pos_;
        return *op;
      }
      if (t.text == "<=" || t.text == ">=" || t.text == "<>" || t.text == "!=")
        fail(ErrorCode::UnsupportedOperator, t.text, t.pos);
    }
    if (t.kind == TokKind::Ident && (iequals(t.text, "LIKE") || iequals(t.text, "IN") || iequals(t.text, "BETWEEN") ||
                                     iequals(t.text, "IS") || iequals(t.text, "OR") || iequals(t.text, "NOT")))
      fail(ErrorCode::UnsupportedOperator, t.text, t.pos);
    fail(ErrorCode::SyntaxError, "expected comparison operator but found '" + t.text + "'", t.pos);
  }

  void parse_condition() {
    const auto lhs = parse_column_ref();
    const std::size_t op_pos = peek().pos;
    const CmpOp op = parse_op();
    const auto& t = peek();
    if (t.kind == TokKind::Ident && !iequals(t.text, "DATE")) {
      const auto rhs = parse_column_ref();
      if (op != CmpOp::Eq) fail(ErrorCode::UnsupportedOperator, "only equi-joins are supported", op_pos);
      add_join(lhs, rhs);
      return;
    }
    if (accept_symbol("?")) {
      if (placeholder_) fail(ErrorCode::InvalidTemplate, "more than one placeholder", t.pos);
      if (op != CmpOp::Eq) fail(ErrorCode::InvalidTemplate, "placeholder must use '='", op_pos);
      placeholder_ = PlaceholderRef{lhs.table, lhs.column};
      placeholder_pos_ = t.pos;
      return;
    }
    const auto& col = schema_.column(lhs.table, lhs.column);
    predicates_.push_back({lhs.table, lhs.column, op, parse_literal(col.kind)});
  }

  double parse_literal(ColumnKind kind) {
    const std::size_t start = peek().pos;
    if (kind == ColumnKind::Date) {
      accept_keyword("DATE");
      const auto& t = peek();
      if (t.kind != TokKind::String) fail(ErrorCode::SyntaxError, "expected date literal 'YYYY-MM-DD'", t.pos);
      ++pos_;
      auto d = parse_iso_date(t.text);
      if (!d) fail(ErrorCode::SyntaxError, "invalid date '" + t.text + "'", t.pos);
      return static_cast<double>(*d);
    }
    double sign = 1.0;
    if (accept_symbol("-"))
      sign = -1.0;
    else
      accept_symbol("+");
    const auto& t = peek();
    if (t.kind != TokKind::Number) {
      if (t.kind == TokKind::String) fail(ErrorCode::UnsupportedOperator, "string predicates are not supported", t.pos);
      fail(ErrorCode::SyntaxError, "expected numeric literal but found '" + t.text + "'", t.pos);
    }
    ++pos_;
    double v = 0;
    auto r = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (r.ec != std::errc{} || r.ptr != t.text.data() + t.text.size() || !std::isfinite(v))
      fail(ErrorCode::SyntaxError, "invalid number '" + t.text + "'", t.pos);
    v *= sign;
    if (kind == ColumnKind::Integer && v != std::floor(v))
      fail(ErrorCode::SyntaxError, "integer column compared with non-integral literal", start);
    return v;
  }

  void add_join(const ColumnRef& a, const ColumnRef& b) {
    auto match = [&](const ColumnRef& child, const ColumnRef& parent) -> std::optional<FkEdge> {
      auto e = schema_.edge_between(child.table, parent.table);
      if (e && e->child_table == child.table && e->child_column == child.column &&
          schema_.table(parent.table).primary_key == parent.column)
        return e;
      return std::nullopt;
    };
    auto e = match(a, b);
    if (!e) e = match(b, a);
    if (!e)
      fail(ErrorCode::NonFkJoin, a.table + "." + a.column + " = " + b.table + "." + b.column + " is not a PK/FK join",
           a.pos);
    joins_.push_back(*e);
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  const SchemaCatalog& schema_;
  std::vector<std::pair<std::string, std::string>> aliases_;  // alias -> table, in FROM order
  std::vector<FkEdge> joins_;
  std::vector<Predicate> predicates_;
  std::optional<PlaceholderRef> placeholder_;
  std::size_t placeholder_pos_ = 0;
};

}  // namespace detail

/// Parses a statement that may contain one placeholder.
inline ParsedStatement parse_statement(std::string_view sql, const SchemaCatalog& schema) {
  return detail::Parser(sql, schema).parse();
}

/// Parses a concrete query; a placeholder is a syntax error here.
inline Query parse_query(std::string_view sql, const SchemaCatalog& schema) {
  auto parsed = parse_statement(sql, schema);
  if (parsed.placeholder) {
    const auto at = sql.find('?');
    fail(ErrorCode::SyntaxError, "placeholder '?' is only allowed in query templates",
         at == std::string_view::npos ? 0 : at);
  }
  return std::move(parsed.query);
}

inline std::string format_literal(double v, ColumnKind kind) {
  switch (kind) {
    case ColumnKind::Date: return "'" + format_iso_date(static_cast<std::int64_t>(v)) + "'";
    case ColumnKind::Integer: return std::to_string(static_cast<long long>(v));
    case ColumnKind::Float: {
      char buf[64];
      auto r = std::to_chars(buf, buf + sizeof buf, v);
      return std::string(buf, r.ptr);
    }
  }
  return {};
}

/// Canonical SQL: tables sorted and aliased by their own name, joins then
/// predicates in sorted order. `parse_query(render_sql(q)) == q`.
inline std::string render_sql(const Query& q, const SchemaCatalog& schema) {
  std::string out = "SELECT COUNT(*) FROM ";
  for (std::size_t i = 0; i < q.tables().size(); ++i) {
    if (i) out += ", ";
    out += q.tables()[i] + " " + q.tables()[i];
  }
  bool first = true;
  auto conj = [&] {
    out += first ? " WHERE " : " AND ";
    first = false;
  };
  for (const auto& j : q.joins()) {
    conj();
    out += j.child_table + "." + j.child_column + " = " + j.parent_table + "." +
           schema.table(j.parent_table).primary_key;
  }
  for (const auto& p : q.predicates()) {
    conj();
    out += p.table + "." + p.column + " " + std::string(to_string(p.op)) + " " +
           format_literal(p.value, schema.column(p.table, p.column).kind);
  }
  return out;
}

}  // namespace deepsketch
