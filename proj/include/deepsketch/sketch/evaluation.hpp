#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepsketch/datastore/executor.hpp"
#include "deepsketch/mscn/qerror.hpp"
#include "deepsketch/queryir/sql.hpp"

namespace deepsketch {

struct NamedEstimator {
  std::string name;
  std::function<double(const Query&)> estimate;
};

struct QueryRecord {
  std::size_t index = 0;
  std::uint64_t truth = 0;
  std::vector<double> estimates;  // one per estimator
  std::vector<double> qerrors;
};

struct EvalReport {
  std::vector<std::string> estimators;
  std::vector<QErrorSummary> summaries;  // parallel to estimators
  std::vector<QueryRecord> queries;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["estimators"] = nlohmann::json::object();
    for (std::size_t i = 0; i < estimators.size(); ++i) j["estimators"][estimators[i]] = deepsketch::to_json(summaries[i]);
    j["num_queries"] = queries.size();
    return j;
  }

  /// Aligned text table: one row per estimator, one column per statistic.
  std::string to_table() const {
    std::size_t w = 9;
    for (const auto& n : estimators) w = std::max(w, n.size() + 2);
    std::ostringstream out;
    char buf[64];
    out << std::string(w, ' ');
    for (const char* c : QErrorSummary::kColumns) {
      std::snprintf(buf, sizeof buf, "%12s", c);
      out << buf;
    }
    out << "\n";
    for (std::size_t i = 0; i < estimators.size(); ++i) {
      out << estimators[i] << std::string(w - estimators[i].size(), ' ');
      for (double v : summaries[i].values()) {
        std::snprintf(buf, sizeof buf, "%12.2f", v);
        out << buf;
      }
      out << "\n";
    }
    return out.str();
  }
};

/// Runs every estimator over `queries` and scores it against `truths`.
inline EvalReport evaluate_workload(const std::vector<NamedEstimator>& estimators, const std::vector<Query>& queries,
                                    const std::vector<std::uint64_t>& truths, double floor = 1.0) {
  if (queries.size() != truths.size()) fail(ErrorCode::ShapeMismatch, "one truth per query required");
  EvalReport r;
  std::vector<std::vector<double>> per(estimators.size());
  for (const auto& e : estimators) r.estimators.push_back(e.name);
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    QueryRecord rec;
    rec.index = qi;
    rec.truth = truths[qi];
    for (std::size_t ei = 0; ei < estimators.size(); ++ei) {
      const double est = estimators[ei].estimate(queries[qi]);
      const double q = qerror(est, static_cast<double>(truths[qi]), floor);
      rec.estimates.push_back(est);
      rec.qerrors.push_back(q);
      per[ei].push_back(q);
    }
    r.queries.push_back(std::move(rec));
  }
  for (auto& v : per) r.summaries.push_back(summarize_qerrors(v));
  return r;
}

inline EvalReport evaluate_workload(const std::vector<NamedEstimator>& estimators, const std::vector<Query>& queries,
                                    const TableStore& store, double floor = 1.0) {
  std::vector<std::uint64_t> truths;
  truths.reserve(queries.size());
  for (const auto& q : queries) truths.push_back(true_cardinality(store, q));
  return evaluate_workload(estimators, queries, truths, floor);
}

/// One SQL statement per non-blank line; '#' starts a comment line. An
/// optional trailing "|<cardinality>" supplies the true cardinality.
struct WorkloadEntry {
  std::string sql;
  std::optional<std::uint64_t> truth;
  std::size_t line = 0;
};

inline std::vector<WorkloadEntry> parse_workload(std::string_view text) {
  std::vector<WorkloadEntry> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    WorkloadEntry e;
    e.line = line_no;
    const auto bar = line.rfind('|');
    if (bar != std::string::npos) {
      const auto num = line.substr(bar + 1);
      try {
        std::size_t used = 0;
        e.truth = std::stoull(num, &used);
        if (num.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(num);
      } catch (const std::exception&) {
        fail(ErrorCode::SyntaxError, "bad cardinality on workload line " + std::to_string(line_no));
      }
      line.resize(bar);
    }
    const auto last = line.find_last_not_of(" \t\r;");
    e.sql = line.substr(first, last - first + 1);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<WorkloadEntry> load_workload(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_workload(ss.str());
}

}  // namespace deepsketch
