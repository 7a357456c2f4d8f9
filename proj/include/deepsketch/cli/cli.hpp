#pragma once

#include <signal.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deepsketch/datastore/synthetic.hpp"
#include "deepsketch/sketch/evaluation.hpp"
#include "deepsketch/sketch/sketch.hpp"
#include "deepsketch/sketch/sketch_io.hpp"
#include "deepsketch/service/server.hpp"

namespace deepsketch::cli {

using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 2, kParse = 3, kScope = 4, kInternal = 5 };

/// Maps a library error class onto the CLI's exit-code taxonomy.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::SyntaxError:
    case ErrorCode::UnsupportedOperator:
    case ErrorCode::NonFkJoin:
    case ErrorCode::InvalidQuery:
    case ErrorCode::InvalidTemplate:
      return kParse;
    case ErrorCode::UnknownSymbol:
    case ErrorCode::UnknownTable:
    case ErrorCode::UnknownColumn:
    case ErrorCode::EmptySample:
    case ErrorCode::NonDateColumnForYear:
      return kScope;
    case ErrorCode::ShapeMismatch:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::Cancelled:
      return kInternal;
    default:
      // specs, configs, data files, sketch files
      return kUsage;
  }
}

namespace detail {

inline std::string num(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

/// `--data` may name a dataset directory or a DEEPSKETCH_DATA_DIR-style root.
inline std::string resolve_data_dir(const std::string& given) {
  namespace fs = std::filesystem;
  fs::path p = given.empty() ? service::DataDir::from_env().root : fs::path(given);
  if (!fs::exists(p / "schema.json") && fs::exists(p / "data" / "schema.json")) p /= "data";
  return p.string();
}

inline void print_error(std::ostream& err, const Error& e, std::string_view sql = {}) {
  err << "error: " << e.what() << "\n";
  if (e.position() && !sql.empty() && *e.position() <= sql.size()) {
    err << "  " << sql << "\n  " << std::string(*e.position(), ' ') << "^\n";
  }
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline std::atomic<bool>& interrupted() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline std::string table_row(const std::vector<std::string>& cells, const std::vector<std::size_t>& widths) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto pad = widths[i] > cells[i].size() ? widths[i] - cells[i].size() : 0;
    line += i == 0 ? cells[i] + std::string(pad, ' ') : std::string(pad + 2, ' ') + cells[i];
  }
  return line + "\n";
}

}  // namespace detail

struct GenDataArgs {
  std::string spec, out;
  std::uint64_t seed = 0;
};

inline int gen_data(const GenDataArgs& a, std::ostream& out) {
  std::ifstream in(a.spec);
  if (!in) fail(ErrorCode::InvalidSpec, "cannot open " + a.spec);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidSpec, e.what());
  }
  const auto spec = SyntheticSpec::from_json(j);
  const auto ds = generate_synthetic_dataset(spec, a.seed);
  if (spec.correlation == 1.0 && !check_full_correlation(spec, ds.store))
    fail(ErrorCode::NonFiniteValue, "generated data violates full correlation");
  write_dataset(a.out, ds.store);
  for (const auto& t : ds.store.tables()) out << t.name() << ": " << t.row_count << " rows\n";
  out << "wrote " << ds.store.tables().size() << " tables to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data, tables, out;
  std::size_t queries = 10000, samples = kDefaultSampleSize, hidden = mscn::kDefaultHidden, batch_size = 128;
  std::size_t threads = 1;
  int epochs = 25;
  std::uint64_t seed = 0;
};

inline int train(const TrainArgs& a, std::ostream& out) {
  SketchConfig c;
  c.tables = detail::split_csv(a.tables);
  c.num_queries = a.queries;
  c.sample_size = a.samples;
  c.seed = a.seed;
  c.threads = std::max<std::size_t>(1, a.threads);
  c.train.epochs = a.epochs;
  c.train.hidden = a.hidden;
  c.train.batch_size = a.batch_size;
  c.train.validate();
  if (c.num_queries == 0) fail(ErrorCode::EmptyCorpus, "--queries must be >= 1");
  if (c.sample_size == 0) fail(ErrorCode::InvalidConfig, "--samples must be >= 1");

  const auto store = load_dataset(detail::resolve_data_dir(a.data));
  SketchPhase last = SketchPhase::Queued;
  auto result = create_sketch(store, c, [&](const ProgressEvent& e) {
    if (e.phase != last && e.phase != SketchPhase::Done) out << "phase " << to_string(e.phase) << "\n";
    last = e.phase;
    if (e.epoch)
      out << "epoch " << e.epoch->epoch << "/" << c.train.epochs << "  train q-error "
          << detail::num(e.epoch->train_qerror) << "  validation q-error " << detail::num(e.epoch->validation_qerror)
          << "  " << detail::num(e.epoch->seconds, 1) << "s\n";
    out.flush();
    return !detail::interrupted().load();
  });
  save_sketch(result.sketch, a.out);
  out << "best epoch " << result.report.best_epoch << ", validation median q-error "
      << detail::num(result.report.validation.median) << "\n"
      << "wrote " << a.out << " (" << std::filesystem::file_size(a.out) << " bytes)\n";
  return kOk;
}

struct EstimateArgs {
  std::string sketch, sql, data;
  bool baselines = false, truth = false, as_json = false;
};

inline int estimate(const EstimateArgs& a, std::ostream& out, std::ostream& err) {
  const auto sk = load_sketch(a.sketch);
  const auto q = parse_for_sketch(sk, a.sql);
  const auto r = deepsketch::estimate(sk, q);

  std::vector<std::pair<std::string, double>> rows = {{"sketch", r.cardinality}};
  if (a.baselines) {
    rows.emplace_back("sampling", sampling_estimate(sk, q));
    rows.emplace_back("independence", independence_estimate(sk, q));
  }
  std::optional<std::uint64_t> truth;
  if (a.truth) truth = true_cardinality(load_dataset(detail::resolve_data_dir(a.data)), q);

  if (a.as_json) {
    json j = {{"sql", render_sql(q, sk.schema)},
              {"estimate", r.cardinality},
              {"zero_tuple_tables", r.zero_tuple_tables},
              {"clamped_literals", r.clamped_literals}};
    if (a.baselines) j["baselines"] = {{"sampling", rows[1].second}, {"independence", rows[2].second}};
    if (truth) {
      j["truth"] = *truth;
      for (const auto& [name, v] : rows) j["qerrors"][name] = qerror(v, static_cast<double>(*truth));
    }
    out << j.dump(2) << "\n";
  } else if (rows.size() == 1 && !truth) {
    out << detail::num(r.cardinality) << "\n";
  } else {
    std::vector<std::vector<std::string>> cells = {{"estimator", "estimate"}};
    if (truth) cells[0].push_back("q-error");
    for (const auto& [name, v] : rows) {
      cells.push_back({name, detail::num(v)});
      if (truth) cells.back().push_back(detail::num(qerror(v, static_cast<double>(*truth))));
    }
    if (truth) cells.push_back({"truth", std::to_string(*truth), ""});
    std::vector<std::size_t> w(cells[0].size(), 0);
    for (const auto& row : cells)
      for (std::size_t i = 0; i < row.size(); ++i) w[i] = std::max(w[i], row[i].size());
    for (const auto& row : cells) out << detail::table_row(row, w);
  }
  for (const auto& t : r.zero_tuple_tables) err << "note: no sampled row of " << t << " qualifies\n";
  for (const auto& c : r.clamped_literals) err << "note: literal on " << c << " lies outside the training range\n";
  return kOk;
}

struct EvalArgs {
  std::string sketch, workload, data;
  bool as_json = false, truth_estimator = false;
};

inline int eval(const EvalArgs& a, std::ostream& out) {
  const auto sk = load_sketch(a.sketch);
  const auto entries = load_workload(a.workload);
  if (entries.empty()) fail(ErrorCode::InvalidConfig, "workload " + a.workload + " has no queries");

  std::vector<Query> queries;
  for (const auto& e : entries) {
    try {
      queries.push_back(parse_for_sketch(sk, e.sql));
    } catch (const Error& ex) {
      throw Error(ex.code(), "line " + std::to_string(e.line) + ": " + ex.detail());
    }
  }
  std::vector<std::uint64_t> truths(entries.size());
  std::optional<TableStore> store;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].truth) {
      truths[i] = *entries[i].truth;
      continue;
    }
    if (!store) store = load_dataset(detail::resolve_data_dir(a.data));
    truths[i] = true_cardinality(*store, queries[i]);
  }

  std::vector<NamedEstimator> est = {
      {"sketch", [&](const Query& q) { return deepsketch::estimate(sk, q).cardinality; }},
      {"sampling", [&](const Query& q) { return sampling_estimate(sk, q); }},
      {"independence", [&](const Query& q) { return independence_estimate(sk, q); }}};
  if (a.truth_estimator)
    est.push_back({"truth", [&](const Query& q) { return static_cast<double>(truths[&q - queries.data()]); }});
  const auto report = evaluate_workload(est, queries, truths);
  if (a.as_json)
    out << report.to_json().dump(2) << "\n";
  else
    out << report.queries.size() << " queries\n" << report.to_table();
  return kOk;
}

struct ServeArgs {
  std::string listen = "127.0.0.1:8080", root;
  std::size_t workers = 1;
};

inline std::pair<std::string, int> parse_listen(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0) fail(ErrorCode::InvalidConfig, "--listen expects addr:port");
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) port = -1;
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) fail(ErrorCode::InvalidConfig, "bad port in --listen " + s);
  return {s.substr(0, colon), port};
}

inline int serve(const ServeArgs& a, std::ostream& out) {
  const auto [host, port] = parse_listen(a.listen);
  const auto dir = a.root.empty() ? service::DataDir::from_env() : service::DataDir{a.root};
  service::ServiceOptions opt;
  opt.registry.sketch_dir = dir.sketches().string();
  opt.registry.worker_slots = std::max<std::size_t>(1, a.workers);

  // SIGINT/SIGTERM are handled by a dedicated thread that stops the server
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  service::Service svc(dir.load_store(), opt);
  if (!svc.bind(host, port)) fail(ErrorCode::Io, "cannot listen on " + a.listen);
  out << "serving " << (svc.registry().store() ? "dataset " + dir.data().string() : std::string("no dataset"))
      << " with " << svc.registry().sketches().size() << " sketches on http://" << host << ":" << port << "\n";
  out.flush();
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    svc.stop();
  });
  svc.listen_after_bind();
  pthread_kill(waiter.native_handle(), SIGTERM);  // no-op when the waiter already returned
  waiter.join();
  return kOk;
}

/// Entry point shared by the binary and the tests.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"deepsketch: learned cardinality sketches"};
  app.require_subcommand(1);

  GenDataArgs g;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--spec", g.spec, "dataset spec (JSON)")->required();
  gen->add_option("--seed", g.seed, "random seed");
  gen->add_option("--out", g.out, "output directory")->required();

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "train a sketch");
  tr->add_option("--data", t.data, "dataset directory (default: $DEEPSKETCH_DATA_DIR)");
  tr->add_option("--tables", t.tables, "comma-separated table names")->required();
  tr->add_option("--queries", t.queries, "training queries");
  tr->add_option("--epochs", t.epochs, "training epochs");
  tr->add_option("--samples", t.samples, "sample rows per table");
  tr->add_option("--hidden", t.hidden, "hidden layer width");
  tr->add_option("--batch-size", t.batch_size, "mini-batch size");
  tr->add_option("--threads", t.threads, "labeling threads");
  tr->add_option("--seed", t.seed, "random seed");
  tr->add_option("--out", t.out, "sketch file to write")->required();

  EstimateArgs e;
  auto* es = app.add_subcommand("estimate", "estimate one query");
  es->add_option("--sketch", e.sketch, "sketch file")->required();
  es->add_option("--sql", e.sql, "COUNT(*) query")->required();
  es->add_flag("--baselines", e.baselines, "also show sampling and independence estimates");
  es->add_flag("--truth", e.truth, "compute the true cardinality (needs --data)");
  es->add_option("--data", e.data, "dataset directory (default: $DEEPSKETCH_DATA_DIR)");
  es->add_flag("--json", e.as_json, "machine-readable output");

  EvalArgs v;
  auto* ev = app.add_subcommand("eval", "evaluate a workload file");
  ev->add_option("--sketch", v.sketch, "sketch file")->required();
  ev->add_option("--workload", v.workload, "one query per line, '#' comments, optional '|truth'")->required();
  ev->add_option("--data", v.data, "dataset directory (default: $DEEPSKETCH_DATA_DIR)");
  ev->add_flag("--json", v.as_json, "machine-readable output");
  ev->add_flag("--truth-estimator", v.truth_estimator, "add the exact cardinality as a reference estimator");

  ServeArgs s;
  auto* sv = app.add_subcommand("serve", "run the HTTP service");
  sv->add_option("--listen", s.listen, "addr:port");
  sv->add_option("--root", s.root, "storage root (default: $DEEPSKETCH_DATA_DIR)");
  sv->add_option("--workers", s.workers, "training worker slots");

  std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
  try {
    app.parse(args);
  } catch (const CLI::ParseError& pe) {
    const int rc = app.exit(pe, out, err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return gen_data(g, out);
    if (tr->parsed()) {
      detail::interrupted() = false;
      auto prev_int = std::signal(SIGINT, [](int) { detail::interrupted() = true; });
      try {
        const int rc = train(t, out);
        std::signal(SIGINT, prev_int);
        return rc;
      } catch (...) {
        std::signal(SIGINT, prev_int);
        std::error_code ec;
        std::filesystem::remove(t.out + ".tmp", ec);
        throw;
      }
    }
    if (es->parsed()) return estimate(e, out, err);
    if (ev->parsed()) return eval(v, out);
    if (sv->parsed()) return serve(s, out);
  } catch (const Error& ex) {
    detail::print_error(err, ex, es->parsed() ? std::string_view(e.sql) : std::string_view{});
    return exit_code_for(ex.code());
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace deepsketch::cli
