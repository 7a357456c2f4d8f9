#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "deepsketch/datastore/executor.hpp"
#include "deepsketch/queryir/template.hpp"
#include "deepsketch/service/registry.hpp"
#include "deepsketch/sketch/sketch.hpp"

// after Eigen: <resolv.h> (via httplib) defines _res, an Eigen parameter name
#include <httplib.h>

namespace deepsketch::service {

using nlohmann::json;

/// Limits applied to POST /sketches parameters.
struct RequestBounds {
  std::size_t max_samples = 10000;
  std::size_t max_queries = 1000000;
  int max_epochs = 1000;
  std::size_t max_hidden = 1024;
};

struct ServiceOptions {
  RegistryOptions registry;
  RequestBounds bounds;
  std::size_t default_sample_size = kDefaultSampleSize;
  std::size_t default_queries = 10000;
  int default_epochs = 25;
};

/// DEEPSKETCH_DATA_DIR layout: <root>/data holds schema.json plus one CSV per
/// table; <root>/sketches holds published sketch files.
struct DataDir {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path sketches() const { return root / "sketches"; }

  static DataDir from_env(const std::string& fallback = ".") {
    const char* env = std::getenv("DEEPSKETCH_DATA_DIR");
    return {env && *env ? std::filesystem::path(env) : std::filesystem::path(fallback)};
  }

  /// Loads the dataset if <root>/data/schema.json exists; null otherwise.
  std::shared_ptr<const TableStore> load_store() const {
    if (!std::filesystem::exists(data() / "schema.json")) return nullptr;
    return std::make_shared<const TableStore>(load_dataset(data().string()));
  }
};

namespace detail {

struct HttpError {
  int status;
  std::string code;
  std::string message;
  std::optional<std::size_t> position;
};

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, const HttpError& e) {
  json body = {{"error", e.code}, {"message", e.message}};
  if (e.position) body["position"] = *e.position;
  send_json(res, e.status, body);
}

inline HttpError from_error(const Error& e, int status) {
  return {status, std::string(to_string(e.code())), e.detail(), e.position()};
}

/// Status for errors raised while parsing SQL against a sketch.
inline int parse_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownSymbol:
    case ErrorCode::UnknownTable:
    case ErrorCode::UnknownColumn: return 422;
    default: return 400;
  }
}

inline bool flag(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return false;
  const auto v = req.get_param_value(name);
  return v.empty() || v == "1" || v == "true" || v == "yes";
}

inline json parse_body(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw HttpError{400, "BadRequest", "request body must be a JSON object", std::nullopt};
    return j;
  } catch (const json::exception& e) {
    throw HttpError{400, "BadRequest", std::string("invalid JSON: ") + e.what(), std::nullopt};
  }
}

/// SQL from a JSON body {"sql": ...} or a plain-text body.
inline std::string body_sql(const httplib::Request& req, json* out = nullptr) {
  const auto type = req.get_header_value("Content-Type");
  if (type.rfind("application/json", 0) == 0 || (!req.body.empty() && req.body.front() == '{')) {
    auto j = parse_body(req);
    if (!j.contains("sql") || !j["sql"].is_string())
      throw HttpError{400, "BadRequest", "body needs a string field 'sql'", std::nullopt};
    if (out) *out = j;
    return j["sql"].get<std::string>();
  }
  return req.body;
}

template <typename T>
T bounded(const json& j, const char* key, T fallback, T lo, T hi) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer())
    throw HttpError{400, "InvalidParams", std::string(key) + " must be an integer", std::nullopt};
  const auto v = j[key].get<long long>();
  if (v < static_cast<long long>(lo) || v > static_cast<long long>(hi))
    throw HttpError{400, "InvalidParams",
                    std::string(key) + " must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]",
                    std::nullopt};
  return static_cast<T>(v);
}

inline std::string sse(const std::string& event, const json& data) {
  return "event: " + event + "\ndata: " + data.dump() + "\n\n";
}

}  // namespace detail

/// The HTTP API over a SketchRegistry. Estimation handlers only read
/// published immutable sketches; creation runs on the registry's worker.
class Service {
 public:
  Service(std::shared_ptr<const TableStore> store, ServiceOptions options = {})
      : options_(std::move(options)), registry_(std::move(store), options_.registry) {
    routes();
  }
  ~Service() { stop(); }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  SketchRegistry& registry() { return registry_; }
  httplib::Server& http() { return server_; }

  /// Binds to an ephemeral port on `host`; returns the port (or -1).
  int bind_any(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  bool running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  template <typename F>
  static auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const detail::HttpError& e) {
        detail::send_error(res, e);
      } catch (const Error& e) {
        detail::send_error(res, detail::from_error(e, 500));
      } catch (const std::exception& e) {
        detail::send_error(res, {500, "Internal", e.what(), std::nullopt});
      }
    };
  }

  std::shared_ptr<const DeepSketch> require_sketch(const std::string& name) const {
    auto s = registry_.sketch(name);
    if (!s) throw detail::HttpError{404, "NotFound", "no sketch named '" + name + "'", std::nullopt};
    return s;
  }

  const TableStore& require_store() const {
    if (!registry_.store()) throw detail::HttpError{409, "NoDataset", "no dataset loaded for truth", std::nullopt};
    return *registry_.store();
  }

  static json sketch_summary(const std::string& name, const DeepSketch& s) {
    json tables = json::array();
    for (const auto& t : s.schema.tables()) tables.push_back(t.name);
    return {{"name", name},
            {"tables", tables},
            {"sample_size", s.samples.sample_size},
            {"hidden", s.params.hidden},
            {"num_training_queries", s.meta.num_training_queries},
            {"epochs", s.meta.epochs},
            {"seed", s.meta.seed},
            {"created_at", s.meta.created_at},
            {"validation", to_json(s.meta.validation)}};
  }

  json estimate_json(const DeepSketch& s, const Query& q, bool baselines) const {
    const auto r = estimate(s, q);
    json out = {{"estimate", r.cardinality},
                {"zero_tuple_tables", r.zero_tuple_tables},
                {"clamped_literals", r.clamped_literals}};
    if (baselines)
      out["baselines"] = {{"sampling", sampling_estimate(s, q)}, {"independence", independence_estimate(s, q)}};
    return out;
  }

  void routes() {
    using httplib::Request;
    using httplib::Response;

    server_.Get("/schema", guarded([this](const Request&, Response& res) {
      if (!registry_.store())
        return detail::send_json(res, 200, {{"tables", json::array()}, {"foreign_keys", json::array()}});
      auto j = schema_to_json(registry_.store()->schema());
      for (auto& t : j["tables"]) t["rows"] = registry_.store()->table(t["name"].get<std::string>()).row_count;
      detail::send_json(res, 200, j);
    }));

    server_.Get("/sketches", guarded([this](const Request&, Response& res) {
      json list = json::array();
      for (const auto& [name, s] : registry_.sketches()) list.push_back(sketch_summary(name, *s));
      detail::send_json(res, 200, {{"sketches", list}});
    }));

    server_.Post("/sketches", guarded([this](const Request& req, Response& res) {
      const auto j = detail::parse_body(req);
      if (!j.contains("name") || !j["name"].is_string())
        throw detail::HttpError{400, "InvalidParams", "'name' is required", std::nullopt};
      if (!j.contains("tables") || !j["tables"].is_array() || j["tables"].empty())
        throw detail::HttpError{400, "InvalidTables", "'tables' must be a non-empty array", std::nullopt};
      JobRequest jr;
      jr.name = j["name"].get<std::string>();
      for (const auto& t : j["tables"]) {
        if (!t.is_string()) throw detail::HttpError{400, "InvalidTables", "table names must be strings", std::nullopt};
        jr.config.tables.push_back(t.get<std::string>());
      }
      const auto& b = options_.bounds;
      const char* samples_key = j.contains("s") ? "s" : "samples";
      jr.config.sample_size = detail::bounded<std::size_t>(j, samples_key, options_.default_sample_size, 1, b.max_samples);
      jr.config.num_queries = detail::bounded<std::size_t>(j, "num_queries", options_.default_queries, 1, b.max_queries);
      jr.config.train.epochs = detail::bounded<int>(j, "epochs", options_.default_epochs, 1, b.max_epochs);
      jr.config.train.hidden = detail::bounded<std::size_t>(j, "hidden", mscn::kDefaultHidden, 1, b.max_hidden);
      jr.config.train.batch_size = detail::bounded<std::size_t>(j, "batch_size", 128, 1, 1 << 16);
      jr.config.seed = detail::bounded<std::uint64_t>(j, "seed", 0, 0, std::uint64_t{1} << 53);
      std::shared_ptr<TrainingJob> job;
      std::string detail;
      switch (registry_.submit(std::move(jr), job, detail)) {
        case SubmitError::None: break;
        case SubmitError::NameTaken: throw detail::HttpError{409, "NameTaken", detail, std::nullopt};
        case SubmitError::InvalidTables: throw detail::HttpError{400, "InvalidTables", detail, std::nullopt};
        case SubmitError::InvalidParams: throw detail::HttpError{400, "InvalidParams", detail, std::nullopt};
      }
      res.set_header("Location", "/jobs/" + job->id());
      auto snap = job->snapshot().to_json();
      snap["job_id"] = job->id();
      detail::send_json(res, 202, snap);
    }));

    server_.Get("/jobs", guarded([this](const Request&, Response& res) {
      json list = json::array();
      for (const auto& j : registry_.jobs()) list.push_back(j->snapshot().to_json());
      detail::send_json(res, 200, {{"jobs", list}});
    }));

    server_.Get(R"(/jobs/([^/]+))", guarded([this](const Request& req, Response& res) {
      auto job = registry_.job(req.matches[1]);
      if (!job) throw detail::HttpError{404, "NotFound", "no job " + std::string(req.matches[1]), std::nullopt};
      detail::send_json(res, 200, job->snapshot().to_json());
    }));

    server_.Delete(R"(/jobs/([^/]+))", guarded([this](const Request& req, Response& res) {
      const std::string id = req.matches[1];
      if (!registry_.cancel(id)) throw detail::HttpError{404, "NotFound", "no job " + id, std::nullopt};
      detail::send_json(res, 202, registry_.job(id)->snapshot().to_json());
    }));

    server_.Get(R"(/jobs/([^/]+)/events)", guarded([this](const Request& req, Response& res) {
      auto job = registry_.job(req.matches[1]);
      if (!job) throw detail::HttpError{404, "NotFound", "no job " + std::string(req.matches[1]), std::nullopt};
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [job, seen = std::uint64_t(-1)](
                                                                std::size_t, httplib::DataSink& sink) mutable {
        auto snap = job->wait_for_change(seen, std::chrono::milliseconds(500));
        if (snap.version != seen) {
          seen = snap.version;
          const auto msg = detail::sse("progress", snap.to_json());
          if (!sink.write(msg.data(), msg.size())) return false;
        }
        if (is_terminal(snap.phase)) {
          const auto msg = detail::sse("end", {{"phase", std::string(to_string(snap.phase))}});
          sink.write(msg.data(), msg.size());
          sink.done();
        }
        return true;
      });
    }));

    server_.Post(R"(/sketches/([^/]+)/estimate)", guarded([this](const Request& req, Response& res) {
      auto sk = require_sketch(req.matches[1]);
      const auto sql = detail::body_sql(req);
      Query q;
      try {
        auto parsed = parse_statement(sql, sk->schema);
        if (parsed.placeholder)
          throw detail::HttpError{400, "Placeholder",
                                  "query contains a '?' placeholder; use /sketches/{name}/template",
                                  sql.find('?')};
        q = std::move(parsed.query);
      } catch (const Error& e) {
        auto he = detail::from_error(e, detail::parse_status(e.code()));
        if (he.status == 422) he.code = "UnknownSymbol";
        throw he;
      }
      const bool baselines = detail::flag(req, "baselines");
      const bool truth = detail::flag(req, "truth");
      json out;
      try {
        out = estimate_json(*sk, q, baselines);
      } catch (const Error& e) {
        throw detail::from_error(e, e.code() == ErrorCode::UnknownSymbol ? 422 : 500);
      }
      if (!truth) return detail::send_json(res, 200, out);
      const TableStore& store = require_store();
      if (!detail::flag(req, "stream")) {
        out["truth"] = true_cardinality(store, q);
        return detail::send_json(res, 200, out);
      }
      // estimate first, exact count as a second event once it is computed
      res.set_chunked_content_provider("text/event-stream", [out, q, &store](std::size_t, httplib::DataSink& sink) {
        auto first = detail::sse("estimate", out);
        if (!sink.write(first.data(), first.size())) return false;
        auto second = detail::sse("truth", {{"truth", true_cardinality(store, q)}});
        sink.write(second.data(), second.size());
        sink.done();
        return true;
      });
    }));

    server_.Post(R"(/sketches/([^/]+)/template)", guarded([this](const Request& req, Response& res) {
      auto sk = require_sketch(req.matches[1]);
      json body;
      const auto sql = detail::body_sql(req, &body);
      try {
        auto parsed = parse_statement(sql, sk->schema);
        if (!parsed.placeholder)
          throw detail::HttpError{400, "InvalidTemplate", "template needs exactly one '?' placeholder", std::nullopt};
      } catch (const Error& e) {
        auto he = detail::from_error(e, detail::parse_status(e.code()));
        if (he.status == 422) he.code = "UnknownSymbol";
        throw he;
      }
      std::vector<TemplateInstance> instances;
      try {
        const std::string grouping = body.value("grouping", req.has_param("grouping") ? req.get_param_value("grouping") : "distinct");
        const int k = body.value("k", req.has_param("k") ? std::atoi(req.get_param_value("k").c_str()) : 10);
        instances = expand_template(parse_template(sql, sk->schema, parse_grouping(grouping, k)), *sk);
      } catch (const Error& e) {
        throw detail::from_error(e, 422);
      } catch (const json::exception& e) {
        throw detail::HttpError{400, "BadRequest", e.what(), std::nullopt};
      }
      const bool baselines = detail::flag(req, "baselines");
      const bool truth = detail::flag(req, "truth");
      const TableStore* store = truth ? &require_store() : nullptr;
      auto point = [sk, baselines, store](const TemplateInstance& inst) {
        json p = {{"label", inst.label}, {"sort_key", inst.sort_key}, {"lo", inst.lo}, {"hi", inst.hi},
                  {"sql", render_sql(inst.query, sk->schema)}};
        p["estimate"] = estimate(*sk, inst.query).cardinality;
        if (baselines) {
          p["sampling"] = sampling_estimate(*sk, inst.query);
          p["independence"] = independence_estimate(*sk, inst.query);
        }
        if (store) p["truth"] = true_cardinality(*store, inst.query);
        return p;
      };
      if (!detail::flag(req, "stream")) {
        json list = json::array();
        for (const auto& inst : instances) list.push_back(point(inst));
        return detail::send_json(res, 200, {{"instances", list}});
      }
      res.set_chunked_content_provider(
          "text/event-stream", [instances = std::move(instances), point, i = std::size_t{0}](
                                   std::size_t, httplib::DataSink& sink) mutable {
            if (i < instances.size()) {
              const auto msg = detail::sse("instance", point(instances[i++]));
              return sink.write(msg.data(), msg.size());
            }
            const auto end = detail::sse("end", {{"count", instances.size()}});
            sink.write(end.data(), end.size());
            sink.done();
            return true;
          });
    }));
  }

  ServiceOptions options_;
  SketchRegistry registry_;
  httplib::Server server_;
};

}  // namespace deepsketch::service
