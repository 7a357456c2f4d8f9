#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <thread>

#include "deepsketch/service/server.hpp"
#include "test_support.hpp"

using namespace deepsketch;
using namespace deepsketch::service;
using nlohmann::json;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

/// A Service listening on an ephemeral port for the lifetime of the object.
struct Running {
  std::unique_ptr<Service> svc;
  std::thread thread;
  int port = -1;

  Running(std::shared_ptr<const TableStore> store, ServiceOptions opt = {}) {
    svc = std::make_unique<Service>(std::move(store), std::move(opt));
    port = svc->bind_any();
    thread = std::thread([this] { svc->listen_after_bind(); });
    svc->wait_until_ready();
  }
  ~Running() {
    svc->stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

std::shared_ptr<const TableStore> demo_store() {
  static auto store =
      std::make_shared<const TableStore>(generate_synthetic_dataset(testsupport::small_spec(0.8, 2000, 100), 3).store);
  return store;
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("ds_service_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

json small_job(const std::string& name, std::vector<std::string> tables = {"dim1", "fact"}) {
  return {{"name", name}, {"tables", tables}, {"s", 50},      {"num_queries", 200},
          {"epochs", 3},  {"hidden", 16},     {"seed", 1},    {"batch_size", 32}};
}

json post_json(httplib::Client& c, const std::string& path, const json& body, int* status = nullptr) {
  auto r = c.Post(path, body.dump(), "application/json");
  EXPECT_TRUE(r) << path;
  if (!r) return {};
  if (status) *status = r->status;
  return r->body.empty() ? json{} : json::parse(r->body);
}

json get_json(httplib::Client& c, const std::string& path, int* status = nullptr) {
  auto r = c.Get(path);
  EXPECT_TRUE(r) << path;
  if (!r) return {};
  if (status) *status = r->status;
  return json::parse(r->body);
}

json wait_terminal(httplib::Client& c, const std::string& id, std::chrono::seconds limit = 120s) {
  const auto until = std::chrono::steady_clock::now() + limit;
  json snap;
  while (std::chrono::steady_clock::now() < until) {
    snap = get_json(c, "/jobs/" + id);
    const auto phase = snap["phase"].get<std::string>();
    if (phase == "done" || phase == "failed" || phase == "cancelled") return snap;
    std::this_thread::sleep_for(20ms);
  }
  ADD_FAILURE() << "job " << id << " did not finish";
  return snap;
}

/// Publishes a trained sketch named `name` via the API and waits for it.
void train_via_api(Running& srv, const std::string& name) {
  auto c = srv.client();
  int status = 0;
  auto j = post_json(c, "/sketches", small_job(name), &status);
  ASSERT_EQ(status, 202) << j.dump();
  ASSERT_EQ(wait_terminal(c, j["job_id"])["phase"], "done");
}

std::vector<std::pair<std::string, json>> parse_sse(const std::string& body) {
  std::vector<std::pair<std::string, json>> out;
  std::size_t pos = 0;
  while (true) {
    const auto end = body.find("\n\n", pos);
    if (end == std::string::npos) break;
    const auto block = body.substr(pos, end - pos);
    pos = end + 2;
    std::string event, data;
    std::size_t p = 0;
    while (p < block.size()) {
      auto nl = block.find('\n', p);
      if (nl == std::string::npos) nl = block.size();
      const auto line = block.substr(p, nl - p);
      if (line.rfind("event: ", 0) == 0) event = line.substr(7);
      if (line.rfind("data: ", 0) == 0) data = line.substr(6);
      p = nl + 1;
    }
    out.emplace_back(event, json::parse(data));
  }
  return out;
}

}  // namespace

TEST(Service, SchemaListsTablesColumnsAndEdges) {
  Running srv(demo_store());
  auto c = srv.client();
  int status = 0;
  auto j = get_json(c, "/schema", &status);
  EXPECT_EQ(status, 200);
  EXPECT_EQ(j["tables"].size(), 4U);
  EXPECT_EQ(j["foreign_keys"].size(), 3U);
  bool saw_fact = false;
  for (const auto& t : j["tables"])
    if (t["name"] == "fact") {
      saw_fact = true;
      EXPECT_EQ(t["rows"], 2000);
      EXPECT_GE(t["columns"].size(), 6U);
    }
  EXPECT_TRUE(saw_fact);

  Running empty(nullptr);
  auto ce = empty.client();
  auto je = get_json(ce, "/schema", &status);
  EXPECT_EQ(status, 200);
  EXPECT_TRUE(je["tables"].empty());
}

TEST(Service, CreateSketchLifecycle) {
  ServiceOptions opt;
  const auto dir = fresh_dir("lifecycle");
  opt.registry.sketch_dir = (dir / "sketches").string();
  Running srv(demo_store(), opt);
  auto c = srv.client();

  int status = 0;
  auto j = post_json(c, "/sketches", small_job("s1"), &status);
  ASSERT_EQ(status, 202);
  ASSERT_TRUE(j.contains("job_id"));
  const std::string id = j["job_id"];
  const auto first = get_json(c, "/jobs/" + id)["phase"].get<std::string>();
  EXPECT_TRUE(first == "queued" || first == "generating" || first == "labeling" || first == "training" ||
              first == "done");

  // the name is reserved while the job runs
  post_json(c, "/sketches", small_job("s1"), &status);
  EXPECT_EQ(status, 409);

  auto done = wait_terminal(c, id);
  ASSERT_EQ(done["phase"], "done") << done.dump();
  EXPECT_EQ(done["history"].size(), 3U);
  EXPECT_DOUBLE_EQ(done["progress"].get<double>(), 1.0);

  auto list = get_json(c, "/sketches")["sketches"];
  EXPECT_EQ(std::count_if(list.begin(), list.end(), [](const json& s) { return s["name"] == "s1"; }), 1);
  EXPECT_TRUE(fs::exists(dir / "sketches" / "s1.dsk"));

  post_json(c, "/sketches", small_job("s1"), &status);
  EXPECT_EQ(status, 409);

  auto jobs = get_json(c, "/jobs")["jobs"];
  EXPECT_EQ(jobs.size(), 1U);
  fs::remove_all(dir);
}

TEST(Service, CreateSketchValidation) {
  Running srv(demo_store());
  auto c = srv.client();
  int status = 0;
  post_json(c, "/sketches", small_job("x", {"dim1", "dim2"}), &status);
  EXPECT_EQ(status, 400);
  post_json(c, "/sketches", small_job("x", {"nope"}), &status);
  EXPECT_EQ(status, 400);
  auto bad = small_job("x");
  bad["epochs"] = 0;
  auto err = post_json(c, "/sketches", bad, &status);
  EXPECT_EQ(status, 400);
  EXPECT_EQ(err["error"], "InvalidParams");
  bad = small_job("x");
  bad["s"] = 10'000'000;
  post_json(c, "/sketches", bad, &status);
  EXPECT_EQ(status, 400);
  bad = small_job("x");
  bad.erase("name");
  post_json(c, "/sketches", bad, &status);
  EXPECT_EQ(status, 400);
  auto r = c.Post("/sketches", "{not json", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);

  Running empty(nullptr);
  auto ce = empty.client();
  post_json(ce, "/sketches", small_job("x"), &status);
  EXPECT_EQ(status, 400);
}

TEST(Service, UnknownJobIs404) {
  Running srv(demo_store());
  auto c = srv.client();
  int status = 0;
  get_json(c, "/jobs/job-999", &status);
  EXPECT_EQ(status, 404);
  auto r = c.Delete("/jobs/job-999");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
  r = c.Get("/jobs/job-999/events");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
}

TEST(Service, CancelRunningAndQueuedJobs) {
  Running srv(demo_store());
  auto c = srv.client();
  int status = 0;
  auto big = small_job("long");
  big["num_queries"] = 200000;  // long enough to be caught mid-flight
  const std::string running = post_json(c, "/sketches", big, &status)["job_id"];
  ASSERT_EQ(status, 202);
  const std::string queued = post_json(c, "/sketches", small_job("waiting"), &status)["job_id"];
  ASSERT_EQ(status, 202);

  // wait until the first job is past the queue
  for (int i = 0; i < 500 && get_json(c, "/jobs/" + running)["phase"] == "queued"; ++i) std::this_thread::sleep_for(10ms);

  auto r = c.Delete("/jobs/" + queued);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 202);
  EXPECT_EQ(get_json(c, "/jobs/" + queued)["phase"], "cancelled");  // immediate for a queued job

  r = c.Delete("/jobs/" + running);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 202);
  auto snap = wait_terminal(c, running, 60s);
  EXPECT_EQ(snap["phase"], "cancelled");
  EXPECT_TRUE(get_json(c, "/sketches")["sketches"].empty());

  // names of cancelled jobs are free again
  post_json(c, "/sketches", small_job("long"), &status);
  EXPECT_EQ(status, 202);
}

TEST(Service, JobEventStreamIsMonotone) {
  Running srv(demo_store());
  auto c = srv.client();
  int status = 0;
  const std::string id = post_json(c, "/sketches", small_job("ev"), &status)["job_id"];
  auto r = c.Get("/jobs/" + id + "/events");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Content-Type"), "text/event-stream");
  const auto events = parse_sse(r->body);
  ASSERT_GE(events.size(), 2U);
  EXPECT_EQ(events.back().first, "end");
  EXPECT_EQ(events.back().second["phase"], "done");
  const std::vector<std::string> order = {"queued", "generating", "labeling", "training", "done"};
  std::size_t last_phase = 0, last_history = 0;
  double last_progress = 0;
  for (std::size_t i = 0; i + 1 < events.size(); ++i) {
    const auto& e = events[i].second;
    const auto p = static_cast<std::size_t>(std::find(order.begin(), order.end(), e["phase"]) - order.begin());
    ASSERT_LT(p, order.size());
    EXPECT_GE(p, last_phase);
    if (p == last_phase) {
      EXPECT_GE(e["progress"].get<double>(), last_progress);
    }
    EXPECT_GE(e["history"].size(), last_history);
    last_phase = p;
    last_progress = e["progress"];
    last_history = e["history"].size();
  }
  EXPECT_EQ(last_history, 3U);
}

TEST(Service, EstimateEndpoint) {
  Running srv(demo_store());
  train_via_api(srv, "sk");
  auto c = srv.client();
  int status = 0;

  auto j = post_json(c, "/sketches/sk/estimate", {{"sql", "SELECT COUNT(*) FROM fact f WHERE f.z < 300"}}, &status);
  ASSERT_EQ(status, 200) << j.dump();
  EXPECT_GE(j["estimate"].get<double>(), 0.0);
  EXPECT_FALSE(j.contains("baselines"));
  EXPECT_FALSE(j.contains("truth"));

  // plain-text body works too
  auto r = c.Post("/sketches/sk/estimate", "SELECT COUNT(*) FROM fact", "text/plain");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);

  const std::string sql = "SELECT COUNT(*) FROM fact f, dim1 d WHERE f.dim1_id = d.id AND d.attr = 1 AND f.z > 100";
  j = post_json(c, "/sketches/sk/estimate?baselines=1&truth=1", {{"sql", sql}}, &status);
  ASSERT_EQ(status, 200);
  const auto q = parse_query(sql, demo_store()->schema());
  EXPECT_EQ(j["truth"].get<std::uint64_t>(), true_cardinality(*demo_store(), q));
  EXPECT_GE(j["baselines"]["sampling"].get<double>(), 0.0);
  EXPECT_GE(j["baselines"]["independence"].get<double>(), 0.0);

  r = c.Post("/sketches/sk/estimate?truth=1&stream=1", json{{"sql", sql}}.dump(), "application/json");
  ASSERT_TRUE(r);
  const auto events = parse_sse(r->body);
  ASSERT_EQ(events.size(), 2U);
  EXPECT_EQ(events[0].first, "estimate");
  EXPECT_EQ(events[1].first, "truth");
  EXPECT_EQ(events[1].second["truth"], j["truth"]);

  auto e = post_json(c, "/sketches/sk/estimate", {{"sql", "SELECT COUNT(*) FROM fact f WHERE f.z = ?"}}, &status);
  EXPECT_EQ(status, 400);
  EXPECT_NE(e["message"].get<std::string>().find("template"), std::string::npos);

  e = post_json(c, "/sketches/sk/estimate", {{"sql", "SELECT COUNT(*) FROM fact f WHERE f.z <"}}, &status);
  EXPECT_EQ(status, 400);
  EXPECT_EQ(e["error"], "SyntaxError");
  EXPECT_TRUE(e.contains("position"));

  e = post_json(c, "/sketches/sk/estimate", {{"sql", "SELECT COUNT(*) FROM dim2"}}, &status);
  EXPECT_EQ(status, 422);
  EXPECT_EQ(e["error"], "UnknownSymbol");

  post_json(c, "/sketches/nope/estimate", {{"sql", "SELECT COUNT(*) FROM fact"}}, &status);
  EXPECT_EQ(status, 404);
  post_json(c, "/sketches/sk/estimate", {{"query", "x"}}, &status);
  EXPECT_EQ(status, 400);
}

TEST(Service, TemplateEndpoint) {
  Running srv(demo_store());
  train_via_api(srv, "tk");
  auto c = srv.client();
  int status = 0;
  const auto sk = srv.svc->registry().sketch("tk");

  auto j = post_json(c, "/sketches/tk/template?baselines=1&truth=1",
                     {{"sql", "SELECT COUNT(*) FROM fact f, dim1 d WHERE f.dim1_id = d.id AND d.day = ?"},
                      {"grouping", "year"}},
                     &status);
  ASSERT_EQ(status, 200) << j.dump();
  // one point per distinct year among the sampled days
  std::set<std::int64_t> years;
  for (double d : sk->sampled_values("dim1", "day")) years.insert(year_of_days(static_cast<std::int64_t>(d)));
  ASSERT_EQ(j["instances"].size(), years.size());
  for (std::size_t i = 1; i < j["instances"].size(); ++i)
    EXPECT_LT(j["instances"][i - 1]["sort_key"].get<double>(), j["instances"][i]["sort_key"].get<double>());
  for (const auto& p : j["instances"]) {
    const auto q = parse_query(p["sql"].get<std::string>(), demo_store()->schema());
    EXPECT_EQ(p["truth"].get<std::uint64_t>(), true_cardinality(*demo_store(), q));
    EXPECT_TRUE(p.contains("sampling"));
    EXPECT_TRUE(p.contains("independence"));
  }

  j = post_json(c, "/sketches/tk/template",
                {{"sql", "SELECT COUNT(*) FROM fact f WHERE f.z = ?"}, {"grouping", "buckets"}, {"k", 4}}, &status);
  ASSERT_EQ(status, 200);
  EXPECT_EQ(j["instances"].size(), 4U);

  auto r = c.Post("/sketches/tk/template?stream=1",
                  json{{"sql", "SELECT COUNT(*) FROM fact f WHERE f.z = ?"}, {"grouping", "buckets"}, {"k", 4}}.dump(),
                  "application/json");
  ASSERT_TRUE(r);
  const auto events = parse_sse(r->body);
  ASSERT_EQ(events.size(), 5U);
  EXPECT_EQ(events.back().first, "end");
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(events[i].second["label"], j["instances"][i]["label"]);

  post_json(c, "/sketches/tk/template", {{"sql", "SELECT COUNT(*) FROM fact f WHERE f.z = 3"}}, &status);
  EXPECT_EQ(status, 400);
  post_json(c, "/sketches/tk/template", {{"sql", "SELECT COUNT(*) FROM fact f WHERE f.z = ? AND f.y = ?"}}, &status);
  EXPECT_EQ(status, 400);
  post_json(c, "/sketches/tk/template", {{"sql", "SELECT COUNT(*) FROM fact f WHERE f.z = ?"}, {"grouping", "year"}},
            &status);
  EXPECT_EQ(status, 422);
  post_json(c, "/sketches/tk/template", {{"sql", "SELECT COUNT(*) FROM dim2 d WHERE d.attr = ?"}}, &status);
  EXPECT_EQ(status, 422);
}

TEST(Service, TemplateOnAllNullColumnIsEmptySample) {
  TableDef p{"p", {{"id", ColumnKind::Integer, false}, {"v", ColumnKind::Integer, true}}, "id"};
  std::vector<std::vector<std::optional<double>>> rows;
  for (int i = 0; i < 50; ++i) rows.push_back({static_cast<double>(i + 1), std::nullopt});
  auto store = std::make_shared<const TableStore>(SchemaCatalog({p}, {}), std::vector<Table>{Table::from_rows(p, rows)});
  Running srv(store);
  auto c = srv.client();
  int status = 0;
  auto j = post_json(c, "/sketches", {{"name", "n"}, {"tables", {"p"}}, {"s", 10}, {"num_queries", 20}, {"epochs", 1}, {"hidden", 4}},
                     &status);
  ASSERT_EQ(status, 202);
  ASSERT_EQ(wait_terminal(c, j["job_id"])["phase"], "done");
  auto e = post_json(c, "/sketches/n/template", {{"sql", "SELECT COUNT(*) FROM p WHERE p.v = ?"}}, &status);
  EXPECT_EQ(status, 422);
  EXPECT_EQ(e["error"], "EmptySample");
}

TEST(Service, ListingNeverShowsPartialSketches) {
  Running srv(demo_store());
  auto c = srv.client();
  std::atomic<bool> stop{false};
  std::atomic<int> bad{0}, seen{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 3; ++t)
    readers.emplace_back([&] {
      auto rc = srv.client();
      while (!stop) {
        auto r = rc.Get("/sketches");
        if (!r || r->status != 200) {
          ++bad;
          continue;
        }
        const auto listing = json::parse(r->body);
        for (const auto& s : listing["sketches"]) {
          ++seen;
          // a listed sketch is complete: it has validation results and answers estimates
          if (s["validation"]["mean"].get<double>() < 1.0) ++bad;
          auto e = rc.Post("/sketches/" + s["name"].get<std::string>() + "/estimate", "SELECT COUNT(*) FROM fact",
                           "text/plain");
          if (!e || e->status != 200) ++bad;
        }
      }
    });
  int status = 0;
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i) ids.push_back(post_json(c, "/sketches", small_job("p" + std::to_string(i)), &status)["job_id"]);
  for (const auto& id : ids) EXPECT_EQ(wait_terminal(c, id)["phase"], "done");
  // let the readers observe the published state too
  for (int i = 0; i < 500 && seen.load() < 3; ++i) std::this_thread::sleep_for(10ms);
  stop = true;
  for (auto& t : readers) t.join();
  EXPECT_EQ(bad.load(), 0);
  EXPECT_GT(seen.load(), 0);
  EXPECT_EQ(get_json(c, "/sketches")["sketches"].size(), 3U);
}

TEST(Service, PhaseMonotoneUnderRandomInterleavings) {
  const std::vector<SketchPhase> all = {SketchPhase::Queued,   SketchPhase::Generating, SketchPhase::Labeling,
                                        SketchPhase::Training, SketchPhase::Done,       SketchPhase::Failed,
                                        SketchPhase::Cancelled};
  for (int round = 0; round < 50; ++round) {
    TrainingJob job("j", {});
    std::atomic<bool> done{false};
    std::vector<JobSnapshot> observed;
    std::thread reader([&] {
      while (!done) observed.push_back(job.snapshot());
      observed.push_back(job.snapshot());
    });
    std::vector<std::thread> writers;
    for (int w = 0; w < 4; ++w)
      writers.emplace_back([&, w] {
        std::mt19937 gen(static_cast<unsigned>(round * 10 + w));
        for (int i = 0; i < 200; ++i) {
          auto p = all[gen() % 5];  // mostly live phases
          if (gen() % 50 == 0) p = all[5 + gen() % 2];
          job.update(p, std::uniform_real_distribution<double>(0, 1)(gen));
          if (gen() % 8 == 0) std::this_thread::yield();
        }
      });
    for (auto& t : writers) t.join();
    done = true;
    reader.join();
    for (std::size_t i = 1; i < observed.size(); ++i) {
      const auto& a = observed[i - 1];
      const auto& b = observed[i];
      ASSERT_GE(b.version, a.version);
      if (is_terminal(a.phase)) {
        ASSERT_EQ(b.phase, a.phase);
        ASSERT_EQ(b.version, a.version);
      } else if (!is_terminal(b.phase)) {
        ASSERT_GE(b.phase, a.phase);
        if (b.phase == a.phase) {
          ASSERT_GE(b.fraction, a.fraction);
        }
      }
    }
  }
}

TEST(Service, EstimateLatencyUnaffectedByTraining) {
  Running srv(demo_store());
  train_via_api(srv, "lat");
  auto c = srv.client();
  const std::string sql = "SELECT COUNT(*) FROM fact f, dim1 d WHERE f.dim1_id = d.id AND f.z < 400";
  auto median_latency = [&] {
    std::vector<double> ms;
    for (int i = 0; i < 200; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      auto r = c.Post("/sketches/lat/estimate", sql, "text/plain");
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      EXPECT_TRUE(r && r->status == 200);
    }
    std::sort(ms.begin(), ms.end());
    return ms[ms.size() / 2];
  };
  const double idle = median_latency();
  int status = 0;
  auto big = small_job("busy");
  big["num_queries"] = 20000;
  big["hidden"] = 128;
  big["epochs"] = 50;
  const std::string id = post_json(c, "/sketches", big, &status)["job_id"];
  for (int i = 0; i < 500 && get_json(c, "/jobs/" + id)["phase"] == "queued"; ++i) std::this_thread::sleep_for(5ms);
  const double busy = median_latency();
  const auto phase = get_json(c, "/jobs/" + id)["phase"].get<std::string>();
  c.Delete("/jobs/" + id);
  EXPECT_NE(phase, "done") << "training finished before the measurement";
  // 0.2 ms slack absorbs timer noise when the idle latency is tiny
  EXPECT_LE(busy, 2 * idle + 0.2) << "idle " << idle << " ms, busy " << busy << " ms";
}

TEST(Service, DataDirLayoutAndRestart) {
  const auto root = fresh_dir("datadir");
  write_dataset((root / "data").string(), *demo_store());
  ::setenv("DEEPSKETCH_DATA_DIR", root.c_str(), 1);
  const auto dd = DataDir::from_env();
  ::unsetenv("DEEPSKETCH_DATA_DIR");
  EXPECT_EQ(dd.root, root);
  auto store = dd.load_store();
  ASSERT_TRUE(store);
  EXPECT_EQ(store->table("fact").row_count, 2000U);
  EXPECT_EQ(DataDir{root / "missing"}.load_store(), nullptr);

  ServiceOptions opt;
  opt.registry.sketch_dir = dd.sketches().string();
  {
    Running srv(store, opt);
    train_via_api(srv, "kept");
  }
  {
    // jobs are not persisted, sketches are
    Running srv(store, opt);
    auto c = srv.client();
    auto list = get_json(c, "/sketches")["sketches"];
    ASSERT_EQ(list.size(), 1U);
    EXPECT_EQ(list[0]["name"], "kept");
    EXPECT_TRUE(get_json(c, "/jobs")["jobs"].empty());
    int status = 0;
    post_json(c, "/sketches", small_job("kept"), &status);
    EXPECT_EQ(status, 409);
  }
  fs::remove_all(root);
}
