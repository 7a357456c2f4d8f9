#pragma once

#include <sys/resource.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "deepsketch/sketch/sketch.hpp"
#include "deepsketch/sketch/sketch_io.hpp"

namespace deepsketch::service {

inline bool is_terminal(SketchPhase p) {
  return p == SketchPhase::Done || p == SketchPhase::Failed || p == SketchPhase::Cancelled;
}

/// Point-in-time copy of a job's state.
struct JobSnapshot {
  std::string id;
  std::string name;
  SketchPhase phase = SketchPhase::Queued;
  double fraction = 0;
  int epoch = 0;
  std::vector<mscn::EpochMetrics> history;
  std::string error;
  std::uint64_t version = 0;  // bumps on every accepted update

  nlohmann::json to_json() const {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& m : history) h.push_back(mscn::to_json(m));
    return {{"id", id},         {"name", name},   {"phase", std::string(to_string(phase))},
            {"progress", fraction}, {"epoch", epoch}, {"history", std::move(h)},
            {"error", error}};
  }
};

/// A sketch-creation request as accepted by the service.
struct JobRequest {
  std::string name;
  SketchConfig config;
};

/// Mutable job record. All state sits behind one mutex; readers take
/// snapshots, so no torn reads. Updates that would move the phase backwards,
/// leave a terminal phase, or lower progress within a phase are dropped.
class TrainingJob {
 public:
  TrainingJob(std::string id, JobRequest request) : request_(std::move(request)) {
    state_.id = std::move(id);
    state_.name = request_.name;
  }

  const JobRequest& request() const { return request_; }
  const std::string& id() const { return state_.id; }

  JobSnapshot snapshot() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  /// Returns whether the update was applied.
  bool update(SketchPhase phase, double fraction, const std::optional<mscn::EpochMetrics>& epoch = std::nullopt,
              const std::string& error = {}) {
    {
      std::lock_guard lock(mu_);
      if (is_terminal(state_.phase)) return false;
      // failed/cancelled are reachable from any live phase; otherwise forward only
      const bool abort = phase == SketchPhase::Failed || phase == SketchPhase::Cancelled;
      if (!abort && phase < state_.phase) return false;
      if (phase == state_.phase) fraction = std::max(fraction, state_.fraction);
      state_.phase = phase;
      state_.fraction = std::clamp(fraction, 0.0, 1.0);
      if (epoch) {
        state_.epoch = epoch->epoch;
        state_.history.push_back(*epoch);
      }
      if (!error.empty()) state_.error = error;
      ++state_.version;
    }
    cv_.notify_all();
    return true;
  }

  /// Blocks until the version moves past `seen` or `timeout` elapses.
  JobSnapshot wait_for_change(std::uint64_t seen, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return state_.version != seen; });
    return state_;
  }

  void request_cancel() { cancel_.store(true); }
  bool cancel_requested() const { return cancel_.load(); }

 private:
  JobRequest request_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  JobSnapshot state_;
  std::atomic<bool> cancel_{false};
};

enum class SubmitError { None, NameTaken, InvalidTables, InvalidParams };

struct RegistryOptions {
  std::size_t worker_slots = 1;
  int worker_nice = 10;                      // training yields the CPU to estimation
  std::optional<std::string> sketch_dir;     // published sketches are persisted here
  std::int64_t (*clock)() = nullptr;         // created_at source; default: 0
};

/// Named immutable sketches plus training jobs. Sketch and job names share
/// one namespace. A finished job's sketch becomes visible in a single step
/// under the registry lock, after it is fully built and persisted.
class SketchRegistry {
 public:
  explicit SketchRegistry(std::shared_ptr<const TableStore> store, RegistryOptions options = {})
      : store_(std::move(store)), options_(std::move(options)) {
    if (options_.sketch_dir) load_persisted();
    for (std::size_t i = 0; i < std::max<std::size_t>(1, options_.worker_slots); ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~SketchRegistry() {
    {
      std::lock_guard lock(queue_mu_);
      stopping_ = true;
      for (auto& j : queue_) j->request_cancel();
    }
    {
      std::shared_lock lock(mu_);
      for (auto& [id, j] : jobs_) j->request_cancel();
    }
    queue_cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  SketchRegistry(const SketchRegistry&) = delete;
  SketchRegistry& operator=(const SketchRegistry&) = delete;

  const TableStore* store() const { return store_.get(); }

  /// Adds an already-built sketch (e.g. loaded from disk).
  bool publish(const std::string& name, std::shared_ptr<const DeepSketch> sketch) {
    std::unique_lock lock(mu_);
    if (sketches_.count(name) || reserved_.count(name)) return false;
    sketches_[name] = std::move(sketch);
    return true;
  }

  std::shared_ptr<const DeepSketch> sketch(const std::string& name) const {
    std::shared_lock lock(mu_);
    auto it = sketches_.find(name);
    return it == sketches_.end() ? nullptr : it->second;
  }

  std::vector<std::pair<std::string, std::shared_ptr<const DeepSketch>>> sketches() const {
    std::shared_lock lock(mu_);
    return {sketches_.begin(), sketches_.end()};
  }

  std::shared_ptr<TrainingJob> job(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = jobs_.find(id);
    return it == jobs_.end() ? nullptr : it->second;
  }

  std::vector<std::shared_ptr<TrainingJob>> jobs() const {
    std::shared_lock lock(mu_);
    std::vector<std::shared_ptr<TrainingJob>> out;
    for (const auto& [id, j] : jobs_) out.push_back(j);
    return out;
  }

  /// Validates and enqueues. On success `job_out` receives the new job.
  SubmitError submit(JobRequest request, std::shared_ptr<TrainingJob>& job_out, std::string& detail) {
    if (!store_) {
      detail = "no dataset loaded";
      return SubmitError::InvalidTables;
    }
    if (request.name.empty() || request.name.find_first_of("/\\ \t") != std::string::npos) {
      detail = "sketch name must be non-empty without slashes or spaces";
      return SubmitError::InvalidParams;
    }
    if (request.config.tables.empty() || request.config.tables.size() > request.config.max_tables) {
      detail = "select between 1 and " + std::to_string(request.config.max_tables) + " tables";
      return SubmitError::InvalidTables;
    }
    for (const auto& t : request.config.tables)
      if (!store_->schema().find_table(t)) {
        detail = "unknown table " + t;
        return SubmitError::InvalidTables;
      }
    if (!store_->schema().is_connected(request.config.tables)) {
      detail = "selected tables do not form a connected FK subgraph";
      return SubmitError::InvalidTables;
    }
    try {
      request.config.train.validate();
    } catch (const Error& e) {
      detail = e.detail();
      return SubmitError::InvalidParams;
    }
    if (request.config.num_queries == 0 || request.config.sample_size == 0) {
      detail = "queries and samples must be >= 1";
      return SubmitError::InvalidParams;
    }
    {
      std::unique_lock lock(mu_);
      if (sketches_.count(request.name) || reserved_.count(request.name)) {
        detail = "name '" + request.name + "' is taken";
        return SubmitError::NameTaken;
      }
      reserved_.insert(request.name);
      job_out = std::make_shared<TrainingJob>("job-" + std::to_string(++next_id_), std::move(request));
      jobs_[job_out->id()] = job_out;
    }
    {
      std::lock_guard lock(queue_mu_);
      queue_.push_back(job_out);
    }
    queue_cv_.notify_one();
    return SubmitError::None;
  }

  /// Cooperative cancel. A job still waiting in the queue is removed and
  /// marked cancelled at once; a running job stops at its next batch boundary.
  bool cancel(const std::string& id) {
    auto j = job(id);
    if (!j) return false;
    j->request_cancel();
    bool dequeued = false;
    {
      std::lock_guard lock(queue_mu_);
      auto it = std::find(queue_.begin(), queue_.end(), j);
      if (it != queue_.end()) {
        queue_.erase(it);
        dequeued = true;
      }
    }
    if (dequeued) {
      {
        std::unique_lock lock(mu_);
        reserved_.erase(j->request().name);
      }
      j->update(SketchPhase::Cancelled, 0);
    }
    return true;
  }

 private:
  void load_persisted() {
    namespace fs = std::filesystem;
    const fs::path dir(*options_.sketch_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
      if (entry.path().extension() != ".dsk") continue;
      try {
        sketches_[entry.path().stem().string()] = std::make_shared<const DeepSketch>(load_sketch(entry.path().string()));
      } catch (const Error&) {
        // unreadable files are skipped; they never enter the registry
      }
    }
  }

  static void lower_thread_priority(int nice) {
    if (nice > 0) setpriority(PRIO_PROCESS, static_cast<id_t>(syscall(SYS_gettid)), nice);
  }

  void worker_loop() {
    lower_thread_priority(options_.worker_nice);
    for (;;) {
      std::shared_ptr<TrainingJob> job;
      {
        std::unique_lock lock(queue_mu_);
        queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_ && queue_.empty()) return;
        job = queue_.front();
        queue_.pop_front();
      }
      run(*job);
    }
  }

  void run(TrainingJob& job) {
    const auto& req = job.request();
    auto release = [&] {
      std::unique_lock lock(mu_);
      reserved_.erase(req.name);
    };
    if (job.cancel_requested()) {
      release();
      job.update(SketchPhase::Cancelled, 0);
      return;
    }
    try {
      auto config = req.config;
      if (options_.clock) config.created_at = options_.clock();
      auto result = create_sketch(*store_, config, [&](const ProgressEvent& e) {
        // Done is reported only after publishing
        if (e.phase != SketchPhase::Done) job.update(e.phase, e.fraction, e.epoch);
        return !job.cancel_requested();
      });
      auto sketch = std::make_shared<const DeepSketch>(std::move(result.sketch));
      if (options_.sketch_dir)
        save_sketch(*sketch, (std::filesystem::path(*options_.sketch_dir) / (req.name + ".dsk")).string());
      {
        std::unique_lock lock(mu_);
        reserved_.erase(req.name);
        sketches_[req.name] = std::move(sketch);
      }
      job.update(SketchPhase::Done, 1.0);
    } catch (const Error& e) {
      release();
      job.update(e.code() == ErrorCode::Cancelled ? SketchPhase::Cancelled : SketchPhase::Failed, 0, std::nullopt,
                 e.code() == ErrorCode::Cancelled ? std::string{} : std::string(e.what()));
    } catch (const std::exception& e) {
      release();
      job.update(SketchPhase::Failed, 0, std::nullopt, e.what());
    }
  }

  std::shared_ptr<const TableStore> store_;
  RegistryOptions options_;

  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const DeepSketch>> sketches_;
  std::set<std::string> reserved_;  // names of queued/running jobs
  std::map<std::string, std::shared_ptr<TrainingJob>> jobs_;
  std::uint64_t next_id_ = 0;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<std::shared_ptr<TrainingJob>> queue_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace deepsketch::service
