#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepsketch/featurizer/featurize.hpp"
#include "deepsketch/mscn/adam.hpp"
#include "deepsketch/mscn/loss.hpp"
#include "deepsketch/mscn/model.hpp"
#include "deepsketch/mscn/qerror.hpp"
#include "deepsketch/random.hpp"

namespace deepsketch::mscn {

struct TrainConfig {
  int epochs = 25;
  std::size_t batch_size = 128;
  AdamConfig adam;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  double qerror_floor = 1.0;
  std::size_t hidden = kDefaultHidden;
  LossKind loss = LossKind::MeanQError;

  void validate() const {
    if (epochs < 1) fail(ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorCode::InvalidConfig, "batch size must be >= 1");
    if (!(validation_fraction > 0 && validation_fraction < 1))
      fail(ErrorCode::InvalidConfig, "validation fraction must be in (0, 1)");
    if (qerror_floor < 1) fail(ErrorCode::InvalidConfig, "q-error floor must be >= 1");
    if (hidden < 1) fail(ErrorCode::InvalidConfig, "hidden width must be >= 1");
  }

  /// Stable digest of every field that influences the trained weights.
  std::uint64_t hash() const {
    std::string s = std::to_string(epochs) + "|" + std::to_string(batch_size) + "|" +
                    std::to_string(adam.learning_rate) + "|" + std::to_string(adam.beta1) + "|" +
                    std::to_string(adam.beta2) + "|" + std::to_string(adam.epsilon) + "|" +
                    std::to_string(validation_fraction) + "|" + std::to_string(seed) + "|" +
                    std::to_string(qerror_floor) + "|" + std::to_string(hidden) + "|" +
                    std::to_string(static_cast<int>(loss));
    return fnv1a64(s);
  }
};

struct LabeledSample {
  FeaturizedQuery features;
  double label = 0;  // log1p(card) / label_log_max
  std::uint64_t cardinality = 0;
};

inline LabeledSample make_labeled_sample(const EncodingVocabulary& v, FeaturizedQuery f, std::uint64_t card) {
  return {std::move(f), normalize_label(v, static_cast<double>(card)), card};
}

struct EpochMetrics {
  int epoch = 0;
  double train_qerror = 0;
  double validation_qerror = 0;
  double seconds = 0;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"train_qerror", m.train_qerror},
          {"validation_qerror", m.validation_qerror},
          {"seconds", m.seconds}};
}

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  QErrorSummary validation;  // of the returned (best-validation) parameters
  int best_epoch = 0;
  std::size_t optimizer_steps = 0;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;

  /// One JSON object per epoch, newline separated.
  std::string to_json_lines() const {
    std::string out;
    for (const auto& e : epochs) out += to_json(e).dump() + "\n";
    return out;
  }
};

struct TrainObserver {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(double)> on_progress;  // fraction of all batches done
  std::function<bool()> should_stop;        // polled at every batch boundary
};

template <typename Scalar>
struct TrainResult {
  MscnParams<Scalar> params;
  TrainReport report;
};

/// Per-query q-errors of `params` on `samples` (forward passes in batches).
template <typename Scalar>
std::vector<double> evaluate_qerrors(const MscnParams<Scalar>& params, const std::vector<const LabeledSample*>& samples,
                                     const EncodingVocabulary& vocab, std::size_t batch_size, double floor) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto end = std::min(samples.size(), start + batch_size);
    std::vector<const FeaturizedQuery*> feats;
    for (auto i = start; i < end; ++i) feats.push_back(&samples[i]->features);
    const auto batch = make_batch<Scalar>(std::span<const FeaturizedQuery* const>(feats), vocab);
    const auto y = mscn_forward(params, batch);
    for (auto i = start; i < end; ++i)
      out.push_back(qerror(denormalize_label(vocab, static_cast<double>(y(static_cast<Eigen::Index>(i - start)))),
                           static_cast<double>(samples[i]->cardinality), floor));
  }
  return out;
}

/// Mini-batch Adam training on a seeded train/validation split. Returns the
/// parameters with the lowest mean validation q-error seen at an epoch end.
template <typename Scalar>
TrainResult<Scalar> train(MscnParams<Scalar> params, const std::vector<LabeledSample>& corpus,
                          const EncodingVocabulary& vocab, const TrainConfig& config,
                          const TrainObserver& observer = {}) {
  config.validate();
  if (corpus.empty()) fail(ErrorCode::EmptyCorpus, "no training samples");
  Rng rng(derive_seed(config.seed, "train-split"));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_below(i)]);

  std::vector<const LabeledSample*> train_set, validation_set;
  if (corpus.size() == 1) {
    train_set = validation_set = {&corpus[0]};
  } else {
    auto n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(corpus.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, corpus.size() - 1);
    for (std::size_t i = 0; i < order.size(); ++i)
      (i < n_val ? validation_set : train_set).push_back(&corpus[order[i]]);
  }

  TrainResult<Scalar> result;
  result.report.train_size = train_set.size();
  result.report.validation_size = validation_set.size();
  Adam<Scalar> adam(params, config.adam);
  MscnParams<Scalar> best = params;
  double best_val = std::numeric_limits<double>::infinity();
  const std::size_t batches_per_epoch = (train_set.size() + config.batch_size - 1) / config.batch_size;
  const double total_batches = static_cast<double>(batches_per_epoch) * config.epochs;
  std::size_t done_batches = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = train_set.size(); i > 1; --i) std::swap(train_set[i - 1], train_set[rng.uniform_below(i)]);
    double qsum = 0;
    for (std::size_t start = 0; start < train_set.size(); start += config.batch_size) {
      if (observer.should_stop && observer.should_stop()) fail(ErrorCode::Cancelled, "training cancelled");
      const auto end = std::min(train_set.size(), start + config.batch_size);
      std::vector<const FeaturizedQuery*> feats;
      std::vector<double> labels;
      for (auto i = start; i < end; ++i) {
        feats.push_back(&train_set[i]->features);
        labels.push_back(train_set[i]->label);
      }
      const auto batch = make_batch<Scalar>(std::span<const FeaturizedQuery* const>(feats), vocab);
      auto r = loss_and_grads(params, batch, labels, vocab, config.loss, config.qerror_floor);
      for (double q : r.qerrors) qsum += q;
      adam.step(params, r.grads);
      ++done_batches;
      if (observer.on_progress) observer.on_progress(static_cast<double>(done_batches) / total_batches);
    }
    const auto val_q = evaluate_qerrors(params, validation_set, vocab, config.batch_size, config.qerror_floor);
    const double val_mean = std::accumulate(val_q.begin(), val_q.end(), 0.0) / static_cast<double>(val_q.size());
    EpochMetrics m;
    m.epoch = epoch;
    m.train_qerror = qsum / static_cast<double>(train_set.size());
    m.validation_qerror = val_mean;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(m);
    if (val_mean < best_val) {
      best_val = val_mean;
      best = params;
      result.report.best_epoch = epoch;
    }
    if (observer.on_epoch) observer.on_epoch(m);
  }
  result.report.optimizer_steps = adam.steps();
  result.report.validation =
      summarize_qerrors(evaluate_qerrors(best, validation_set, vocab, config.batch_size, config.qerror_floor));
  result.params = std::move(best);
  return result;
}

/// Estimated cardinality (>= 0) for one featurized query.
template <typename Scalar>
double predict(const MscnParams<Scalar>& params, const EncodingVocabulary& vocab, const FeaturizedQuery& f) {
  const FeaturizedQuery* one[] = {&f};
  const auto batch = make_batch<Scalar>(std::span<const FeaturizedQuery* const>(one, 1), vocab);
  if (static_cast<std::size_t>(batch.tables.features.cols()) != params.table_dim() ||
      static_cast<std::size_t>(batch.joins.features.cols()) != params.join_dim() ||
      static_cast<std::size_t>(batch.predicates.features.cols()) != params.predicate_dim())
    fail(ErrorCode::ShapeMismatch, "featurized query does not match model input dimensions");
  const auto y = mscn_forward(params, batch);
  return denormalize_label(vocab, static_cast<double>(y(0)));
}

}  // namespace deepsketch::mscn
