#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "deepsketch/mscn/train.hpp"
#include "deepsketch/queryir/sql.hpp"
#include "mscn_oracles.hpp"
#include "test_support.hpp"

using namespace deepsketch;
using namespace deepsketch::mscn;

namespace {

Matrix<double> random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform01();
  return m;
}

SetModule<double> random_module(Rng& rng, std::size_t in, std::size_t h) {
  SetModule<double> m;
  m.layer1.resize(in, h);
  m.layer2.resize(h, h);
  m.layer1.init(rng);
  m.layer2.init(rng);
  return m;
}

struct Corpus {
  TableStore store = testsupport::imdb_mini();
  SampleSet samples;
  EncodingVocabulary vocab;
  std::vector<Query> queries;
  std::vector<LabeledSample> labeled;

  Corpus(std::size_t n, std::size_t s, std::uint64_t seed = 5) {
    samples = draw_samples(store, s, seed);
    GeneratorConfig gc;
    gc.max_joins = 2;
    gc.seed = seed;
    queries = generate_queries(store.schema(), store, gc, n);
    std::vector<std::uint64_t> cards;
    for (const auto& q : queries) cards.push_back(true_cardinality(store, q));
    vocab = build_vocabulary(store.schema(), store, cards, s);
    for (std::size_t i = 0; i < n; ++i)
      labeled.push_back(make_labeled_sample(vocab, featurize(vocab, queries[i], store, samples), cards[i]));
  }

  std::vector<FeaturizedQuery> features() const {
    std::vector<FeaturizedQuery> f;
    for (const auto& l : labeled) f.push_back(l.features);
    return f;
  }
  std::vector<double> labels() const {
    std::vector<double> y;
    for (const auto& l : labeled) y.push_back(l.label);
    return y;
  }
};

}  // namespace

TEST(SetModule, SingletonDuplicateAndEmptyPooling) {
  Rng rng(1);
  const std::size_t in = 5, h = 6;
  auto m = random_module(rng, in, h);
  const auto x = random_matrix(rng, 1, in);

  // reference MLP output for x, computed directly
  Matrix<double> ref = ((x * m.layer1.weight).rowwise() + m.layer1.bias).cwiseMax(0.0);
  ref = ((ref * m.layer2.weight).rowwise() + m.layer2.bias).cwiseMax(0.0);

  // batch 0: {x}; batch 1: {x, x}; batch 2: {}
  Matrix<double> feats = Matrix<double>::Zero(6, in);
  Vector<double> mask = Vector<double>::Zero(6);
  feats.row(0) = x;
  mask(0) = 1;
  feats.row(2) = x;
  feats.row(3) = x;
  mask(2) = mask(3) = 1;
  const auto pooled = set_module_pool(m, feats, mask, 3, 2);
  ASSERT_EQ(pooled.rows(), 3);
  ASSERT_EQ(pooled.cols(), static_cast<Eigen::Index>(h));
  EXPECT_TRUE(pooled.row(0).isApprox(ref.row(0), 1e-14) || ref.norm() == 0);
  EXPECT_EQ(pooled.row(0), pooled.row(1));  // exact: (v + v) / 2 == v
  EXPECT_EQ(pooled.row(2).squaredNorm(), 0.0);

  Vector<double> bad = Vector<double>::Zero(5);
  EXPECT_DS_ERROR(set_module_pool(m, feats, bad, 3, 2), ErrorCode::ShapeMismatch);
  Matrix<double> wrong = Matrix<double>::Zero(6, in + 1);
  EXPECT_DS_ERROR(set_module_pool(m, wrong, mask, 3, 2), ErrorCode::ShapeMismatch);
}

TEST(Forward, OutputsInOpenUnitIntervalAndEmptySets) {
  Corpus c(64, 16);
  auto p = MscnParams<double>::for_vocabulary(c.vocab, 16, 3);
  const auto fqs = c.features();
  const auto y = mscn_forward(p, make_batch<double>(fqs, c.vocab));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    EXPECT_GT(y(i), 0.0);
    EXPECT_LT(y(i), 1.0);
  }
  // single-table queries have an empty join set (and maybe empty predicates)
  auto q = parse_query("SELECT COUNT(*) FROM keyword", c.store.schema());
  const auto f = featurize(c.vocab, q, c.store, c.samples);
  const double est = predict(p, c.vocab, f);
  EXPECT_TRUE(std::isfinite(est));
  EXPECT_EQ(est, predict(p, c.vocab, f));

  // identical queries in a batch give identical predictions
  std::vector<FeaturizedQuery> same(5, fqs[7]);
  const auto ys = mscn_forward(p, make_batch<double>(same, c.vocab));
  for (Eigen::Index i = 1; i < ys.size(); ++i) EXPECT_EQ(ys(i), ys(0));

  auto small = MscnParams<double>::zeros(3, 3, 3, 4);
  EXPECT_DS_ERROR(mscn_forward(small, make_batch<double>(fqs, c.vocab)), ErrorCode::ShapeMismatch);
  EXPECT_DS_ERROR(predict(small, c.vocab, f), ErrorCode::ShapeMismatch);
}

TEST(Forward, PermutingSetRowsKeepsPrediction) {
  Corpus c(100, 32);
  auto p = MscnParams<double>::for_vocabulary(c.vocab, 32, 4);
  const auto fqs = c.features();
  const auto batch = make_batch<double>(fqs, c.vocab);
  const auto y = mscn_forward(p, batch);
  const auto yr = mscn_forward(p, testsupport::reverse_set_rows(batch, fqs));
  for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_NEAR(yr(i), y(i), 1e-12 * std::abs(y(i)));
}

TEST(QError, Examples) {
  EXPECT_DOUBLE_EQ(qerror(500, 500), 1.0);
  EXPECT_DOUBLE_EQ(qerror(2, 8), 4.0);
  EXPECT_DOUBLE_EQ(qerror(8, 2), 4.0);
  EXPECT_DOUBLE_EQ(qerror(0, 10, 1), 10.0);
  EXPECT_DOUBLE_EQ(qerror(0, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(qerror(0, 0.5, 1), 1.0);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform01() * 100, b = rng.uniform01() * 100;
    EXPECT_EQ(qerror(a, b), qerror(b, a));
    EXPECT_GE(qerror(a, b), 1.0);
    EXPECT_EQ(qerror(a, b) == 1.0, std::max(a, 1.0) == std::max(b, 1.0));
  }
}

TEST(QError, SummaryColumnsAndNearestRank) {
  std::vector<std::string> cols(std::begin(QErrorSummary::kColumns), std::end(QErrorSummary::kColumns));
  EXPECT_EQ(cols, (std::vector<std::string>{"median", "90th", "95th", "99th", "max", "mean"}));
  std::vector<double> q(100);
  std::iota(q.begin(), q.end(), 1.0);
  const auto s = summarize_qerrors(q);
  EXPECT_EQ(s.median, 50);
  EXPECT_EQ(s.p90, 90);
  EXPECT_EQ(s.p95, 95);
  EXPECT_EQ(s.p99, 99);
  EXPECT_EQ(s.max, 100);
  EXPECT_DOUBLE_EQ(s.mean, 50.5);
  const auto ten = summarize_qerrors({10, 9, 8, 7, 6, 5, 4, 3, 2, 1});
  EXPECT_EQ(ten.p90, 9);
  EXPECT_EQ(ten.median, 5);
  for (double v : summarize_qerrors(std::vector<double>(37, 1.0)).values()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(to_json(s).size(), 6U);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  const auto store = testsupport::imdb_mini(3, 40, 12, 80);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = testsupport::gradient_trial(store, seed);
    EXPECT_GT(r.checked, 100U);
    EXPECT_GT(r.nonzero, r.checked / 10) << "seed " << seed;
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Loss, QErrorGradientBranches) {
  const double L = std::log1p(1000.0);
  auto loss_at = [&](double y, double t) { return qerror(std::expm1(y * L), t, 1.0); };
  for (double y : {0.2, 0.5, 0.8}) {
    const double t = 37;
    const double numeric = (loss_at(y + 1e-6, t) - loss_at(y - 1e-6, t)) / 2e-6;
    EXPECT_NEAR(qerror_grad(y, t, L, 1.0), numeric, 1e-5 * std::abs(numeric));
  }
  EXPECT_EQ(qerror_grad(0.05, 37, L, 1.0), 0.0);  // clamped to floor
  EXPECT_EQ(qerror_grad(std::log1p(37.0) / L, std::expm1(std::log1p(37.0)), L, 1.0), 0.0);
}

TEST(Loss, ExactPredictionsGiveUnitLossAndZeroGradients) {
  Corpus c(8, 16);
  auto p = MscnParams<double>::for_vocabulary(c.vocab, 8, 2);
  const auto fqs = c.features();
  const auto batch = make_batch<double>(fqs, c.vocab);
  const auto y = mscn_forward(p, batch);
  // labels chosen so that denormalized truth equals the prediction exactly
  std::vector<double> labels(y.data(), y.data() + y.size());
  const auto r = loss_and_grads(p, batch, labels, c.vocab);
  EXPECT_DOUBLE_EQ(r.loss, 1.0);
  const auto zeros = p.zeros_like();
  EXPECT_EQ(r.grads, zeros);
}

TEST(Loss, DuplicatedBatchIsInvariant) {
  Corpus c(12, 16);
  auto p = MscnParams<double>::for_vocabulary(c.vocab, 8, 9);
  auto fqs = c.features();
  auto labels = c.labels();
  const auto r1 = loss_and_grads(p, make_batch<double>(fqs, c.vocab), labels, c.vocab);
  const auto n = fqs.size();
  for (std::size_t i = 0; i < n; ++i) {
    fqs.push_back(fqs[i]);
    labels.push_back(labels[i]);
  }
  const auto r2 = loss_and_grads(p, make_batch<double>(fqs, c.vocab), labels, c.vocab);
  EXPECT_NEAR(r2.loss, r1.loss, 1e-12 * r1.loss);
  std::vector<double> g1, g2;
  auto a = r1.grads, b = r2.grads;
  a.for_each_tensor([&](double* d, std::size_t k) { g1.insert(g1.end(), d, d + k); });
  b.for_each_tensor([&](double* d, std::size_t k) { g2.insert(g2.end(), d, d + k); });
  ASSERT_EQ(g1.size(), g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g2[i], g1[i], 1e-10 * (1 + std::abs(g1[i])));

  std::vector<double> short_labels(3, 0.5);
  EXPECT_DS_ERROR(loss_and_grads(p, make_batch<double>(fqs, c.vocab), short_labels, c.vocab), ErrorCode::ShapeMismatch);
}

TEST(Adam, FirstStepMovesEachWeightByLearningRate) {
  // with bias correction the first Adam step is lr * sign(g) (up to epsilon)
  auto p = MscnParams<double>::zeros(2, 2, 2, 2);
  auto g = p.zeros_like();
  g.out2.bias(0) = 0.3;
  g.out1.weight(1, 1) = -5;
  Adam<double> adam(p, {});
  adam.step(p, g);
  EXPECT_NEAR(p.out2.bias(0), -1e-3, 1e-10);
  EXPECT_NEAR(p.out1.weight(1, 1), 1e-3, 1e-10);
  EXPECT_EQ(p.tables.layer1.weight(0, 0), 0.0);
  EXPECT_EQ(adam.steps(), 1U);
}

TEST(Train, ConfigValidationAndEmptyCorpus) {
  Corpus c(4, 8);
  auto p = MscnParams<double>::for_vocabulary(c.vocab, 4, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_DS_ERROR(train(p, c.labeled, c.vocab, cfg), ErrorCode::InvalidConfig);
  cfg = {};
  cfg.validation_fraction = 1.0;
  EXPECT_DS_ERROR(train(p, c.labeled, c.vocab, cfg), ErrorCode::InvalidConfig);
  cfg = {};
  EXPECT_DS_ERROR(train(p, std::vector<LabeledSample>{}, c.vocab, cfg), ErrorCode::EmptyCorpus);
}

TEST(Train, OneEpochWithLargeBatchIsOneStep) {
  Corpus c(30, 16);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1000;
  auto r = train(MscnParams<double>::for_vocabulary(c.vocab, 8, 1), c.labeled, c.vocab, cfg);
  EXPECT_EQ(r.report.optimizer_steps, 1U);
  EXPECT_EQ(r.report.epochs.size(), 1U);
  EXPECT_EQ(r.report.train_size + r.report.validation_size, 30U);
  EXPECT_EQ(r.report.validation_size, 3U);
}

TEST(Train, MemorizesSmallCorpus) {
  Corpus c(50, 32);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 4;
  cfg.hidden = 64;
  cfg.seed = 11;
  std::vector<double> per_epoch;
  TrainObserver obs;
  obs.on_epoch = [&](const EpochMetrics& m) { per_epoch.push_back(m.train_qerror); };
  auto r = train(MscnParams<float>::for_vocabulary(c.vocab, 64, 11), c.labeled, c.vocab, cfg, obs);
  ASSERT_EQ(per_epoch.size(), 25U);
  EXPECT_LT(per_epoch.back(), per_epoch.front() / 2) << per_epoch.front() << " -> " << per_epoch.back();
  // monotone-ish: the last five epochs average below the first five
  const double head = std::accumulate(per_epoch.begin(), per_epoch.begin() + 5, 0.0);
  const double tail = std::accumulate(per_epoch.end() - 5, per_epoch.end(), 0.0);
  EXPECT_LT(tail, head);
  EXPECT_EQ(r.report.to_json_lines().size() > 0, true);
  EXPECT_GE(r.report.best_epoch, 1);
}

TEST(Train, SameSeedSameParameters) {
  Corpus c(40, 16);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 4;
  auto a = train(MscnParams<float>::for_vocabulary(c.vocab, 16, 4), c.labeled, c.vocab, cfg);
  auto b = train(MscnParams<float>::for_vocabulary(c.vocab, 16, 4), c.labeled, c.vocab, cfg);
  EXPECT_EQ(a.params, b.params);
  cfg.seed = 5;
  auto d = train(MscnParams<float>::for_vocabulary(c.vocab, 16, 4), c.labeled, c.vocab, cfg);
  EXPECT_FALSE(a.params == d.params);
}

TEST(Train, CancellationStopsAtBatchBoundary) {
  Corpus c(40, 16);
  TrainConfig cfg;
  cfg.batch_size = 4;
  int polls = 0;
  TrainObserver obs;
  obs.should_stop = [&] { return ++polls > 3; };
  EXPECT_DS_ERROR(train(MscnParams<float>::for_vocabulary(c.vocab, 8, 1), c.labeled, c.vocab, cfg, obs),
                  ErrorCode::Cancelled);
  EXPECT_EQ(polls, 4);
}

TEST(Train, ToySingleTableMedianPredicate) {
  // one table, c uniform on [0, 1000); train on random range/equality predicates
  const std::size_t n = 10000;
  TableDef def{"t", {{"id", ColumnKind::Integer, false}, {"c", ColumnKind::Integer, false}}, "id"};
  Rng rng(8);
  std::vector<std::vector<std::optional<double>>> rows;
  for (std::size_t r = 0; r < n; ++r)
    rows.push_back({static_cast<double>(r + 1), static_cast<double>(rng.uniform_int(0, 999))});
  TableStore store(SchemaCatalog({def}, {}), {Table::from_rows(def, rows)});
  const auto samples = draw_samples(store, 200, 8);
  std::vector<Query> qs;
  std::vector<std::uint64_t> cards;
  for (int i = 0; i < 1000; ++i) {
    const auto op = static_cast<CmpOp>(rng.uniform_int(0, 2));
    Query q({"t"}, {}, {{"t", "c", op, static_cast<double>(rng.uniform_int(0, 999))}});
    cards.push_back(true_cardinality(store, q));
    qs.push_back(std::move(q));
  }
  const auto vocab = build_vocabulary(store.schema(), store, cards, 200);
  std::vector<LabeledSample> corpus;
  for (std::size_t i = 0; i < qs.size(); ++i)
    corpus.push_back(make_labeled_sample(vocab, featurize(vocab, qs[i], store, samples), cards[i]));
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 32;
  cfg.hidden = 64;
  cfg.seed = 8;
  auto r = train(MscnParams<float>::for_vocabulary(vocab, 64, 8), corpus, vocab, cfg);

  std::vector<double> cs;
  for (const auto& row : rows) cs.push_back(*row[1]);
  std::nth_element(cs.begin(), cs.begin() + static_cast<long>(n / 2), cs.end());
  const double median = cs[n / 2];
  Query probe({"t"}, {}, {{"t", "c", CmpOp::Lt, median}});
  const double est = predict(r.params, vocab, featurize(vocab, probe, store, samples));
  EXPECT_LT(qerror(est, n / 2.0), 2.0) << "estimate " << est;
}
