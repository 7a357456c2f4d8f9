#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deepsketch/error.hpp"
#include "deepsketch/featurizer/featurize.hpp"
#include "deepsketch/featurizer/vocabulary.hpp"
#include "deepsketch/random.hpp"

namespace deepsketch::mscn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline constexpr std::size_t kDefaultHidden = 256;

/// Fully connected layer y = x W + b, W stored (in x out).
template <typename Scalar>
struct Dense {
  Matrix<Scalar> weight;
  RowVector<Scalar> bias;

  void resize(std::size_t in, std::size_t out) {
    weight.setZero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
    bias.setZero(static_cast<Eigen::Index>(out));
  }
  // PyTorch's nn.Linear default: U(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(1, weight.rows())));
    for (Eigen::Index i = 0; i < weight.size(); ++i)
      weight.data()[i] = static_cast<Scalar>((2 * rng.uniform01() - 1) * bound);
    for (Eigen::Index i = 0; i < bias.size(); ++i) bias[i] = static_cast<Scalar>((2 * rng.uniform01() - 1) * bound);
  }

  friend bool operator==(const Dense& a, const Dense& b) { return a.weight == b.weight && a.bias == b.bias; }
};

/// Two-layer per-element MLP shared across all elements of one set.
template <typename Scalar>
struct SetModule {
  Dense<Scalar> layer1;
  Dense<Scalar> layer2;
  friend bool operator==(const SetModule&, const SetModule&) = default;
};

/// Weights of the multi-set network: one set module each for tables, joins
/// and predicates, and an output MLP over the concatenated pooled vectors.
/// Also used as the gradient container.
template <typename Scalar>
struct MscnParams {
  std::size_t hidden = kDefaultHidden;
  SetModule<Scalar> tables;
  SetModule<Scalar> joins;
  SetModule<Scalar> predicates;
  Dense<Scalar> out1;  // 3h -> h
  Dense<Scalar> out2;  // h -> 1

  static MscnParams zeros(std::size_t table_dim, std::size_t join_dim, std::size_t predicate_dim,
                          std::size_t hidden = kDefaultHidden) {
    MscnParams p;
    p.hidden = hidden;
    p.tables.layer1.resize(table_dim, hidden);
    p.tables.layer2.resize(hidden, hidden);
    p.joins.layer1.resize(join_dim, hidden);
    p.joins.layer2.resize(hidden, hidden);
    p.predicates.layer1.resize(predicate_dim, hidden);
    p.predicates.layer2.resize(hidden, hidden);
    p.out1.resize(3 * hidden, hidden);
    p.out2.resize(hidden, 1);
    return p;
  }

  static MscnParams for_vocabulary(const EncodingVocabulary& v, std::size_t hidden, std::uint64_t seed) {
    auto p = zeros(v.table_feature_dim(), v.join_feature_dim(), v.predicate_feature_dim(), hidden);
    Rng rng(derive_seed(seed, "mscn-init"));
    p.for_each_layer([&](Dense<Scalar>& d) { d.init(rng); });
    return p;
  }

  MscnParams zeros_like() const {
    MscnParams p = *this;
    p.for_each_layer([](Dense<Scalar>& d) {
      d.weight.setZero();
      d.bias.setZero();
    });
    return p;
  }

  /// Visits layers in a fixed order (serialization and optimizer rely on it).
  template <typename F>
  void for_each_layer(F&& f) {
    for (auto* m : {&tables, &joins, &predicates}) {
      f(m->layer1);
      f(m->layer2);
    }
    f(out1);
    f(out2);
  }
  template <typename F>
  void for_each_layer(F&& f) const {
    for (const auto* m : {&tables, &joins, &predicates}) {
      f(m->layer1);
      f(m->layer2);
    }
    f(out1);
    f(out2);
  }

  /// Visits every parameter tensor (weight then bias per layer) as a flat span.
  template <typename F>
  void for_each_tensor(F&& f) {
    for_each_layer([&](Dense<Scalar>& d) {
      f(d.weight.data(), static_cast<std::size_t>(d.weight.size()));
      f(d.bias.data(), static_cast<std::size_t>(d.bias.size()));
    });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_layer([&](const Dense<Scalar>& d) { n += static_cast<std::size_t>(d.weight.size() + d.bias.size()); });
    return n;
  }

  std::size_t table_dim() const { return static_cast<std::size_t>(tables.layer1.weight.rows()); }
  std::size_t join_dim() const { return static_cast<std::size_t>(joins.layer1.weight.rows()); }
  std::size_t predicate_dim() const { return static_cast<std::size_t>(predicates.layer1.weight.rows()); }

  template <typename Other>
  MscnParams<Other> cast() const {
    MscnParams<Other> p = MscnParams<Other>::zeros(table_dim(), join_dim(), predicate_dim(), hidden);
    auto copy = [](const Dense<Scalar>& from, Dense<Other>& to) {
      to.weight = from.weight.template cast<Other>();
      to.bias = from.bias.template cast<Other>();
    };
    copy(tables.layer1, p.tables.layer1);
    copy(tables.layer2, p.tables.layer2);
    copy(joins.layer1, p.joins.layer1);
    copy(joins.layer2, p.joins.layer2);
    copy(predicates.layer1, p.predicates.layer1);
    copy(predicates.layer2, p.predicates.layer2);
    copy(out1, p.out1);
    copy(out2, p.out2);
    return p;
  }

  friend bool operator==(const MscnParams&, const MscnParams&) = default;
};

/// Intermediate activations of one set module, kept for the backward pass.
template <typename Scalar>
struct SetActivations {
  Matrix<Scalar> z1, z2;  // pre-activations
  Matrix<Scalar> h1, h2;  // post-ReLU
  Matrix<Scalar> pooled;  // batch x hidden
  Vector<Scalar> inv_count;
};

template <typename Scalar>
struct ForwardCache {
  SetActivations<Scalar> tables, joins, predicates;
  Matrix<Scalar> concat;  // batch x 3h
  Matrix<Scalar> z3, h3;  // batch x h
  Vector<Scalar> logits;
  Vector<Scalar> output;  // sigmoid(logits)
};

namespace detail {

template <typename Scalar>
void check_shape(const Dense<Scalar>& layer, Eigen::Index cols, const char* what) {
  if (layer.weight.rows() != cols)
    fail(ErrorCode::ShapeMismatch, std::string(what) + ": features have " + std::to_string(cols) +
                                       " columns, layer expects " + std::to_string(layer.weight.rows()));
}

template <typename Scalar>
void relu_inplace(const Matrix<Scalar>& z, Matrix<Scalar>& h) {
  h = z.cwiseMax(Scalar(0));
}

template <typename Scalar>
void check_finite(const Matrix<Scalar>& m, const char* where) {
#ifndef NDEBUG
  if (!m.allFinite()) fail(ErrorCode::NonFiniteValue, where);
#else
  (void)m;
  (void)where;
#endif
}

}  // namespace detail

/// Shared MLP applied row-wise, then masked mean over each query's rows.
/// A query whose mask is all zero pools to the zero vector.
template <typename Scalar>
void set_module_forward(const SetModule<Scalar>& m, const Matrix<Scalar>& features, const Vector<Scalar>& mask,
                        std::size_t batch, std::size_t max_n, SetActivations<Scalar>& act) {
  detail::check_shape(m.layer1, features.cols(), "set module");
  if (static_cast<std::size_t>(features.rows()) != batch * max_n || mask.size() != features.rows())
    fail(ErrorCode::ShapeMismatch, "set rows do not match batch x max set size");
  act.z1.noalias() = features * m.layer1.weight;
  act.z1.rowwise() += m.layer1.bias;
  detail::relu_inplace(act.z1, act.h1);
  act.z2.noalias() = act.h1 * m.layer2.weight;
  act.z2.rowwise() += m.layer2.bias;
  detail::relu_inplace(act.z2, act.h2);
  const auto h = m.layer2.weight.cols();
  act.pooled.setZero(static_cast<Eigen::Index>(batch), h);
  act.inv_count.setZero(static_cast<Eigen::Index>(batch));
  // Sum in double: for float activations the few-row sums are exact, so the
  // pooled vector does not depend on the order of the set's rows.
  Eigen::RowVectorXd sum(h);
  for (std::size_t b = 0; b < batch; ++b) {
    sum.setZero();
    double count = 0;
    for (std::size_t i = 0; i < max_n; ++i) {
      const auto row = static_cast<Eigen::Index>(b * max_n + i);
      if (mask(row) != Scalar(0)) {
        sum += static_cast<double>(mask(row)) * act.h2.row(row).template cast<double>();
        count += static_cast<double>(mask(row));
      }
    }
    if (count > 0) {
      act.inv_count(static_cast<Eigen::Index>(b)) = static_cast<Scalar>(1.0 / count);
      act.pooled.row(static_cast<Eigen::Index>(b)) = (sum / count).template cast<Scalar>();
    }
  }
}

/// Convenience wrapper returning only the pooled vectors (batch x hidden).
template <typename Scalar>
Matrix<Scalar> set_module_pool(const SetModule<Scalar>& m, const Matrix<Scalar>& features, const Vector<Scalar>& mask,
                               std::size_t batch, std::size_t max_n) {
  SetActivations<Scalar> act;
  set_module_forward(m, features, mask, batch, max_n, act);
  return act.pooled;
}

template <typename Scalar>
void mscn_forward(const MscnParams<Scalar>& p, const FeaturizedBatch<Scalar>& batch, ForwardCache<Scalar>& c) {
  const auto B = batch.size;
  set_module_forward(p.tables, batch.tables.features, batch.tables.mask, B, batch.tables.max_n, c.tables);
  set_module_forward(p.joins, batch.joins.features, batch.joins.mask, B, batch.joins.max_n, c.joins);
  set_module_forward(p.predicates, batch.predicates.features, batch.predicates.mask, B, batch.predicates.max_n,
                     c.predicates);
  const auto h = static_cast<Eigen::Index>(p.hidden);
  c.concat.resize(static_cast<Eigen::Index>(B), 3 * h);
  c.concat.leftCols(h) = c.tables.pooled;
  c.concat.middleCols(h, h) = c.joins.pooled;
  c.concat.rightCols(h) = c.predicates.pooled;
  c.z3.noalias() = c.concat * p.out1.weight;
  c.z3.rowwise() += p.out1.bias;
  detail::relu_inplace(c.z3, c.h3);
  c.logits.noalias() = c.h3 * p.out2.weight.col(0);
  c.logits.array() += p.out2.bias(0);
  c.output = (Scalar(1) / (Scalar(1) + (-c.logits.array()).exp())).matrix();
  detail::check_finite<Scalar>(c.output, "mscn output");
}

/// Predictions in (0, 1), one per query in the batch.
template <typename Scalar>
Vector<Scalar> mscn_forward(const MscnParams<Scalar>& p, const FeaturizedBatch<Scalar>& batch) {
  ForwardCache<Scalar> c;
  mscn_forward(p, batch, c);
  return c.output;
}

namespace detail {

template <typename Scalar>
void set_module_backward(const SetModule<Scalar>& m, const Matrix<Scalar>& features, const Vector<Scalar>& mask,
                         std::size_t batch, std::size_t max_n, const SetActivations<Scalar>& act,
                         const Matrix<Scalar>& d_pooled, SetModule<Scalar>& grad) {
  Matrix<Scalar> d_h2(act.h2.rows(), act.h2.cols());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < max_n; ++i) {
      const auto row = static_cast<Eigen::Index>(b * max_n + i);
      d_h2.row(row) = (mask(row) * act.inv_count(static_cast<Eigen::Index>(b))) * d_pooled.row(static_cast<Eigen::Index>(b));
    }
  Matrix<Scalar> d_z2 = d_h2.cwiseProduct((act.z2.array() > Scalar(0)).template cast<Scalar>().matrix());
  grad.layer2.weight.noalias() += act.h1.transpose() * d_z2;
  grad.layer2.bias += d_z2.colwise().sum();
  Matrix<Scalar> d_h1;
  d_h1.noalias() = d_z2 * m.layer2.weight.transpose();
  Matrix<Scalar> d_z1 = d_h1.cwiseProduct((act.z1.array() > Scalar(0)).template cast<Scalar>().matrix());
  grad.layer1.weight.noalias() += features.transpose() * d_z1;
  grad.layer1.bias += d_z1.colwise().sum();
}

}  // namespace detail

/// Accumulates into `grad` the gradient of sum_b d_output(b) * output(b).
template <typename Scalar>
void mscn_backward(const MscnParams<Scalar>& p, const FeaturizedBatch<Scalar>& batch, const ForwardCache<Scalar>& c,
                   const Vector<Scalar>& d_output, MscnParams<Scalar>& grad) {
  const auto B = static_cast<Eigen::Index>(batch.size);
  const auto h = static_cast<Eigen::Index>(p.hidden);
  Vector<Scalar> d_logits = d_output.cwiseProduct(c.output.cwiseProduct((Scalar(1) - c.output.array()).matrix()));
  grad.out2.weight.col(0).noalias() += c.h3.transpose() * d_logits;
  grad.out2.bias(0) += d_logits.sum();
  Matrix<Scalar> d_h3 = d_logits * p.out2.weight.col(0).transpose();
  Matrix<Scalar> d_z3 = d_h3.cwiseProduct((c.z3.array() > Scalar(0)).template cast<Scalar>().matrix());
  grad.out1.weight.noalias() += c.concat.transpose() * d_z3;
  grad.out1.bias += d_z3.colwise().sum();
  Matrix<Scalar> d_concat(B, 3 * h);
  d_concat.noalias() = d_z3 * p.out1.weight.transpose();
  const Matrix<Scalar> d_tables = d_concat.leftCols(h);
  const Matrix<Scalar> d_joins = d_concat.middleCols(h, h);
  const Matrix<Scalar> d_preds = d_concat.rightCols(h);
  detail::set_module_backward(p.tables, batch.tables.features, batch.tables.mask, batch.size, batch.tables.max_n,
                              c.tables, d_tables, grad.tables);
  detail::set_module_backward(p.joins, batch.joins.features, batch.joins.mask, batch.size, batch.joins.max_n, c.joins,
                              d_joins, grad.joins);
  detail::set_module_backward(p.predicates, batch.predicates.features, batch.predicates.mask, batch.size,
                              batch.predicates.max_n, c.predicates, d_preds, grad.predicates);
}

}  // namespace deepsketch::mscn
