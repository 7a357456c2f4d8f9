#pragma once

#include <cmath>
#include <span>

#include "deepsketch/featurizer/vocabulary.hpp"
#include "deepsketch/mscn/model.hpp"
#include "deepsketch/mscn/qerror.hpp"

namespace deepsketch::mscn {

enum class LossKind {
  MeanQError,  // mean q-error on denormalized cardinalities
  LogMse,      // mean squared error on normalized log labels (comparison mode)
};

template <typename Scalar>
struct LossResult {
  double loss = 0;
  std::vector<double> qerrors;  // per query, always q-error regardless of loss kind
  Vector<Scalar> predictions;   // normalized
  MscnParams<Scalar> grads;
};

/// Derivative of qerror(denorm(y), truth) with respect to the normalized
/// prediction y. The clamp at `floor` is flat (zero slope) and ties use the
/// zero subgradient.
inline double qerror_grad(double y, double truth, double label_log_max, double floor) {
  const double est = std::expm1(y * label_log_max);
  if (est <= floor) return 0.0;
  const double t = std::max(truth, floor);
  const double d_est = label_log_max * (est + 1.0);
  if (est > t) return d_est / t;
  if (est < t) return -t / (est * est) * d_est;
  return 0.0;
}

/// Loss and reverse-mode gradients for one batch. `labels` are normalized
/// log-cardinalities; both predictions and labels are denormalized through
/// `vocab` before the q-error is taken.
template <typename Scalar>
LossResult<Scalar> loss_and_grads(const MscnParams<Scalar>& params, const FeaturizedBatch<Scalar>& batch,
                                  std::span<const double> labels, const EncodingVocabulary& vocab,
                                  LossKind kind = LossKind::MeanQError, double floor = 1.0) {
  if (labels.size() != batch.size) fail(ErrorCode::ShapeMismatch, "label count differs from batch size");
  ForwardCache<Scalar> cache;
  mscn_forward(params, batch, cache);
  const auto B = static_cast<Eigen::Index>(batch.size);
  LossResult<Scalar> r;
  r.predictions = cache.output;
  r.qerrors.resize(batch.size);
  Vector<Scalar> d_out(B);
  double total = 0;
  const double L = vocab.label_log_max;
  for (Eigen::Index b = 0; b < B; ++b) {
    const double y = static_cast<double>(cache.output(b));
    const double truth = denormalize_label(vocab, labels[static_cast<std::size_t>(b)]);
    const double q = qerror(denormalize_label(vocab, y), truth, floor);
    r.qerrors[static_cast<std::size_t>(b)] = q;
    if (kind == LossKind::MeanQError) {
      total += q;
      d_out(b) = static_cast<Scalar>(qerror_grad(y, truth, L, floor) / static_cast<double>(B));
    } else {
      const double diff = y - labels[static_cast<std::size_t>(b)];
      total += diff * diff;
      d_out(b) = static_cast<Scalar>(2.0 * diff / static_cast<double>(B));
    }
  }
  r.loss = total / static_cast<double>(B);
  if (!std::isfinite(r.loss) || !d_out.allFinite()) fail(ErrorCode::NonFiniteValue, "loss is not finite");
  r.grads = params.zeros_like();
  mscn_backward(params, batch, cache, d_out, r.grads);
  return r;
}

}  // namespace deepsketch::mscn
