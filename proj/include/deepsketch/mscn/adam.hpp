#pragma once

#include <cmath>
#include <vector>

#include "deepsketch/mscn/model.hpp"

namespace deepsketch::mscn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
class Adam {
 public:
  Adam(const MscnParams<Scalar>& params, AdamConfig config)
      : config_(config), m_(params.zeros_like()), v_(params.zeros_like()) {}

  void step(MscnParams<Scalar>& params, MscnParams<Scalar>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(config_.beta1), b2 = static_cast<Scalar>(config_.beta2);
    const auto lr = static_cast<Scalar>(config_.learning_rate / c1);
    const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
    const auto eps = static_cast<Scalar>(config_.epsilon);

    std::vector<std::pair<Scalar*, std::size_t>> p, g, m, v;
    auto collect = [](std::vector<std::pair<Scalar*, std::size_t>>& out) {
      return [&out](Scalar* data, std::size_t n) { out.emplace_back(data, n); };
    };
    params.for_each_tensor(collect(p));
    grads.for_each_tensor(collect(g));
    m_.for_each_tensor(collect(m));
    v_.for_each_tensor(collect(v));
    for (std::size_t k = 0; k < p.size(); ++k) {
      using Arr = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
      const auto n = static_cast<Eigen::Index>(p[k].second);
      Arr pk(p[k].first, n), gk(g[k].first, n), mk(m[k].first, n), vk(v[k].first, n);
      mk = b1 * mk + (Scalar(1) - b1) * gk;
      vk = b2 * vk + (Scalar(1) - b2) * gk.square();
      pk -= lr * mk / ((vk * inv_c2).sqrt() + eps);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  MscnParams<Scalar> m_;
  MscnParams<Scalar> v_;
  std::size_t t_ = 0;
};

}  // namespace deepsketch::mscn
