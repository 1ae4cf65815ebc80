#include "asn/nn/optim.hpp"

#include <cmath>

#include "asn/error.hpp"

namespace asn::nn {

void TrainConfig::validate() const {
  require(batch_size > 0, "TrainConfig: batch_size must be positive");
  require(lr > 0.0, "TrainConfig: lr must be positive");
  require(end_epoch >= 0, "TrainConfig: end_epoch must be nonnegative");
  require(lr_decay_epoch < end_epoch || end_epoch == 0, "TrainConfig: lr_decay_epoch must be < end_epoch");
}

Optimizer::Optimizer(OptimizerKind kind, double beta1, double beta2, double epsilon)
    : kind_(kind), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void Optimizer::step(ModelWeights& weights, double lr) {
  ++t_;
  ++weights.step;
  if (kind_ == OptimizerKind::adam && m_.size() != weights.tensors.size()) {
    m_.assign(weights.tensors.size(), {});
    v_.assign(weights.tensors.size(), {});
  }
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < weights.tensors.size(); ++i) {
    auto& entry = weights.tensors[i];
    if (ModelWeights::is_buffer(entry.name) || !entry.value.has_grad()) continue;
    auto w = entry.value.data();
    const auto g = std::as_const(entry.value).grad();
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < w.size(); ++k) w[k] = static_cast<float>(w[k] - lr * g[k]);
      continue;
    }
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != w.size()) {
      m.assign(w.size(), 0.0f);
      v.assign(w.size(), 0.0f);
    }
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = static_cast<float>(beta1_ * m[k] + (1.0 - beta1_) * g[k]);
      v[k] = static_cast<float>(beta2_ * v[k] + (1.0 - beta2_) * static_cast<double>(g[k]) * g[k]);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] = static_cast<float>(w[k] - lr * mhat / (std::sqrt(vhat) + epsilon_));
    }
  }
}

}  // namespace asn::nn
