#pragma once

#include <cstdint>
#include <vector>

#include "asn/nn/weights.hpp"

namespace asn::nn {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  int batch_size = 32;
  double lr = 1e-4;
  int lr_decay_epoch = 20;  // lr x 0.1 from this (0-based) epoch on
  int end_epoch = 40;       // epochs [0, end_epoch) are run
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;

  void validate() const;
  double lr_at(int epoch) const { return epoch >= lr_decay_epoch ? lr * 0.1 : lr; }
};

// Updates every non-buffer tensor of a ModelWeights from its grad buffer.
// Adam moments belong to the optimizer, not to the weights, so a fine-tune
// starts with fresh moments.
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  void step(ModelWeights& weights, double lr);
  std::uint64_t steps_taken() const { return t_; }

 private:
  OptimizerKind kind_;
  double beta1_, beta2_, epsilon_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace asn::nn
