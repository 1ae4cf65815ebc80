#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "asn/nn/graph.hpp"

namespace asn::nn {

// A differentiable scalar function of some double buffers. `gradients` must
// return one analytic gradient per coordinate buffer, in order.
struct GradCheckProblem {
  std::vector<std::pair<std::string, std::span<double>>> coordinates;
  std::function<double()> loss;
  std::function<std::vector<std::vector<double>>()> gradients;
  // Optional: activation sign pattern of the most recent loss() call. A probe
  // whose +/- evaluations change the pattern straddles a ReLU kink and is
  // skipped.
  std::function<std::vector<std::uint8_t>()> kink_signature;
};

struct GradCheckOptions {
  double tolerance = 1e-3;
  double step = 1e-3;
  // Coordinates probed per buffer; larger buffers are sampled (seeded).
  std::size_t max_probes_per_buffer = 48;
  std::uint64_t seed = 1;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<buffer>[index]"
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  bool passed = false;
};

// Central differences against analytic gradients.
// Relative error per coordinate: |a - n| / max(|a|, |n|, 1e-3 * scale) where
// scale is the largest analytic magnitude seen in the problem.
GradCheckReport grad_check(const GradCheckProblem& problem, const GradCheckOptions& options = {});

// Checks every parameter and input of a graph under the loss sum(r * output)
// with a fixed random projection r. Analytic gradients come from the float
// backward pass; the numeric side runs the same graph in double. Train mode
// uses batch statistics without touching running stats.
GradCheckReport grad_check_graph(const Graph& graph, const ModelWeights& weights, const std::vector<Tensor>& inputs,
                                 Mode mode, const GradCheckOptions& options = {});

}  // namespace asn::nn
