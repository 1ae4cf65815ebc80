#include "asn/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "asn/error.hpp"

namespace asn::nn {

namespace {

std::vector<std::size_t> pick_probes(std::size_t size, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (size <= limit) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const GradCheckProblem& problem, const GradCheckOptions& options) {
  require(static_cast<bool>(problem.loss) && static_cast<bool>(problem.gradients),
          "grad_check: loss and gradients are required");
  const auto analytic = problem.gradients();
  require(analytic.size() == problem.coordinates.size(), "grad_check: one gradient per coordinate buffer expected");
  std::vector<std::uint8_t> base_signature;
  if (problem.kink_signature) {
    problem.loss();
    base_signature = problem.kink_signature();
  }

  struct Probe {
    std::size_t buffer;
    std::size_t index;
    double analytic;
    double numeric;
  };
  std::vector<Probe> probes;
  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t b = 0; b < problem.coordinates.size(); ++b) {
    auto values = problem.coordinates[b].second;
    require(analytic[b].size() == values.size(), "grad_check: gradient size mismatch for " + problem.coordinates[b].first);
    for (std::size_t i : pick_probes(values.size(), options.max_probes_per_buffer, rng)) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = problem.loss();
      const bool kink_up = problem.kink_signature && problem.kink_signature() != base_signature;
      values[i] = saved - options.step;
      const double down = problem.loss();
      const bool kink_down = problem.kink_signature && problem.kink_signature() != base_signature;
      values[i] = saved;
      if (kink_up || kink_down) {
        ++report.skipped_kinks;
        continue;
      }
      probes.push_back({b, i, analytic[b][i], (up - down) / (2.0 * options.step)});
    }
  }

  double scale = 0.0;
  for (const auto& p : probes) scale = std::max(scale, std::abs(p.analytic));
  const double floor = std::max(1e-3 * scale, 1e-12);
  for (const auto& p : probes) {
    const double rel = std::abs(p.analytic - p.numeric) / std::max({std::abs(p.analytic), std::abs(p.numeric), floor});
    if (!(rel <= report.max_rel_error)) {
      report.max_rel_error = std::isnan(rel) ? INFINITY : rel;
      report.worst = problem.coordinates[p.buffer].first + "[" + std::to_string(p.index) + "]";
    }
  }
  report.checked = probes.size();
  report.passed = report.checked > 0 && report.max_rel_error <= options.tolerance;
  return report;
}

GradCheckReport grad_check_graph(const Graph& graph, const ModelWeights& weights, const std::vector<Tensor>& inputs,
                                 Mode mode, const GradCheckOptions& options) {
  struct State {
    BasicModelWeights<double> weights;
    std::vector<TensorD> inputs;
    TensorD projection;
    BasicTape<double> tape;
  };
  auto state = std::make_shared<State>();
  state->weights = weights.cast<double>();
  for (const auto& in : inputs) state->inputs.push_back(in.cast<double>());
  // Output shape from a probe forward pass.
  state->projection = TensorD(infer(graph, weights, inputs).shape());
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  for (double& v : state->projection.data()) v = static_cast<double>(rng() >> 40) * (2.0 / 16777216.0) - 1.0;

  GradCheckProblem problem;
  std::vector<std::size_t> param_index;
  for (std::size_t i = 0; i < state->weights.tensors.size(); ++i) {
    auto& t = state->weights.tensors[i];
    if (ModelWeights::is_buffer(t.name)) continue;
    param_index.push_back(i);
    problem.coordinates.emplace_back(t.name, t.value.data());
  }
  for (std::size_t i = 0; i < state->inputs.size(); ++i)
    problem.coordinates.emplace_back("input" + std::to_string(i), state->inputs[i].data());

  problem.loss = [&graph, state, mode] {
    const TensorD& out = state->tape.forward(graph, state->weights, state->inputs, mode, false);
    double sum = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) sum += out.raw()[k] * state->projection.raw()[k];
    return sum;
  };
  problem.kink_signature = [&graph, state] { return state->tape.relu_pattern(graph); };
  problem.gradients = [&graph, state, mode, param_index] {
    ModelWeights w = state->weights.cast<float>();
    std::vector<Tensor> in;
    for (const auto& t : state->inputs) in.push_back(t.cast<float>());
    Tape tape;
    tape.forward(graph, w, in, mode, false);
    std::vector<Tensor> input_grads;
    tape.backward(graph, w, state->projection.cast<float>(), &input_grads);
    std::vector<std::vector<double>> grads;
    for (std::size_t i : param_index) {
      const auto g = std::as_const(w.tensors[i].value).grad();
      grads.emplace_back(g.begin(), g.end());
    }
    for (const auto& g : input_grads) grads.emplace_back(g.data().begin(), g.data().end());
    return grads;
  };
  return grad_check(problem, options);
}

}  // namespace asn::nn
