#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "asn/nn/ops.hpp"
#include "asn/nn/tensor.hpp"
#include "asn/nn/weights.hpp"

namespace asn::nn {

enum class LayerKind { conv3x3, conv_kxk, relu, batchnorm, residual_block, add, concat };

struct LayerSpec {
  LayerKind kind = LayerKind::conv3x3;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;  // conv_kxk only

  static LayerSpec conv(int in, int out, int k = 3) {
    return {k == 3 ? LayerKind::conv3x3 : LayerKind::conv_kxk, in, out, k};
  }
  static LayerSpec relu(int c) { return {LayerKind::relu, c, c, 0}; }
  static LayerSpec batchnorm(int c) { return {LayerKind::batchnorm, c, c, 0}; }
  static LayerSpec residual_block(int c) { return {LayerKind::residual_block, c, c, 3}; }

  // e.g. "conv5x5(1,64)", "residual_block(64)"
  std::string str() const;
};

enum class InitKind { he_uniform, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::zeros;
};

// Static DAG of layers. Parameters are declared by name and resolved against
// a ModelWeights whose tensor order matches params().
class Graph {
 public:
  int input(int channels);
  // Unary layer (conv, relu, batchnorm, residual_block) applied to node x.
  int layer(int x, const LayerSpec& spec, const std::string& name);
  int add(int a, int b);
  int concat(int a, int b);
  int slice(int x, int begin, int end);
  void set_output(int node);

  int output() const { return output_; }
  int channels(int node) const { return nodes_.at(static_cast<std::size_t>(node)).channels; }
  int num_inputs() const { return static_cast<int>(input_nodes_.size()); }
  int input_channels(int i) const { return channels(input_nodes_.at(static_cast<std::size_t>(i))); }
  const std::vector<ParamSpec>& params() const { return params_; }

  // Fresh weights: He-uniform conv kernels, zero biases, BN gamma 1 / beta 0,
  // running mean 0 / var 1. Deterministic in `seed`.
  ModelWeights init_weights(std::uint64_t seed) const;
  // Throws PreconditionError unless weights match params() in order, name and shape.
  template <typename T>
  void check(const BasicModelWeights<T>& weights) const;

 private:
  template <typename T>
  friend class BasicTape;
  enum class Op { input, conv, batchnorm, relu, add, concat, slice };
  struct Node {
    Op op = Op::input;
    int a = -1;
    int b = -1;
    int param = -1;  // first parameter index (conv: w, b; bn: gamma, beta, mean, var)
    int channels = 0;
    int begin = 0;
    int end = 0;
  };

  int push(Node n);
  int declare(std::string name, Shape shape, InitKind init);

  std::vector<Node> nodes_;
  std::vector<int> input_nodes_;
  std::vector<ParamSpec> params_;
  int output_ = -1;
};

// Activations of one forward pass, kept for the matching backward pass.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  using WeightsT = BasicModelWeights<T>;

  // In train mode batch-norm uses batch statistics, and updates the running
  // statistics stored in `weights` when update_stats is set.
  const TensorT& forward(const Graph& graph, WeightsT& weights, std::span<const TensorT> inputs, Mode mode,
                         bool update_stats = true);
  // Accumulates into the grad buffers of `weights`. When input_grads is given
  // it receives d(loss)/d(input) for every graph input.
  void backward(const Graph& graph, WeightsT& weights, const TensorT& grad_output,
                std::vector<TensorT>* input_grads = nullptr);
  // One byte per ReLU pre-activation: 1 when positive. Valid after forward.
  std::vector<std::uint8_t> relu_pattern(const Graph& graph) const;

  // Inference-mode forward pass; weights are not modified.
  static TensorT infer(const Graph& graph, const WeightsT& weights, std::span<const TensorT> inputs);

 private:
  const TensorT& run(const Graph& graph, const WeightsT& weights, WeightsT* stats, std::span<const TensorT> inputs,
                     Mode mode);

  std::vector<TensorT> values_;
  std::vector<BatchNormCache<T>> bn_;
};

using Tape = BasicTape<float>;

inline Tensor infer(const Graph& graph, const ModelWeights& weights, std::span<const Tensor> inputs) {
  return Tape::infer(graph, weights, inputs);
}

}  // namespace asn::nn
