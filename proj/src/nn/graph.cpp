#include "asn/nn/graph.hpp"

#include <cmath>
#include <random>

#include "asn/error.hpp"

namespace asn::nn {

std::string LayerSpec::str() const {
  const std::string io = "(" + std::to_string(in_channels) + "," + std::to_string(out_channels) + ")";
  switch (kind) {
    case LayerKind::conv3x3:
      return "conv3x3" + io;
    case LayerKind::conv_kxk:
      return "conv" + std::to_string(kernel) + "x" + std::to_string(kernel) + io;
    case LayerKind::relu:
      return "relu";
    case LayerKind::batchnorm:
      return "batchnorm(" + std::to_string(in_channels) + ")";
    case LayerKind::residual_block:
      return "residual_block(" + std::to_string(in_channels) + ")";
    case LayerKind::add:
      return "add";
    case LayerKind::concat:
      return "concat";
  }
  return "?";
}

int Graph::push(Node n) {
  nodes_.push_back(n);
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::declare(std::string name, Shape shape, InitKind init) {
  for (const auto& p : params_) require(p.name != name, "Graph: duplicate parameter name " + name);
  params_.push_back({std::move(name), shape, init});
  return static_cast<int>(params_.size()) - 1;
}

int Graph::input(int channels) {
  require(channels > 0, "Graph::input: channels must be positive");
  Node n;
  n.op = Op::input;
  n.channels = channels;
  const int id = push(n);
  input_nodes_.push_back(id);
  return id;
}

int Graph::layer(int x, const LayerSpec& spec, const std::string& name) {
  require(x >= 0 && x < static_cast<int>(nodes_.size()), "Graph::layer: unknown input node");
  const int c = channels(x);
  require(spec.in_channels == c, "Graph::layer: " + spec.str() + " applied to a " + std::to_string(c) +
                                     "-channel node");
  switch (spec.kind) {
    case LayerKind::conv3x3:
    case LayerKind::conv_kxk: {
      const int k = spec.kind == LayerKind::conv3x3 ? 3 : spec.kernel;
      require(k > 0 && k % 2 == 1, "Graph::layer: kernel must be odd and positive");
      require(spec.out_channels > 0, "Graph::layer: out_channels must be positive");
      Node n;
      n.op = Op::conv;
      n.a = x;
      n.channels = spec.out_channels;
      n.param = declare(name + ".weight", {spec.out_channels, c, k, k}, InitKind::he_uniform);
      declare(name + ".bias", {spec.out_channels, 1, 1, 1}, InitKind::zeros);
      return push(n);
    }
    case LayerKind::relu: {
      Node n;
      n.op = Op::relu;
      n.a = x;
      n.channels = c;
      return push(n);
    }
    case LayerKind::batchnorm: {
      Node n;
      n.op = Op::batchnorm;
      n.a = x;
      n.channels = c;
      n.param = declare(name + ".gamma", {c, 1, 1, 1}, InitKind::ones);
      declare(name + ".beta", {c, 1, 1, 1}, InitKind::zeros);
      declare(name + ".running_mean", {c, 1, 1, 1}, InitKind::zeros);
      declare(name + ".running_var", {c, 1, 1, 1}, InitKind::ones);
      return push(n);
    }
    case LayerKind::residual_block: {
      int h = layer(x, LayerSpec::conv(c, c), name + ".conv1");
      h = layer(h, LayerSpec::batchnorm(c), name + ".bn1");
      h = layer(h, LayerSpec::relu(c), name + ".relu");
      h = layer(h, LayerSpec::conv(c, c), name + ".conv2");
      h = layer(h, LayerSpec::batchnorm(c), name + ".bn2");
      return add(h, x);
    }
    case LayerKind::add:
    case LayerKind::concat:
      break;
  }
  throw PreconditionError("Graph::layer: add/concat are binary, use Graph::add / Graph::concat");
}

int Graph::add(int a, int b) {
  require(channels(a) == channels(b), "Graph::add: channel counts differ");
  Node n;
  n.op = Op::add;
  n.a = a;
  n.b = b;
  n.channels = channels(a);
  return push(n);
}

int Graph::concat(int a, int b) {
  Node n;
  n.op = Op::concat;
  n.a = a;
  n.b = b;
  n.channels = channels(a) + channels(b);
  return push(n);
}

int Graph::slice(int x, int begin, int end) {
  require(0 <= begin && begin < end && end <= channels(x), "Graph::slice: bad channel range");
  Node n;
  n.op = Op::slice;
  n.a = x;
  n.begin = begin;
  n.end = end;
  n.channels = end - begin;
  return push(n);
}

void Graph::set_output(int node) {
  require(node >= 0 && node < static_cast<int>(nodes_.size()), "Graph::set_output: unknown node");
  output_ = node;
}

ModelWeights Graph::init_weights(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  // 24 random bits -> [0, 1); independent of the standard library's distributions.
  auto uniform = [&rng] { return static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f); };
  ModelWeights w;
  for (const auto& p : params_) {
    Tensor t(p.shape);
    switch (p.init) {
      case InitKind::he_uniform: {
        const float bound = std::sqrt(6.0f / static_cast<float>(p.shape.c * p.shape.h * p.shape.w));
        for (float& v : t.data()) v = (2.0f * uniform() - 1.0f) * bound;
        break;
      }
      case InitKind::ones:
        t.fill(1.0f);
        break;
      case InitKind::zeros:
        break;
    }
    w.tensors.push_back({p.name, std::move(t)});
  }
  return w;
}

template <typename T>
void Graph::check(const BasicModelWeights<T>& weights) const {
  require(weights.tensors.size() == params_.size(),
          "model has " + std::to_string(weights.tensors.size()) + " tensors, architecture expects " +
              std::to_string(params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& t = weights.tensors[i];
    require(t.name == params_[i].name, "tensor " + std::to_string(i) + " is '" + t.name + "', expected '" +
                                           params_[i].name + "'");
    require(t.value.shape() == params_[i].shape,
            "tensor " + t.name + " has shape " + t.value.shape().str() + ", expected " + params_[i].shape.str());
  }
}

template void Graph::check(const BasicModelWeights<float>&) const;
template void Graph::check(const BasicModelWeights<double>&) const;

template <typename T>
const BasicTensor<T>& BasicTape<T>::run(const Graph& graph, const WeightsT& weights, WeightsT* stats,
                                        std::span<const TensorT> inputs, Mode mode) {
  require(graph.output_ >= 0, "Graph has no output");
  require(inputs.size() == graph.input_nodes_.size(),
          "model expects " + std::to_string(graph.input_nodes_.size()) + " input tensor(s), got " +
              std::to_string(inputs.size()));
  graph.check(weights);
  const auto& nodes = graph.nodes_;
  values_.assign(nodes.size(), TensorT{});
  bn_.assign(nodes.size(), BatchNormCache<T>{});
  std::size_t next_input = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    auto param = [&](int offset) -> const TensorT& {
      return weights.tensors[static_cast<std::size_t>(n.param + offset)].value;
    };
    switch (n.op) {
      case Graph::Op::input: {
        const TensorT& in = inputs[next_input++];
        require(in.shape().c == n.channels, "input " + std::to_string(next_input - 1) + " must have " +
                                                std::to_string(n.channels) + " channel(s), got " + in.shape().str());
        if (next_input > 1)
          require(in.shape().n == inputs[0].shape().n && in.shape().h == inputs[0].shape().h &&
                      in.shape().w == inputs[0].shape().w,
                  "all inputs must share batch and spatial dims");
        values_[i] = in;
        break;
      }
      case Graph::Op::conv:
        values_[i] = conv2d_forward(values_[static_cast<std::size_t>(n.a)], param(0), param(1));
        break;
      case Graph::Op::batchnorm: {
        std::span<T> rm, rv;
        std::vector<T> rm_copy, rv_copy;
        if (stats != nullptr) {
          rm = stats->tensors[static_cast<std::size_t>(n.param + 2)].value.data();
          rv = stats->tensors[static_cast<std::size_t>(n.param + 3)].value.data();
        } else {
          rm_copy.assign(param(2).data().begin(), param(2).data().end());
          rv_copy.assign(param(3).data().begin(), param(3).data().end());
          rm = rm_copy;
          rv = rv_copy;
        }
        values_[i] = batchnorm_forward<T>(values_[static_cast<std::size_t>(n.a)], param(0).data(), param(1).data(), rm,
                                       rv, mode, stats != nullptr, &bn_[i]);
        break;
      }
      case Graph::Op::relu:
        values_[i] = relu_forward(values_[static_cast<std::size_t>(n.a)]);
        break;
      case Graph::Op::add:
        values_[i] = add_forward(values_[static_cast<std::size_t>(n.a)], values_[static_cast<std::size_t>(n.b)]);
        break;
      case Graph::Op::concat:
        values_[i] = concat_forward(values_[static_cast<std::size_t>(n.a)], values_[static_cast<std::size_t>(n.b)]);
        break;
      case Graph::Op::slice:
        values_[i] = slice_channels(values_[static_cast<std::size_t>(n.a)], n.begin, n.end);
        break;
    }
  }
  return values_[static_cast<std::size_t>(graph.output_)];
}

template <typename T>
const BasicTensor<T>& BasicTape<T>::forward(const Graph& graph, WeightsT& weights, std::span<const TensorT> inputs,
                                            Mode mode, bool update_stats) {
  return run(graph, weights, mode == Mode::train && update_stats ? &weights : nullptr, inputs, mode);
}

template <typename T>
void BasicTape<T>::backward(const Graph& graph, WeightsT& weights, const TensorT& grad_output,
                            std::vector<TensorT>* input_grads) {
  const auto& nodes = graph.nodes_;
  require(values_.size() == nodes.size(), "Tape::backward called without a matching forward pass");
  const auto out = static_cast<std::size_t>(graph.output_);
  require(grad_output.shape() == values_[out].shape(), "Tape::backward: grad_output shape mismatch");

  std::vector<TensorT> grads(nodes.size());
  grads[out] = grad_output;
  auto needs_grad = [&](int node) { return nodes[static_cast<std::size_t>(node)].op != Graph::Op::input || input_grads; };
  auto gspan = [&](int node) -> std::span<T> {
    if (!needs_grad(node)) return {};
    auto& g = grads[static_cast<std::size_t>(node)];
    if (g.size() == 0) g = TensorT(values_[static_cast<std::size_t>(node)].shape());
    return g.data();
  };
  auto pgrad = [&](const Graph::Node& n, int offset) {
    return weights.tensors[static_cast<std::size_t>(n.param + offset)].value.grad();
  };

  for (std::size_t i = nodes.size(); i-- > 0;) {
    const auto& n = nodes[i];
    if (grads[i].size() != 0) {
      const TensorT& g = grads[i];
      switch (n.op) {
        case Graph::Op::input:
          break;
        case Graph::Op::conv:
          conv2d_backward(values_[static_cast<std::size_t>(n.a)],
                          weights.tensors[static_cast<std::size_t>(n.param)].value, g, gspan(n.a), pgrad(n, 0),
                          pgrad(n, 1));
          break;
        case Graph::Op::batchnorm:
          batchnorm_backward<T>(values_[static_cast<std::size_t>(n.a)],
                             weights.tensors[static_cast<std::size_t>(n.param)].value.data(), bn_[i], g, gspan(n.a),
                             pgrad(n, 0), pgrad(n, 1));
          break;
        case Graph::Op::relu:
          if (auto gi = gspan(n.a); !gi.empty()) relu_backward(values_[i], g, gi);
          break;
        case Graph::Op::add:
          for (int src : {n.a, n.b})
            if (auto gi = gspan(src); !gi.empty())
              for (std::size_t k = 0; k < g.size(); ++k) gi[k] += g.raw()[k];
          break;
        case Graph::Op::concat: {
          auto ga = gspan(n.a);
          auto gb = gspan(n.b);
          std::vector<T> scratch_a, scratch_b;
          if (ga.empty()) {
            scratch_a.resize(values_[static_cast<std::size_t>(n.a)].size());
            ga = scratch_a;
          }
          if (gb.empty()) {
            scratch_b.resize(values_[static_cast<std::size_t>(n.b)].size());
            gb = scratch_b;
          }
          concat_backward(g, graph.channels(n.a), ga, gb);
          break;
        }
        case Graph::Op::slice:
          if (auto gi = gspan(n.a); !gi.empty())
            slice_backward(g, values_[static_cast<std::size_t>(n.a)].shape(), n.begin, gi);
          break;
      }
    }
    if (n.op != Graph::Op::input) {
      grads[i] = TensorT{};
      values_[i] = TensorT{};
    }
  }

  if (input_grads) {
    input_grads->clear();
    for (int id : graph.input_nodes_) {
      TensorT& g = grads[static_cast<std::size_t>(id)];
      if (g.size() == 0) g = TensorT(values_[static_cast<std::size_t>(id)].shape());
      input_grads->push_back(std::move(g));
    }
  }
  values_.clear();
  bn_.clear();
}

template <typename T>
std::vector<std::uint8_t> BasicTape<T>::relu_pattern(const Graph& graph) const {
  std::vector<std::uint8_t> pattern;
  for (std::size_t i = 0; i < graph.nodes_.size() && i < values_.size(); ++i) {
    if (graph.nodes_[i].op != Graph::Op::relu) continue;
    for (T v : values_[static_cast<std::size_t>(graph.nodes_[i].a)].data()) pattern.push_back(v > T(0) ? 1 : 0);
  }
  return pattern;
}

template <typename T>
BasicTensor<T> BasicTape<T>::infer(const Graph& graph, const WeightsT& weights, std::span<const TensorT> inputs) {
  BasicTape tape;
  return tape.run(graph, weights, nullptr, inputs, Mode::infer);
}

template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace asn::nn
