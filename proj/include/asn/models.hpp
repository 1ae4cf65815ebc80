#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asn/dataset.hpp"
#include "asn/mask.hpp"
#include "asn/nn/graph.hpp"
#include "asn/nn/optim.hpp"
#include "asn/nn/weights.hpp"

namespace asn::models {

enum class Depth { shallow, deep };
// Late concatenation, addition, early concatenation of mask and frame.
enum class Fusion { clf, af, cef };

struct ModelConfig {
  Depth depth = Depth::deep;
  bool use_mask = false;
  mask::MaskKind mask_kind = mask::MaskKind::mean;
  Fusion fusion = Fusion::af;
  int residual_blocks = 4;  // per stream, deep only

  void validate() const;
  // "1-in", "2-in+MM+AF", "shallow+BM+CEF", ...
  std::string name() const;
  // Parses name() output; residual_blocks is left at its default.
  static ModelConfig from_name(std::string_view name);

  // key=value lines stored in the model file's architecture descriptor.
  std::string descriptor() const;
  static ModelConfig from_descriptor(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// The graph for a config. Inputs: frame (1 channel) then mask (1 channel) for
// two-stream variants; one 2-channel input for early fusion. The output is
// input frame + predicted residual.
nn::Graph build_graph(const ModelConfig& config);

// How the last (reconstruction) convolution starts out. Zero makes a fresh
// model the identity map.
enum class TailInit { zero, he_uniform };

class Model {
 public:
  Model() = default;
  // Validates weights against the config's graph.
  Model(ModelConfig config, nn::ModelWeights weights);

  const ModelConfig& config() const { return config_; }
  const nn::Graph& graph() const { return graph_; }
  nn::ModelWeights& weights() { return weights_; }
  const nn::ModelWeights& weights() const { return weights_; }

  // Network inputs for a batch: frames and masks are (N, 1, H, W) in [0, 1].
  std::vector<nn::Tensor> inputs(const nn::Tensor& frames, const nn::Tensor* masks) const;

 private:
  ModelConfig config_;
  nn::Graph graph_;
  nn::ModelWeights weights_;
};

Model build_model(const ModelConfig& config, std::uint64_t seed, TailInit tail = TailInit::zero);

// ASNM file whose descriptor carries the ModelConfig.
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

// Raster <-> tensor at the [0, 1] scale the network works in.
nn::Tensor frame_tensor(const FramePlane& frame);
nn::Tensor mask_tensor(const mask::Mask& mask);
// Clamps to [0, 1], scales by 255 and rounds.
FramePlane tensor_to_frame(const nn::Tensor& t, int sample = 0);

// Inference on (N, 1, H, W) patches; output clamped to [0, 1]. `masks` is
// required iff the model uses a mask.
nn::Tensor postprocess_patch(const Model& model, const nn::Tensor& patch, const nn::Tensor* mask = nullptr);

// 8-bit outputs for every pair, evaluated in mini-batches.
std::vector<FramePlane> postprocess_pairs(const Model& model, std::span<const dataset::PatchPair> pairs);

// Fills the network inputs and the target for the samples listed.
using BatchFn =
    std::function<void(std::span<const std::size_t> samples, std::vector<nn::Tensor>& inputs, nn::Tensor& target)>;

// The training loop behind train(), for any graph: mini-batch MSE, seeded
// per-epoch shuffle of `samples`, optimizer and schedule from `config`.
std::vector<double> train_graph(const nn::Graph& graph, nn::ModelWeights& weights, std::vector<std::size_t> samples,
                                const BatchFn& make_batch, const nn::TrainConfig& config);

// Mini-batch MSE training with a seeded per-epoch shuffle. `indices` selects
// the training subset of `data` (empty = all). Returns the mean loss of each
// epoch. Throws NumericError on a non-finite loss or weight.
std::vector<double> train(Model& model, std::span<const dataset::PatchPair> data, const nn::TrainConfig& config,
                          std::span<const std::size_t> indices = {});

// Trains a copy of `base` further. Throws PreconditionError when the weights
// were not built for `config`.
Model fine_tune_from(const nn::ModelWeights& base, const ModelConfig& config, std::span<const dataset::PatchPair> data,
                     const nn::TrainConfig& train_config, std::vector<double>* loss_curve = nullptr,
                     std::span<const std::size_t> indices = {});

}  // namespace asn::models
