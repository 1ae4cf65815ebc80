#include "asn/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "asn/error.hpp"

namespace asn::models {

using nn::LayerSpec;
using nn::Tensor;

namespace {

constexpr int kFeatures = 64;
constexpr int kInferBatch = 16;
constexpr std::string_view kReconstruction = "tail.recon.weight";

const char* mask_code(mask::MaskKind k) { return k == mask::MaskKind::mean ? "MM" : "BM"; }

const char* fusion_code(Fusion f) {
  switch (f) {
    case Fusion::clf:
      return "CLF";
    case Fusion::af:
      return "AF";
    case Fusion::cef:
      return "CEF";
  }
  return "?";
}

mask::MaskKind parse_mask(std::string_view s) {
  if (s == "MM") return mask::MaskKind::mean;
  if (s == "BM") return mask::MaskKind::boundary;
  throw PreconditionError("unknown mask kind '" + std::string(s) + "' (expected MM or BM)");
}

Fusion parse_fusion(std::string_view s) {
  if (s == "CLF") return Fusion::clf;
  if (s == "AF") return Fusion::af;
  if (s == "CEF") return Fusion::cef;
  throw PreconditionError("unknown fusion '" + std::string(s) + "' (expected CLF, AF or CEF)");
}

int conv_relu(nn::Graph& g, int x, int in, int out, int k, const std::string& name) {
  return g.layer(g.layer(x, LayerSpec::conv(in, out, k), name), LayerSpec::relu(out), name + ".relu");
}

// Entry conv (+ residual blocks when deep). Shared by the frame stream and
// the mirrored mask stream of AF.
int feature_stream(nn::Graph& g, const ModelConfig& c, int x, int in_channels, const std::string& prefix) {
  const int k = c.depth == Depth::deep ? 3 : 5;
  int h = conv_relu(g, x, in_channels, kFeatures, k, prefix + ".entry");
  if (c.depth == Depth::deep)
    for (int i = 0; i < c.residual_blocks; ++i)
      h = g.layer(h, LayerSpec::residual_block(kFeatures), prefix + ".rb" + std::to_string(i));
  return h;
}

std::string stream_text(const ModelConfig& c, int in_channels) {
  const int k = c.depth == Depth::deep ? 3 : 5;
  std::string s = LayerSpec::conv(in_channels, kFeatures, k).str() + " relu";
  if (c.depth == Depth::deep)
    s += " " + LayerSpec::residual_block(kFeatures).str() + "x" + std::to_string(c.residual_blocks);
  return s;
}

void fill_batch(std::span<const dataset::PatchPair> data, std::span<const std::size_t> idx, mask::MaskKind kind,
                bool want_mask, Tensor& frames, Tensor& masks, Tensor* targets) {
  const int n = static_cast<int>(idx.size());
  const int h = data[idx[0]].decoded.height(), w = data[idx[0]].decoded.width();
  frames = Tensor({n, 1, h, w});
  if (want_mask) masks = Tensor({n, 1, h, w});
  if (targets) *targets = Tensor({n, 1, h, w});
  for (int i = 0; i < n; ++i) {
    const auto& p = data[idx[static_cast<std::size_t>(i)]];
    require(p.decoded.width() == w && p.decoded.height() == h, "batch patches must share dimensions");
    auto f = frames.sample(i);
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = p.decoded.samples()[k] / 255.0f;
    if (want_mask) {
      const auto m = p.mask(kind).values();
      std::copy(m.begin(), m.end(), masks.sample(i).begin());
    }
    if (targets) {
      auto t = targets->sample(i);
      for (std::size_t k = 0; k < t.size(); ++k) t[k] = p.original.samples()[k] / 255.0f;
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  require(depth != Depth::deep || residual_blocks > 0, "ModelConfig: residual_blocks must be positive");
}

std::string ModelConfig::name() const {
  std::string s = depth == Depth::shallow ? "shallow-" : "";
  if (!use_mask) return s + "1-in";
  return s + "2-in+" + mask_code(mask_kind) + "+" + fusion_code(fusion);
}

ModelConfig ModelConfig::from_name(std::string_view name) {
  ModelConfig c;
  std::string_view rest = name;
  if (rest.starts_with("shallow-")) {
    c.depth = Depth::shallow;
    rest.remove_prefix(8);
  }
  if (rest == "1-in") return c;
  if (rest.starts_with("2-in+") && rest.size() > 8 && rest[7] == '+') {
    c.use_mask = true;
    c.mask_kind = parse_mask(rest.substr(5, 2));
    c.fusion = parse_fusion(rest.substr(8));
    return c;
  }
  throw PreconditionError("unknown model name '" + std::string(name) +
                          "' (expected [shallow-]1-in or [shallow-]2-in+{MM,BM}+{CLF,AF,CEF})");
}

std::string ModelConfig::descriptor() const {
  validate();
  std::ostringstream s;
  s << "model=" << name() << '\n';
  s << "depth=" << (depth == Depth::deep ? "deep" : "shallow") << '\n';
  s << "use_mask=" << (use_mask ? 1 : 0) << '\n';
  s << "mask_kind=" << mask_code(mask_kind) << '\n';
  s << "fusion=" << fusion_code(fusion) << '\n';
  s << "residual_blocks=" << residual_blocks << '\n';
  const bool early = use_mask && fusion == Fusion::cef;
  s << "frame_stream=" << stream_text(*this, early ? 2 : 1) << '\n';
  if (use_mask && fusion == Fusion::af) s << "mask_stream=" << stream_text(*this, 1) << "\nfusion_point=add\n";
  if (use_mask && fusion == Fusion::clf)
    s << "mask_stream=conv3x3(1,64) relu conv3x3(64,64) relu conv3x3(64,64) relu\nfusion_point=concat "
      << LayerSpec::conv(2 * kFeatures, kFeatures, 1).str() << '\n';
  if (depth == Depth::deep)
    s << "tail=conv3x3(64,64) relu conv3x3(64,32) relu conv3x3(32,1)\n";
  else
    s << "tail=conv3x3(64,32) relu conv3x3(32,16) relu conv5x5(16,1)\n";
  s << "output=input+residual\n";
  return s.str();
}

ModelConfig ModelConfig::from_descriptor(std::string_view text) {
  std::map<std::string, std::string, std::less<>> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](std::string_view key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("model descriptor lacks '" + std::string(key) + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    const std::string& depth = get("depth");
    if (depth != "deep" && depth != "shallow") throw FormatError("model descriptor: bad depth '" + depth + "'");
    c.depth = depth == "deep" ? Depth::deep : Depth::shallow;
    c.use_mask = get("use_mask") == "1";
    c.mask_kind = parse_mask(get("mask_kind"));
    c.fusion = parse_fusion(get("fusion"));
    c.residual_blocks = std::stoi(get("residual_blocks"));
    c.validate();
  } catch (const PreconditionError& e) {
    throw FormatError(std::string("model descriptor: ") + e.what());
  } catch (const std::logic_error&) {
    throw FormatError("model descriptor: bad residual_blocks");
  }
  if (c.descriptor() != text) throw FormatError("model descriptor does not match the architecture it names");
  return c;
}

nn::Graph build_graph(const ModelConfig& c) {
  c.validate();
  nn::Graph g;
  const bool early = c.use_mask && c.fusion == Fusion::cef;
  const int x = g.input(early ? 2 : 1);
  const int frame = early ? g.slice(x, 0, 1) : x;
  int h = feature_stream(g, c, x, early ? 2 : 1, "frame");

  if (c.use_mask && c.fusion == Fusion::af) {
    const int m = feature_stream(g, c, g.input(1), 1, "mask");
    h = g.add(h, m);
  } else if (c.use_mask && c.fusion == Fusion::clf) {
    int m = g.input(1);
    m = conv_relu(g, m, 1, kFeatures, 3, "mask.conv1");
    m = conv_relu(g, m, kFeatures, kFeatures, 3, "mask.conv2");
    m = conv_relu(g, m, kFeatures, kFeatures, 3, "mask.conv3");
    h = g.layer(g.concat(h, m), LayerSpec::conv(2 * kFeatures, kFeatures, 1), "fuse");
  }

  int r;
  if (c.depth == Depth::deep) {
    r = conv_relu(g, h, kFeatures, 64, 3, "tail.enhance");
    r = conv_relu(g, r, 64, 32, 3, "tail.map");
    r = g.layer(r, LayerSpec::conv(32, 1, 3), "tail.recon");
  } else {
    r = conv_relu(g, h, kFeatures, 32, 3, "tail.map1");
    r = conv_relu(g, r, 32, 16, 3, "tail.map2");
    r = g.layer(r, LayerSpec::conv(16, 1, 5), "tail.recon");
  }
  g.set_output(g.add(r, frame));
  return g;
}

Model::Model(ModelConfig config, nn::ModelWeights weights)
    : config_(config), graph_(build_graph(config)), weights_(std::move(weights)) {
  graph_.check(weights_);
  weights_.architecture = config_.descriptor();
}

std::vector<Tensor> Model::inputs(const Tensor& frames, const Tensor* masks) const {
  require(frames.shape().c == 1, "model input frames must have one channel");
  if (!config_.use_mask) {
    require(masks == nullptr, "model " + config_.name() + " takes no mask");
    return {frames};
  }
  require(masks != nullptr, "model " + config_.name() + " requires a mask");
  require(masks->shape() == frames.shape(), "mask shape " + masks->shape().str() + " does not match frame shape " +
                                                frames.shape().str());
  if (config_.fusion == Fusion::cef) return {nn::concat_forward(frames, *masks)};
  return {frames, *masks};
}

Model build_model(const ModelConfig& config, std::uint64_t seed, TailInit tail) {
  const nn::Graph g = build_graph(config);
  nn::ModelWeights w = g.init_weights(seed);
  if (tail == TailInit::zero) w.at(kReconstruction).fill(0.0f);
  return Model(config, std::move(w));
}

void save_model(const std::filesystem::path& path, const Model& model) { nn::save_model(path, model.weights()); }

Model load_model(const std::filesystem::path& path) {
  nn::ModelWeights w = nn::load_model(path);
  const ModelConfig c = ModelConfig::from_descriptor(w.architecture);
  try {
    return Model(c, std::move(w));
  } catch (const PreconditionError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Tensor frame_tensor(const FramePlane& frame) {
  Tensor t({1, 1, frame.height(), frame.width()});
  for (std::size_t i = 0; i < t.size(); ++i) t.raw()[i] = frame.samples()[i] / 255.0f;
  return t;
}

Tensor mask_tensor(const mask::Mask& mask) {
  const auto v = mask.values();
  return Tensor({1, 1, mask.height(), mask.width()}, std::vector<float>(v.begin(), v.end()));
}

FramePlane tensor_to_frame(const Tensor& t, int sample) {
  require(t.shape().c == 1 && sample >= 0 && sample < t.shape().n, "tensor_to_frame: expects a 1-channel sample");
  FramePlane f(t.shape().w, t.shape().h);
  const auto s = t.sample(sample);
  for (std::size_t i = 0; i < s.size(); ++i)
    f.samples()[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s[i], 0.0f, 1.0f) * 255.0f));
  return f;
}

Tensor postprocess_patch(const Model& model, const Tensor& patch, const Tensor* mask) {
  Tensor out = nn::infer(model.graph(), model.weights(), model.inputs(patch, mask));
  for (float& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

std::vector<FramePlane> postprocess_pairs(const Model& model, std::span<const dataset::PatchPair> pairs) {
  std::vector<FramePlane> out;
  out.reserve(pairs.size());
  const bool want_mask = model.config().use_mask;
  for (std::size_t start = 0; start < pairs.size(); start += kInferBatch) {
    const std::size_t end = std::min(pairs.size(), start + kInferBatch);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor frames, masks;
    fill_batch(pairs, idx, model.config().mask_kind, want_mask, frames, masks, nullptr);
    const Tensor y = postprocess_patch(model, frames, want_mask ? &masks : nullptr);
    for (int i = 0; i < y.shape().n; ++i) out.push_back(tensor_to_frame(y, i));
  }
  return out;
}

std::vector<double> train_graph(const nn::Graph& graph, nn::ModelWeights& weights, std::vector<std::size_t> samples,
                                const BatchFn& make_batch, const nn::TrainConfig& config) {
  config.validate();
  require(!samples.empty(), "train: empty training set");
  nn::Optimizer optimizer(config.optimizer);
  nn::Tape tape;
  std::mt19937_64 rng(config.seed);
  std::vector<double> curve;
  std::vector<Tensor> inputs;
  Tensor target, grad;
  for (int epoch = 0; epoch < config.end_epoch; ++epoch) {
    for (std::size_t i = samples.size(); i > 1; --i) std::swap(samples[i - 1], samples[rng() % i]);
    double sum = 0.0;
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> batch(samples.data() + start, end - start);
      make_batch(batch, inputs, target);
      weights.zero_grad();
      const Tensor& out = tape.forward(graph, weights, inputs, nn::Mode::train);
      if (!out.all_finite()) throw NumericError("train: non-finite activation at epoch " + std::to_string(epoch));
      const double loss = nn::mse_loss(out, target, &grad);
      tape.backward(graph, weights, grad);
      optimizer.step(weights, config.lr_at(epoch));
      sum += loss * static_cast<double>(batch.size());
    }
    for (const auto& t : weights.tensors)
      if (!t.value.all_finite()) throw NumericError("train: non-finite weights in " + t.name);
    curve.push_back(sum / static_cast<double>(samples.size()));
    if (!std::isfinite(curve.back())) throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
  }
  weights.drop_grads();
  return curve;
}

std::vector<double> train(Model& model, std::span<const dataset::PatchPair> data, const nn::TrainConfig& config,
                          std::span<const std::size_t> indices) {
  std::vector<std::size_t> order(indices.begin(), indices.end());
  if (indices.empty()) {
    order.resize(data.size());
    std::iota(order.begin(), order.end(), 0);
  }
  for (std::size_t i : order) require(i < data.size(), "train: index out of range");
  const bool want_mask = model.config().use_mask;
  auto make_batch = [&](std::span<const std::size_t> batch, std::vector<Tensor>& inputs, Tensor& target) {
    Tensor frames, masks;
    fill_batch(data, batch, model.config().mask_kind, want_mask, frames, masks, &target);
    inputs = model.inputs(frames, want_mask ? &masks : nullptr);
  };
  return train_graph(model.graph(), model.weights(), std::move(order), make_batch, config);
}

Model fine_tune_from(const nn::ModelWeights& base, const ModelConfig& config, std::span<const dataset::PatchPair> data,
                     const nn::TrainConfig& train_config, std::vector<double>* loss_curve,
                     std::span<const std::size_t> indices) {
  if (!base.architecture.empty())
    require(base.architecture == config.descriptor(),
            "fine_tune_from: base weights were built for another architecture than " + config.name());
  Model m(config, base);
  auto curve = train(m, data, train_config, indices);
  if (loss_curve) *loss_curve = std::move(curve);
  return m;
}

}  // namespace asn::models
