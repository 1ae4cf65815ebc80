#include <algorithm>
#include <cmath>
#include <numeric>

#include "asn/codec.hpp"
#include "asn/error.hpp"
#include "asn/models.hpp"
#include "asn/nn/grad_check.hpp"
#include "asn/toy_corpus.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace asn;
using namespace asn::models;
using nn::Tensor;

namespace {

std::size_t conv_params(int in, int out, int k) { return static_cast<std::size_t>(k * k * in + 1) * out; }
std::size_t block_params(int c) { return 2 * conv_params(c, c, 3) + 2 * 2 * c; }

std::size_t expected_params(const ModelConfig& c) {
  const bool deep = c.depth == Depth::deep;
  const int k = deep ? 3 : 5;
  const int in = c.use_mask && c.fusion == Fusion::cef ? 2 : 1;
  auto stream = [&](int channels) { return conv_params(channels, 64, k) + (deep ? c.residual_blocks * block_params(64) : 0); };
  std::size_t n = stream(in);
  if (c.use_mask && c.fusion == Fusion::af) n += stream(1);
  if (c.use_mask && c.fusion == Fusion::clf)
    n += conv_params(1, 64, 3) + 2 * conv_params(64, 64, 3) + conv_params(128, 64, 1);
  if (deep)
    n += conv_params(64, 64, 3) + conv_params(64, 32, 3) + conv_params(32, 1, 3);
  else
    n += conv_params(64, 32, 3) + conv_params(32, 16, 3) + conv_params(16, 1, 5);
  return n;
}

std::vector<ModelConfig> all_configs(int blocks = 1) {
  std::vector<ModelConfig> out;
  for (Depth d : {Depth::deep, Depth::shallow}) {
    ModelConfig c;
    c.depth = d;
    c.residual_blocks = blocks;
    out.push_back(c);
    c.use_mask = true;
    for (Fusion f : {Fusion::clf, Fusion::af, Fusion::cef}) {
      c.fusion = f;
      out.push_back(c);
    }
  }
  return out;
}

Tensor random_unit(nn::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t(s);
  for (float& v : t.data()) v = static_cast<float>(rng() >> 40) / 16777216.0f;
  return t;
}

std::vector<dataset::PatchPair> toy_pairs(int frames, int qp, std::uint64_t seed) {
  std::vector<dataset::PatchPair> out;
  for (int f = 0; f < frames; ++f) {
    const FramePlane original = dataset::toy_frame(128, 128, seed + f);
    const auto coded = codec::encode_decode(original, codec::QpConfig::from_qp(qp));
    for (auto& p : dataset::extract_patches(original, coded.decoded, coded.partition, qp)) out.push_back(std::move(p));
  }
  return out;
}

double mean_delta_psnr(const Model& m, const std::vector<dataset::PatchPair>& pairs) {
  const auto out = postprocess_pairs(m, pairs);
  double s = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    s += testing::oracle_psnr(out[i], pairs[i].original) - testing::oracle_psnr(pairs[i].decoded, pairs[i].original);
  return s / static_cast<double>(pairs.size());
}

nn::TrainConfig quick(int epochs, std::uint64_t seed, double lr = 1e-3, int batch = 4) {
  nn::TrainConfig t;
  t.end_epoch = epochs;
  t.lr_decay_epoch = std::max(epochs - 1, 0);
  t.lr = lr;
  t.batch_size = batch;
  t.seed = seed;
  return t;
}

}  // namespace

TEST_CASE("parameter counts match the closed form") {
  ModelConfig deep;
  CHECK(build_model(deep, 1).weights().parameter_count() ==
        conv_params(1, 64, 3) + 4 * block_params(64) + conv_params(64, 64, 3) + conv_params(64, 32, 3) +
            conv_params(32, 1, 3));
  CHECK(build_model(deep, 1).weights().parameter_count() == 352769);
  for (const auto& c : all_configs(2)) {
    CAPTURE(c.name());
    CHECK(build_model(c, 1).weights().parameter_count() == expected_params(c));
  }
}

TEST_CASE("names and descriptors round-trip") {
  for (const auto& c : all_configs(3)) {
    CAPTURE(c.name());
    ModelConfig named = ModelConfig::from_name(c.name());
    named.residual_blocks = 3;
    CHECK(named == c);
    CHECK(ModelConfig::from_descriptor(c.descriptor()) == c);
  }
  CHECK(ModelConfig::from_name("2-in+MM+AF").fusion == Fusion::af);
  CHECK_THROWS_AS(ModelConfig::from_name("3-in"), PreconditionError);
  CHECK_THROWS_AS(ModelConfig::from_name("2-in+XX+AF"), PreconditionError);
  ModelConfig bad;
  bad.residual_blocks = 0;
  CHECK_THROWS_AS(build_model(bad, 1), PreconditionError);
}

TEST_CASE("zero-initialized tail makes every variant the identity") {
  const Tensor x = random_unit({2, 1, 64, 64}, 5);
  const Tensor m = random_unit({2, 1, 64, 64}, 6);
  for (const auto& c : all_configs()) {
    CAPTURE(c.name());
    const Model model = build_model(c, 7);
    const Tensor y = postprocess_patch(model, x, c.use_mask ? &m : nullptr);
    REQUIRE(y.shape() == x.shape());
    CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
  }
}

TEST_CASE("input contract") {
  ModelConfig c;
  c.residual_blocks = 1;
  c.use_mask = true;
  c.fusion = Fusion::cef;
  const Model cef = build_model(c, 1, TailInit::he_uniform);
  CHECK(cef.graph().num_inputs() == 1);
  CHECK(cef.graph().input_channels(0) == 2);
  CHECK(nn::infer(cef.graph(), cef.weights(), std::vector<Tensor>{Tensor({1, 2, 64, 64})}).shape() ==
        nn::Shape{1, 1, 64, 64});
  c.fusion = Fusion::af;
  const Model af = build_model(c, 1, TailInit::he_uniform);
  CHECK(af.graph().num_inputs() == 2);
  CHECK(nn::infer(af.graph(), af.weights(), std::vector<Tensor>{Tensor({1, 1, 64, 64}), Tensor({1, 1, 64, 64})})
            .shape() == nn::Shape{1, 1, 64, 64});

  const Tensor x({1, 1, 64, 64});
  CHECK_THROWS_AS(postprocess_patch(af, x), PreconditionError);
  const Model one = build_model(ModelConfig{}, 1);
  CHECK_THROWS_AS(postprocess_patch(one, x, &x), PreconditionError);
  CHECK_THROWS_AS(Model(c, one.weights()), PreconditionError);
}

TEST_CASE("postprocess is deterministic and clamped") {
  ModelConfig c;
  c.residual_blocks = 1;
  const Model m = build_model(c, 3, TailInit::he_uniform);
  const Tensor x = random_unit({1, 1, 64, 64}, 8);
  const Tensor a = postprocess_patch(m, x);
  const Tensor b = postprocess_patch(m, x);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  for (float v : a.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
  // Output stays within the residual's reach: clamp(x + r) moves x by at most |r|.
  const Tensor raw = nn::infer(m.graph(), m.weights(), m.inputs(x, nullptr));
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(std::abs(a.raw()[i] - x.raw()[i]) <= std::abs(raw.raw()[i] - x.raw()[i]) + 1e-6f);
}

TEST_CASE("zero mask and zeroed mask stream reproduce the single-input model") {
  ModelConfig single;
  single.residual_blocks = 2;
  const Model base = build_model(single, 11, TailInit::he_uniform);
  const Tensor x = random_unit({2, 1, 64, 64}, 12);
  const Tensor zero({2, 1, 64, 64});
  const Tensor expected = postprocess_patch(base, x);

  for (Fusion f : {Fusion::af, Fusion::clf}) {
    ModelConfig c = single;
    c.use_mask = true;
    c.fusion = f;
    Model two = build_model(c, 99, TailInit::he_uniform);
    for (auto& t : two.weights().tensors) {
      if (const auto i = base.weights().find(t.name))
        t.value = base.weights().tensors[*i].value;
      else if (t.name.starts_with("mask.") && !nn::ModelWeights::is_buffer(t.name))
        t.value.fill(0.0f);
    }
    if (f == Fusion::clf) {
      // 1x1 fusion conv passes the frame features through unchanged.
      Tensor& w = two.weights().at("fuse.weight");
      w.fill(0.0f);
      for (int o = 0; o < 64; ++o) w.at(o, o, 0, 0) = 1.0f;
      two.weights().at("fuse.bias").fill(0.0f);
    }
    const Tensor y = postprocess_patch(two, x, &zero);
    CHECK(std::equal(y.data().begin(), y.data().end(), expected.data().begin()));
  }
}

TEST_CASE("model file round-trip") {
  const auto dir = testing::temp_dir("models_rt");
  for (const auto& c : all_configs(2)) {
    CAPTURE(c.name());
    const Model m = build_model(c, 21, TailInit::he_uniform);
    save_model(dir / "m.asnm", m);
    const Model back = load_model(dir / "m.asnm");
    CHECK(back.config() == c);
    CHECK(back.weights().same_values(m.weights()));
  }
  // A descriptor naming a different architecture than the tensors is rejected.
  nn::ModelWeights w = build_model(ModelConfig{}, 1).weights();
  ModelConfig other;
  other.residual_blocks = 2;
  w.architecture = other.descriptor();
  nn::save_model(dir / "bad.asnm", w);
  CHECK_THROWS_AS(load_model(dir / "bad.asnm"), FormatError);
}

TEST_CASE("shallow model passes the gradient check") {
  ModelConfig c;
  c.depth = Depth::shallow;
  const Model m = build_model(c, 4, TailInit::he_uniform);
  nn::GradCheckOptions opt;
  opt.max_probes_per_buffer = 24;
  const auto r = nn::grad_check_graph(m.graph(), m.weights(), {random_unit({1, 1, 12, 12}, 9)}, nn::Mode::train, opt);
  CHECK(r.passed);
  MESSAGE("shallow model: max rel error " << r.max_rel_error << " over " << r.checked << " probes");
}

TEST_CASE("training loop learns the identity task on a tiny model") {
  auto pairs = toy_pairs(16, 37, 30);
  // Same shape as the real models: a global skip around a small residual branch.
  nn::Graph g;
  const int x = g.input(1);
  int h = g.layer(x, nn::LayerSpec::conv(1, 4), "c1");
  h = g.layer(h, nn::LayerSpec::relu(4), "r");
  g.set_output(g.add(g.layer(h, nn::LayerSpec::conv(4, 1), "c2"), x));
  nn::ModelWeights w = g.init_weights(5);
  auto identity = [&](std::span<const std::size_t> batch, std::vector<Tensor>& inputs, Tensor& target) {
    target = Tensor({static_cast<int>(batch.size()), 1, 64, 64});
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto s = pairs[batch[i]].decoded.samples();
      for (std::size_t k = 0; k < s.size(); ++k) target.sample(static_cast<int>(i))[k] = s[k] / 255.0f;
    }
    inputs = {target};
  };
  std::vector<std::size_t> all(pairs.size());
  std::iota(all.begin(), all.end(), 0);
  auto cfg = quick(5, 1, 3e-2, 1);
  cfg.lr_decay_epoch = 3;
  const auto curve = train_graph(g, w, all, identity, cfg);
  REQUIRE(curve.size() == 5);
  MESSAGE("identity task loss " << curve.front() << " -> " << curve.back());
  CHECK(curve.back() < 1e-5);
}

TEST_CASE("toy training: loss settles and runs are reproducible") {
  const auto pairs = toy_pairs(4, 37, 40);
  ModelConfig c;
  c.depth = Depth::shallow;
  Model a = build_model(c, 6);
  const auto curve = train(a, pairs, quick(8, 2));
  for (std::size_t e = 4; e < curve.size(); ++e) CHECK(curve[e] <= curve[e - 1] * 1.02);
  Model b = build_model(c, 6);
  CHECK(train(b, pairs, quick(8, 2)) == curve);
  CHECK(b.weights().same_values(a.weights()));
  CHECK(a.weights().step == 8 * 16 / 4);
}

TEST_CASE("fine_tune_from") {
  const auto pairs = toy_pairs(1, 32, 50);
  ModelConfig c;
  c.depth = Depth::shallow;
  const Model base = build_model(c, 7, TailInit::he_uniform);
  const Model same = fine_tune_from(base.weights(), c, pairs, quick(0, 1));
  CHECK(same.weights().same_values(base.weights()));
  ModelConfig other = c;
  other.use_mask = true;
  CHECK_THROWS_AS(fine_tune_from(base.weights(), other, pairs, quick(1, 1)), PreconditionError);
  CHECK_THROWS_AS(fine_tune_from(base.weights(), ModelConfig{}, pairs, quick(1, 1)), PreconditionError);
}

TEST_CASE("fine-tuning from a qp-37 model beats training from scratch") {
  ModelConfig c;
  c.depth = Depth::shallow;
  int wins = 0;
  for (std::uint64_t trial = 0; trial < 4; ++trial) {
    const auto anchor = toy_pairs(4, 37, 100 + 10 * trial);
    const auto target = toy_pairs(2, 32, 200 + 10 * trial);
    const auto val = toy_pairs(2, 32, 300 + 10 * trial);
    Model base = build_model(c, trial);
    train(base, anchor, quick(6, trial));
    const Model tuned = fine_tune_from(base.weights(), c, target, quick(2, trial));
    Model scratch = build_model(c, trial + 50);
    train(scratch, target, quick(2, trial));
    const double dt = mean_delta_psnr(tuned, val), ds = mean_delta_psnr(scratch, val);
    MESSAGE("trial " << trial << ": fine-tuned " << dt << " dB, scratch " << ds << " dB");
    if (dt > ds) ++wins;
  }
  CHECK(wins >= 3);
}
