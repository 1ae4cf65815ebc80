// Acceptance run: one PASS/FAIL line per criterion, plus indented detail lines.
// Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "asn/codec.hpp"
#include "asn/dataset.hpp"
#include "asn/ensemble.hpp"
#include "asn/features.hpp"
#include "asn/flags.hpp"
#include "asn/mask.hpp"
#include "asn/metrics.hpp"
#include "asn/models.hpp"
#include "asn/nn/grad_check.hpp"
#include "asn/toy_corpus.hpp"
#include "test_util.hpp"

using namespace asn;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Collects failed sub-checks of one criterion.
class Criterion {
 public:
  explicit Criterion(std::string title) : title_(std::move(title)), start_(Clock::now()) {}

  void check(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& line) { notes_.push_back(line); }

  bool finish(int number) const {
    for (const auto& n : notes_) std::cout << "    " << n << '\n';
    for (const auto& f : failures_) std::cout << "    failed: " << f << '\n';
    std::cout << (failures_.empty() ? "PASS" : "FAIL") << " criterion " << number << ": " << title_ << " ("
              << std::fixed << std::setprecision(1) << seconds_since(start_) << " s)" << std::endl;
    std::cout.unsetf(std::ios::fixed);
    return failures_.empty();
  }

 private:
  std::string title_;
  Clock::time_point start_;
  std::vector<std::string> notes_;
  std::vector<std::string> failures_;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

nn::Tensor random_tensor(nn::Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  nn::Tensor t(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Toy corpus shared by criteria 5 and 6: 40 single-frame 256x256 sequences,
// 8 of them held out for validation.
const dataset::Dataset& toy_dataset() {
  static const dataset::Dataset ds = [] {
    std::vector<dataset::Sequence> seqs;
    for (int s = 0; s < 40; ++s)
      seqs.push_back({"toy" + std::to_string(s), {dataset::toy_frame(256, 256, 1000 + static_cast<std::uint64_t>(s))}});
    dataset::BuildOptions opt;
    opt.qp = 37;
    opt.val_fraction = 0.2;
    opt.seed = 7;
    return dataset::build_dataset(seqs, opt);
  }();
  return ds;
}

double mean_delta_psnr(const std::vector<FramePlane>& outs, const std::vector<dataset::PatchPair>& pairs) {
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    sum += testing::oracle_psnr(outs[i], pairs[i].original) - testing::oracle_psnr(pairs[i].decoded, pairs[i].original);
  return sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------

bool criterion1() {
  Criterion c("numeric kernels: gradient checks, DCT round-trip and Parseval");
  using nn::Graph;
  using nn::LayerSpec;
  using nn::Mode;
  auto report = [&](const std::string& name, const nn::GradCheckReport& r) {
    c.note(name + ": max rel error " + sci(r.max_rel_error) + " over " + std::to_string(r.checked) + " probes");
    c.check(r.passed && r.max_rel_error <= 1e-3, name + " gradient check");
  };
  {
    Graph g;
    g.set_output(g.layer(g.input(2), LayerSpec::conv(2, 3), "c"));
    report("conv3x3", nn::grad_check_graph(g, g.init_weights(1), {random_tensor({2, 2, 6, 6}, 11)}, Mode::train));
  }
  {
    Graph g;
    g.set_output(g.layer(g.input(2), LayerSpec::conv(2, 2, 5), "c"));
    report("conv5x5", nn::grad_check_graph(g, g.init_weights(2), {random_tensor({1, 2, 7, 7}, 12)}, Mode::train));
  }
  {
    Graph g;
    g.set_output(g.layer(g.input(3), LayerSpec::batchnorm(3), "bn"));
    report("batchnorm", nn::grad_check_graph(g, g.init_weights(3), {random_tensor({3, 3, 4, 4}, 13)}, Mode::train));
  }
  {
    Graph g;
    g.set_output(g.layer(g.input(8), LayerSpec::residual_block(8), "rb"));
    report("residual block",
           nn::grad_check_graph(g, g.init_weights(4), {random_tensor({2, 8, 4, 4}, 14, 0.0f, 1.0f)}, Mode::train));
  }
  {
    models::ModelConfig cfg;
    cfg.depth = models::Depth::shallow;
    const auto m = models::build_model(cfg, 4, models::TailInit::he_uniform);
    nn::GradCheckOptions opt;
    opt.max_probes_per_buffer = 24;
    report("shallow model",
           nn::grad_check_graph(m.graph(), m.weights(), {random_tensor({1, 1, 12, 12}, 15, 0.0f, 1.0f)}, Mode::train,
                                opt));
  }

  double worst_round = 0.0, worst_parseval = 0.0;
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(-255.0, 255.0);
  for (int n : {4, 8, 16, 32, 64}) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x(static_cast<std::size_t>(n) * n);
      for (auto& v : x) v = u(rng);
      const auto coeffs = codec::dct2d(x, n);
      const auto back = codec::idct2d(coeffs, n);
      double ex = 0.0, ec = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        worst_round = std::max(worst_round, std::abs(back[i] - x[i]));
        ex += x[i] * x[i];
        ec += coeffs[i] * coeffs[i];
      }
      worst_parseval = std::max(worst_parseval, std::abs(ex - ec) / ex);
    }
  }
  c.note("DCT round-trip max abs error " + sci(worst_round) + ", Parseval max rel error " +
         sci(worst_parseval));
  c.check(worst_round <= 1e-4, "DCT round-trip");
  c.check(worst_parseval <= 1e-4, "Parseval");
  return c.finish(1);
}

bool criterion2() {
  Criterion c("exact invariants: tiling, masks, flags, model files");

  // Partition tiling: every pixel covered exactly once by an aligned square
  // of a legal size.
  bool tiling = true;
  for (std::uint64_t s = 0; s < 12; ++s) {
    const FramePlane f = s % 2 ? testing::random_frame(192, 128, s) : dataset::toy_frame(192, 128, s);
    const auto p = codec::partition_frame(f, 50.0 + 40.0 * static_cast<double>(s));
    std::vector<int> cover(static_cast<std::size_t>(192 * 128), 0);
    for (const auto& b : p.blocks()) {
      const bool legal = (b.size == 8 || b.size == 16 || b.size == 32 || b.size == 64) && b.x % b.size == 0 &&
                         b.y % b.size == 0 && b.x + b.size <= 192 && b.y + b.size <= 128;
      tiling = tiling && legal;
      if (!legal) continue;
      for (int y = b.y; y < b.y + b.size; ++y)
        for (int x = b.x; x < b.x + b.size; ++x) ++cover[static_cast<std::size_t>(y * 192 + x)];
    }
    tiling = tiling && std::all_of(cover.begin(), cover.end(), [](int v) { return v == 1; });
  }
  c.check(tiling, "partition tiling");

  // Mean mask against brute-force block means.
  double worst_mm = 0.0;
  for (std::uint64_t s = 0; s < 6; ++s) {
    const FramePlane f = dataset::toy_frame(128, 128, 100 + s);
    const auto coded = codec::encode_decode(f, codec::QpConfig::from_qp(32));
    const auto m = mask::gen_mean_mask(coded.decoded, coded.partition);
    for (const auto& b : coded.partition.blocks()) {
      double sum = 0.0;
      for (int y = b.y; y < b.y + b.size; ++y)
        for (int x = b.x; x < b.x + b.size; ++x) sum += coded.decoded.at(x, y);
      const double mean = sum / (b.size * b.size) / 255.0;
      for (int y = b.y; y < b.y + b.size; ++y)
        for (int x = b.x; x < b.x + b.size; ++x) worst_mm = std::max(worst_mm, std::abs(double(m.at(x, y)) - mean));
    }
  }
  c.note("mean mask max deviation from block means " + sci(worst_mm));
  c.check(worst_mm <= 1e-4, "mean mask equals block means");

  const codec::PartitionMap quad(64, 64, {{0, 0, 32}, {32, 0, 32}, {0, 32, 32}, {32, 32, 32}});
  const auto bm = mask::gen_boundary_mask(quad);
  const auto marked = std::count_if(bm.values().begin(), bm.values().end(), [](float v) { return v == 1.0f; });
  c.note("boundary mask on the quadrant split marks " + std::to_string(marked) + " pixels");
  c.check(marked == 252, "boundary mask pixel count 252");

  std::mt19937_64 rng(21);
  bool flags_ok = true;
  for (int t = 0; t < 100000 && flags_ok; ++t) {
    std::vector<std::uint8_t> f(rng() % 40);
    for (auto& v : f) v = static_cast<std::uint8_t>(rng() % 4);
    flags_ok = ensemble::unpack_flags(ensemble::pack_flags(f), f.size()) == f;
  }
  c.check(flags_ok, "flag pack/unpack round-trip over 1e5 sequences");
  const std::vector<std::uint8_t> seq = {0, 1, 2, 3};
  c.check(ensemble::pack_flags(seq) == std::vector<std::uint8_t>{0x1B}, "flags 0,1,2,3 pack to 0x1B");

  const auto dir = testing::temp_dir("acceptance_models");
  bool models_ok = true;
  for (const char* name : {"1-in", "2-in+MM+AF", "2-in+BM+CLF", "2-in+MM+CEF", "shallow-2-in+BM+AF"}) {
    const auto m = models::build_model(models::ModelConfig::from_name(name), 5, models::TailInit::he_uniform);
    const auto path = dir / (std::string(name) + ".asnm");
    models::save_model(path, m);
    const auto back = models::load_model(path);
    models_ok = models_ok && back.config() == m.config() &&
                nn::encode_model(back.weights()) == nn::encode_model(m.weights());
  }
  c.check(models_ok, "model-file round-trip is bit-exact");
  return c.finish(2);
}

// Cubic through 4 points by Lagrange interpolation.
double lagrange(const std::vector<double>& x, const std::vector<double>& y, double t) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double l = 1.0;
    for (std::size_t j = 0; j < x.size(); ++j)
      if (j != i) l *= (t - x[j]) / (x[i] - x[j]);
    s += y[i] * l;
  }
  return s;
}

double trapezoid_bd_rate(const metrics::RdCurve& a, const metrics::RdCurve& b) {
  std::vector<double> xa, ya, xb, yb;
  for (auto p : a.points) xa.push_back(p.psnr_db), ya.push_back(std::log10(p.rate_bits));
  for (auto p : b.points) xb.push_back(p.psnr_db), yb.push_back(std::log10(p.rate_bits));
  const double lo = std::max(*std::min_element(xa.begin(), xa.end()), *std::min_element(xb.begin(), xb.end()));
  const double hi = std::min(*std::max_element(xa.begin(), xa.end()), *std::max_element(xb.begin(), xb.end()));
  const int steps = 200000;
  const double h = (hi - lo) / steps;
  double area = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double t = lo + i * h;
    const double d = lagrange(xb, yb, t) - lagrange(xa, ya, t);
    area += (i == 0 || i == steps) ? 0.5 * d : d;
  }
  return (std::pow(10.0, area * h / (hi - lo)) - 1.0) * 100.0;
}

bool criterion3() {
  Criterion c("BD-rate against independent integration");
  metrics::RdCurve a;
  a.points = {{1000, 30}, {1800, 33}, {3000, 36}, {5200, 39}};
  const double same = metrics::bd_rate(a, a);
  metrics::RdCurve b = a;
  for (auto& p : b.points) p.rate_bits *= 0.9;
  const double tenth = metrics::bd_rate(a, b);
  c.note("identical curves " + sci(same) + " %, rate x 0.9 " + fmt(tenth, 6) + " %");
  c.check(std::abs(same) <= 1e-9, "identical curves give 0");
  c.check(std::abs(tenth + 10.0) <= 0.01, "rate x 0.9 gives -10 %");

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto random_curve = [&] {
    metrics::RdCurve r;
    double rate = 2000.0 + 5000.0 * u(rng), q = 28.0 + 4.0 * u(rng);
    for (int i = 0; i < 4; ++i) {
      r.points.push_back({rate, q});
      rate *= 1.4 + u(rng);
      q += 1.5 + 2.0 * u(rng);
    }
    return r;
  };
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const auto x = random_curve(), y = random_curve();
    const double got = metrics::bd_rate(x, y), want = trapezoid_bd_rate(x, y);
    worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
  }
  c.note("50 random curve pairs: max relative deviation " + sci(worst));
  c.check(worst <= 1e-6, "random curves match fine trapezoid integration");
  return c.finish(3);
}

// Frames for the dominance and rate-accounting checks; none of them is in the
// training corpus.
std::vector<FramePlane> held_out_frames(int count, std::uint64_t seed) {
  std::vector<FramePlane> frames;
  for (int i = 0; i < count; ++i) frames.push_back(dataset::toy_frame(192, 128, seed + static_cast<std::uint64_t>(i)));
  return frames;
}

bool criterion4() {
  Criterion c("oracle dominance of the switched bank");
  models::ModelConfig cfg;
  cfg.depth = models::Depth::shallow;
  cfg.use_mask = true;
  nn::TrainConfig tc;
  tc.end_epoch = 4;
  tc.lr_decay_epoch = 3;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  const auto& ds = toy_dataset();
  const auto train = ds.subset(dataset::Split::train);
  const auto bank = ensemble::pretrain_bank(train, cfg, tc, 41);

  std::size_t patches = 0, mismatched_psnr = 0, mismatched_flags = 0, mismatched_pixels = 0, frames_below = 0;
  const auto frames = held_out_frames(6, 5000);
  for (std::size_t fi = 0; fi < frames.size(); ++fi) {
    const auto& original = frames[fi];
    const auto coded = codec::encode_decode(original, codec::QpConfig::from_qp(fi % 2 ? 32 : 37));
    const auto enc = ensemble::encode_select_flags(bank, coded.decoded, original, coded.partition);

    // Brute force: every member on every patch, judged by an independent PSNR.
    const auto pairs = dataset::extract_patches(original, coded.decoded, coded.partition, 37);
    std::array<std::vector<FramePlane>, ensemble::kBankSize> outs;
    for (int j = 0; j < ensemble::kBankSize; ++j) outs[static_cast<std::size_t>(j)] = models::postprocess_pairs(bank.member(j), pairs);
    std::vector<FramePlane> best_patches, global_patches;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      double best = -1.0;
      int arg = 0;
      for (int j = 0; j < ensemble::kBankSize; ++j) {
        const double p = testing::oracle_psnr(outs[static_cast<std::size_t>(j)][i], pairs[i].original);
        if (p > best) best = p, arg = j;
      }
      const auto original_patch = pairs[i].original;
      const FramePlane& selected = outs[enc.flags.flags[i]][i];
      if (testing::oracle_psnr(selected, original_patch) != best) ++mismatched_psnr;
      if (enc.flags.flags[i] != arg) ++mismatched_flags;
      best_patches.push_back(outs[static_cast<std::size_t>(arg)][i]);
      global_patches.push_back(outs[ensemble::kGlobalIndex][i]);
      ++patches;
    }
    const FramePlane brute = dataset::assemble_patches(best_patches, original.width(), original.height());
    if (!(brute == enc.output)) ++mismatched_pixels;
    const FramePlane dispatched = ensemble::decode_dispatch(bank, coded.decoded, coded.partition, enc.flags);
    if (!(dispatched == enc.output)) ++mismatched_pixels;

    const FramePlane global = dataset::assemble_patches(global_patches, original.width(), original.height());
    const double base = testing::oracle_psnr(coded.decoded, original);
    const double asn_delta = testing::oracle_psnr(enc.output, original) - base;
    const double global_delta = testing::oracle_psnr(global, original) - base;
    c.note("frame " + std::to_string(fi) + ": ASN dPSNR " + fmt(asn_delta) + " dB, global alone " +
           fmt(global_delta) + " dB");
    if (asn_delta < global_delta) ++frames_below;
  }
  c.note(std::to_string(patches) + " patches checked against all 4 members");
  c.check(mismatched_psnr == 0, std::to_string(mismatched_psnr) + " patches where the selected PSNR is not the max");
  c.check(mismatched_flags == 0, std::to_string(mismatched_flags) + " flags differing from brute-force argmax");
  c.check(mismatched_pixels == 0, "encoder output equals brute-force selection and decoder dispatch");
  c.check(frames_below == 0, std::to_string(frames_below) + " frames where ASN trails the global CNN");
  return c.finish(4);
}

bool criterion5() {
  Criterion c("toy end-to-end: 1-in gain and partition-aware 2-in+MM+AF");
  const auto& ds = toy_dataset();
  const auto train = ds.subset(dataset::Split::train);
  const auto val = ds.subset(dataset::Split::validation);
  c.note(std::to_string(train.size()) + " training and " + std::to_string(val.size()) + " validation patches");

  nn::TrainConfig tc;
  tc.end_epoch = 10;
  tc.lr_decay_epoch = 8;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  tc.seed = 3;

  auto run = [&](const std::string& name) {
    auto cfg = models::ModelConfig::from_name(name);
    cfg.residual_blocks = 2;
    auto model = models::build_model(cfg, 1);
    const auto t0 = Clock::now();
    const auto curve = models::train(model, train, tc);
    const auto outs = models::postprocess_pairs(model, val);
    const double delta = mean_delta_psnr(outs, val);
    std::size_t improved = 0;
    for (std::size_t i = 0; i < val.size(); ++i)
      if (testing::oracle_psnr(outs[i], val[i].original) >= testing::oracle_psnr(val[i].decoded, val[i].original))
        ++improved;
    c.note(name + ": loss " + fmt(curve.front(), 6) + " -> " + fmt(curve.back(), 6) + ", validation dPSNR " +
           fmt(delta) + " dB, improved on " + std::to_string(improved) + "/" + std::to_string(val.size()) +
           " patches, " + fmt(seconds_since(t0), 0) + " s");
    return delta;
  };
  const double one = run("1-in");
  const double af = run("2-in+MM+AF");
  c.note("partition-aware gain over 1-in: " + fmt(af - one) + " dB");
  c.check(one > 0.05, "1-in validation dPSNR " + fmt(one) + " dB not above 0.05 dB");
  c.check(af >= one - 0.02, "2-in+MM+AF " + fmt(af) + " dB below 1-in - 0.02 dB");
  return c.finish(5);
}

bool criterion6() {
  Criterion c("iterative training stabilizes within 10 iterations for every init");
  const auto& ds = toy_dataset();
  const auto train = ds.subset(dataset::Split::train);
  const auto val = ds.subset(dataset::Split::validation);

  models::ModelConfig cfg;
  cfg.depth = models::Depth::shallow;
  nn::TrainConfig pre;
  pre.end_epoch = 10;
  pre.lr_decay_epoch = 8;
  pre.lr = 1e-3;
  pre.batch_size = 8;
  pre.seed = 61;
  const auto pretrained = ensemble::pretrain_bank(train, cfg, pre, 61);

  ensemble::IterateOptions opt;
  opt.max_iters = 10;
  opt.fine_tune.end_epoch = 3;
  opt.fine_tune.lr_decay_epoch = 2;
  opt.fine_tune.lr = 2e-4;
  opt.fine_tune.batch_size = 8;
  opt.fine_tune.seed = 62;

  std::map<ensemble::InitMethod, double> final_gain;
  for (auto method : {ensemble::InitMethod::random, ensemble::InitMethod::psnr, ensemble::InitMethod::cluster}) {
    auto bank = pretrained;
    const auto name = std::string(ensemble::init_method_name(method));
    const auto result = ensemble::iterate_train(bank, train, val, ensemble::init_labels(method, train, 63), opt);
    const auto& g = result.gain_curve;
    std::string curve;
    for (double v : g) curve += " " + fmt(v);
    c.note(name + " init: gain curve" + curve + " (global alone " + fmt(result.global_gain) + ")");
    const double last_step = g.size() >= 2 ? std::abs(g.back() - g[g.size() - 2]) : 0.0;
    c.check(g.size() >= 2 && g.size() <= 11, name + ": " + std::to_string(g.size() - 1) + " iterations run");
    c.check(last_step < 0.02, name + ": final two entries differ by " + fmt(last_step));
    final_gain[method] = g.back();
  }
  const double cl = final_gain[ensemble::InitMethod::cluster], rnd = final_gain[ensemble::InitMethod::random];
  c.note("final gains: random " + fmt(rnd) + ", psnr " + fmt(final_gain[ensemble::InitMethod::psnr]) + ", cluster " +
         fmt(cl));
  c.check(cl >= rnd - 0.02, "cluster init " + fmt(cl) + " below random init " + fmt(rnd) + " - 0.02");
  return c.finish(6);
}

bool criterion7() {
  Criterion c("init properties: terciles, blob recovery, determinism");
  bool sizes_ok = true;
  for (std::size_t n : {3u, 10u, 31u, 100u, 257u}) {
    std::vector<dataset::PatchPair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      const FramePlane orig = dataset::toy_frame(64, 64, 700 + i);
      const auto coded = codec::encode_decode(orig, codec::QpConfig::from_qp(22 + static_cast<int>(i % 4) * 5));
      auto p = dataset::extract_patches(orig, coded.decoded, coded.partition, 37);
      pairs.push_back(std::move(p.front()));
    }
    const auto labels = ensemble::init_psnr(pairs);
    for (int k = 0; k < 3; ++k) {
      const auto size = std::count(labels.begin(), labels.end(), k);
      sizes_ok = sizes_ok && std::abs(static_cast<double>(size) - static_cast<double>(n) / 3.0) <= 1.0;
    }
    sizes_ok = sizes_ok && ensemble::init_psnr(pairs) == labels;
    if (n == 31) {
      const bool random_same = ensemble::init_random(n, 9) == ensemble::init_random(n, 9);
      const bool cluster_same = ensemble::init_cluster(pairs, 9) == ensemble::init_cluster(pairs, 9);
      c.check(random_same && cluster_same, "random and cluster inits deterministic under a fixed seed");
    }
  }
  c.check(sizes_ok, "PSNR terciles within 1 of n/3 and deterministic");

  // Three blobs in feature space with distinct PSNR levels.
  std::mt19937_64 rng(71);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<std::vector<double>> features;
  std::vector<double> psnr;
  std::vector<int> truth;
  const std::array<double, 3> level = {28.0, 33.0, 38.0};
  for (int i = 0; i < 90; ++i) {
    const int blob = (i * 7) % 3;
    std::vector<double> f(64, 0.0);
    for (auto& v : f) v = noise(rng);
    f[static_cast<std::size_t>(blob)] += 20.0;
    features.push_back(f);
    psnr.push_back(level[static_cast<std::size_t>(blob)] + 0.1 * noise(rng));
    truth.push_back(blob);
  }
  const auto labels = ensemble::cluster_features(features, psnr, 5);
  c.check(labels == truth, "cluster init recovers three blobs exactly (classes ordered by PSNR)");
  c.check(ensemble::cluster_features(features, psnr, 5) == labels, "cluster init deterministic");
  return c.finish(7);
}

// Mean over [lo, hi] of the cubic through (x_i, d_i), by Simpson's rule, which
// is exact for cubics.
double cubic_mean(const std::vector<double>& x, const std::vector<double>& d) {
  const double lo = *std::min_element(x.begin(), x.end()), hi = *std::max_element(x.begin(), x.end());
  return (lagrange(x, d, lo) + 4.0 * lagrange(x, d, 0.5 * (lo + hi)) + lagrange(x, d, hi)) / 6.0;
}

bool criterion8() {
  Criterion c("flag overhead in ASN BD-rate with identity-tail banks");
  models::ModelConfig cfg;
  cfg.depth = models::Depth::shallow;
  cfg.use_mask = true;
  const auto bank = ensemble::uniform_bank(models::build_model(cfg, 81));
  const auto frames = held_out_frames(4, 8000);

  metrics::RdCurve anchor, asn;
  std::vector<double> overhead;
  bool identity = true;
  for (int qp : {37, 32, 27, 22}) {
    double base_bits = 0.0, asn_bits = 0.0, base_psnr = 0.0, asn_psnr = 0.0, flag_bits = 0.0;
    for (const auto& f : frames) {
      const auto coded = codec::encode_decode(f, codec::QpConfig::from_qp(qp));
      const auto enc = ensemble::encode_select_flags(bank, coded.decoded, f, coded.partition);
      const auto bytes = ensemble::encode_flag_stream(enc.flags);
      const auto out = ensemble::decode_dispatch(bank, coded.decoded, coded.partition, ensemble::decode_flag_stream(bytes));
      identity = identity && out == coded.decoded;
      const double bits = ensemble::kFlagBits * static_cast<double>(enc.flags.patch_count());
      base_bits += coded.rate.total_bits();
      asn_bits += coded.rate.total_bits() + bits;
      flag_bits += bits;
      base_psnr += metrics::psnr(coded.decoded, f) / static_cast<double>(frames.size());
      asn_psnr += metrics::psnr(out, f) / static_cast<double>(frames.size());
    }
    anchor.points.push_back({base_bits, base_psnr});
    asn.points.push_back({asn_bits, asn_psnr});
    overhead.push_back(flag_bits);
  }
  c.check(identity, "identity-tail bank reproduces the decoded frames");
  const double pipeline = metrics::bd_rate(anchor, asn);

  // Same PSNR points on both curves, so the log-rate gap is the cubic through
  // log10(1 + overhead / rate).
  std::vector<double> x, d;
  for (std::size_t i = 0; i < anchor.points.size(); ++i) {
    x.push_back(anchor.points[i].psnr_db);
    d.push_back(std::log10(1.0 + overhead[i] / anchor.points[i].rate_bits));
  }
  const double analytic = (std::pow(10.0, cubic_mean(x, d)) - 1.0) * 100.0;
  c.note("pipeline BD-rate " + fmt(pipeline, 6) + " %, analytic overhead-only " + fmt(analytic, 6) + " %");
  c.check(pipeline >= 0.0, "ASN BD-rate is not negative");
  c.check(std::abs(pipeline - analytic) <= 5e-4 * std::abs(analytic), "pipeline matches the analytic value within 0.05%");
  return c.finish(8);
}

}  // namespace

// Optional arguments select criteria by number; default is all of them.
int main(int argc, char** argv) {
  const std::vector<std::function<bool()>> criteria = {criterion1, criterion2, criterion3, criterion4,
                                                       criterion5, criterion6, criterion7, criterion8};
  std::set<std::size_t> selected;
  for (int a = 1; a < argc; ++a) selected.insert(static_cast<std::size_t>(std::stoul(argv[a])));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    bool ok = false;
    try {
      ok = criteria[i]();
    } catch (const std::exception& e) {
      std::cout << "    error: " << e.what() << '\n' << "FAIL criterion " << i + 1 << ": aborted" << std::endl;
    }
    if (!ok) ++failed;
  }
  const std::size_t run = selected.empty() ? criteria.size() : selected.size();
  std::cout << failed << " of " << run << " criteria failed" << std::endl;
  return failed ? 1 : 0;
}
