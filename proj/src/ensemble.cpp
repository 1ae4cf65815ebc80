#include "asn/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "asn/error.hpp"
#include "asn/features.hpp"
#include "asn/metrics.hpp"
#include "asn/parallel.hpp"

namespace asn::ensemble {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return seed + 0x9E3779B97F4A7C15ull * (stream + 1); }

std::vector<double> decoded_psnr(std::span<const dataset::PatchPair> pairs) {
  std::vector<double> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) out[i] = metrics::psnr(pairs[i].decoded, pairs[i].original);
  return out;
}

std::vector<double> model_psnr(const models::Model& model, std::span<const dataset::PatchPair> pairs) {
  const auto outputs = models::postprocess_pairs(model, pairs);
  std::vector<double> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) out[i] = metrics::psnr(outputs[i], pairs[i].original);
  return out;
}

// PSNR table with the global column supplied by the caller.
std::vector<MemberPsnr> local_psnr(const AsnBank& bank, std::span<const dataset::PatchPair> pairs,
                                   std::span<const double> global) {
  std::vector<MemberPsnr> table(pairs.size());
  for (int j = 0; j < kLocalCount; ++j) {
    const auto col = model_psnr(bank.local[static_cast<std::size_t>(j)], pairs);
    for (std::size_t i = 0; i < pairs.size(); ++i) table[i][static_cast<std::size_t>(j)] = col[i];
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) table[i][kGlobalIndex] = global[i];
  return table;
}

std::vector<int> labels_of(std::span<const MemberPsnr> table) {
  std::vector<int> labels(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) labels[i] = best_member(table[i]);
  return labels;
}

std::vector<dataset::PatchPair> frame_patches(const FramePlane& decoded, const FramePlane& original,
                                              const codec::PartitionMap& partition) {
  return dataset::extract_patches(original, decoded, partition, 0);
}

}  // namespace

const models::Model& AsnBank::member(int j) const {
  require(j >= 0 && j < kBankSize, "AsnBank: member index out of range");
  return j == kGlobalIndex ? global : local[static_cast<std::size_t>(j)];
}

models::Model& AsnBank::member(int j) {
  require(j >= 0 && j < kBankSize, "AsnBank: member index out of range");
  return j == kGlobalIndex ? global : local[static_cast<std::size_t>(j)];
}

void AsnBank::validate() const {
  const auto& g = global.config();
  for (const auto& m : local) {
    const auto& c = m.config();
    require(c.use_mask == g.use_mask && (!g.use_mask || (c.mask_kind == g.mask_kind && c.fusion == g.fusion)),
            "AsnBank: member " + c.name() + " does not take the same inputs as global " + g.name());
  }
}

AsnBank uniform_bank(const models::Model& model) {
  AsnBank bank;
  for (auto& m : bank.local) m = model;
  bank.global = model;
  return bank;
}

const char* init_method_name(InitMethod m) {
  switch (m) {
    case InitMethod::random:
      return "random";
    case InitMethod::psnr:
      return "psnr";
    case InitMethod::cluster:
      return "cluster";
  }
  return "?";
}

InitMethod parse_init_method(std::string_view name) {
  for (auto m : {InitMethod::random, InitMethod::psnr, InitMethod::cluster})
    if (name == init_method_name(m)) return m;
  throw PreconditionError("unknown init method '" + std::string(name) + "' (random, psnr, cluster)");
}

std::vector<int> init_random(std::size_t n, std::uint64_t seed, int k) {
  require(n > 0, "init_random: no patches");
  require(k > 0, "init_random: k must be positive");
  for (std::uint64_t attempt = 0;; ++attempt) {
    std::mt19937_64 rng(seed + attempt);
    std::vector<int> labels(n);
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (auto& l : labels) {
      l = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
      ++counts[static_cast<std::size_t>(l)];
    }
    if (n < 30 || std::ranges::find(counts, 0u) == counts.end()) return labels;
  }
}

std::vector<int> init_psnr(std::span<const dataset::PatchPair> pairs) {
  require(pairs.size() >= kLocalCount, "init_psnr: need at least 3 patches");
  const auto psnr = decoded_psnr(pairs);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return psnr[a] < psnr[b]; });
  std::vector<int> labels(pairs.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank)
    labels[order[rank]] = static_cast<int>(rank * kLocalCount / order.size());
  return labels;
}

std::vector<int> init_cluster(std::span<const dataset::PatchPair> pairs, std::uint64_t seed) {
  require(pairs.size() >= kLocalCount, "init_cluster: need at least 3 patches");
  std::vector<std::vector<double>> features(pairs.size());
  parallel_for(pairs.size(),
               [&](std::size_t i) { features[i] = compute_feature_vector(pairs[i].decoded, pairs[i].original); });
  return cluster_features(features, decoded_psnr(pairs), seed, kLocalCount);
}

std::vector<int> init_labels(InitMethod method, std::span<const dataset::PatchPair> pairs, std::uint64_t seed) {
  switch (method) {
    case InitMethod::random:
      return init_random(pairs.size(), seed);
    case InitMethod::psnr:
      return init_psnr(pairs);
    case InitMethod::cluster:
      return init_cluster(pairs, seed);
  }
  throw PreconditionError("init_labels: bad method");
}

FoldPlan plan_folds(std::size_t n, std::uint64_t seed, int folds) {
  require(folds >= kLocalCount, "plan_folds: need at least 3 folds");
  require(n >= static_cast<std::size_t>(folds), "plan_folds: fewer patches than folds");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  FoldPlan plan;
  plan.folds.resize(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < n; ++i) plan.folds[i % plan.folds.size()].push_back(order[i]);
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  std::vector<int> ids(static_cast<std::size_t>(folds));
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng() % i]);
  std::copy_n(ids.begin(), kLocalCount, plan.chosen.begin());
  return plan;
}

AsnBank pretrain_bank(std::span<const dataset::PatchPair> data, const models::ModelConfig& config,
                      const nn::TrainConfig& train_config, std::uint64_t seed, const models::Model* global) {
  const FoldPlan plan = plan_folds(data.size(), seed);
  AsnBank bank;
  bank.seed = seed;
  for (int j = 0; j < kLocalCount; ++j) {
    auto& m = bank.local[static_cast<std::size_t>(j)];
    m = models::build_model(config, derive_seed(seed, static_cast<std::uint64_t>(j)));
    nn::TrainConfig tc = train_config;
    tc.seed = derive_seed(train_config.seed, static_cast<std::uint64_t>(j));
    models::train(m, data, tc, plan.folds[static_cast<std::size_t>(plan.chosen[static_cast<std::size_t>(j)])]);
  }
  if (global) {
    bank.global = *global;
  } else {
    bank.global = models::build_model(config, derive_seed(seed, kGlobalIndex));
    models::train(bank.global, data, train_config);
  }
  bank.validate();
  return bank;
}

std::vector<MemberPsnr> member_psnr(const AsnBank& bank, std::span<const dataset::PatchPair> pairs) {
  return local_psnr(bank, pairs, model_psnr(bank.global, pairs));
}

int best_member(const MemberPsnr& psnr) {
  int best = 0;
  for (int j = 1; j < kBankSize; ++j)
    if (psnr[static_cast<std::size_t>(j)] > psnr[static_cast<std::size_t>(best)]) best = j;
  return best;
}

std::vector<int> refine_labels(const AsnBank& bank, std::span<const dataset::PatchPair> pairs) {
  return labels_of(member_psnr(bank, pairs));
}

double switched_gain(std::span<const MemberPsnr> psnr, std::span<const dataset::PatchPair> pairs) {
  require(psnr.size() == pairs.size() && !pairs.empty(), "switched_gain: one PSNR row per patch required");
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    sum += psnr[i][static_cast<std::size_t>(best_member(psnr[i]))] - metrics::psnr(pairs[i].decoded, pairs[i].original);
  return sum / static_cast<double>(pairs.size());
}

IterateResult iterate_train(AsnBank& bank, std::span<const dataset::PatchPair> train,
                            std::span<const dataset::PatchPair> validation, std::vector<int> labels,
                            const IterateOptions& options) {
  require(options.max_iters >= 0, "iterate_train: max_iters must be >= 0");
  require(labels.size() == train.size(), "iterate_train: one label per training patch required");
  for (int l : labels) require(l >= 0 && l < kBankSize, "iterate_train: label out of range");
  bank.validate();

  // The global model is fixed, so its outputs are computed once.
  const auto global_train = model_psnr(bank.global, train);
  const auto global_val = model_psnr(bank.global, validation);
  const auto base_val = decoded_psnr(validation);

  IterateResult result;
  double gsum = 0.0;
  for (std::size_t i = 0; i < validation.size(); ++i) gsum += global_val[i] - base_val[i];
  result.global_gain = gsum / static_cast<double>(validation.size());
  result.gain_curve.push_back(switched_gain(local_psnr(bank, validation, global_val), validation));

  for (int it = 1; it <= options.max_iters; ++it) {
    for (int j = 0; j < kLocalCount; ++j) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == j) members.push_back(i);
      if (members.empty()) continue;
      nn::TrainConfig tc = options.fine_tune;
      tc.seed = derive_seed(options.fine_tune.seed, static_cast<std::uint64_t>(it * kLocalCount + j));
      models::train(bank.local[static_cast<std::size_t>(j)], train, tc, members);
    }
    labels = labels_of(local_psnr(bank, train, global_train));
    std::array<std::size_t, kBankSize> sizes{};
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    result.class_sizes.push_back(sizes);
    bank.iteration += 1;
    result.gain_curve.push_back(switched_gain(local_psnr(bank, validation, global_val), validation));
    const double step = result.gain_curve.back() - result.gain_curve[result.gain_curve.size() - 2];
    if (std::abs(step) < options.stall_eps) break;
  }
  result.labels = std::move(labels);
  return result;
}

EncodeResult encode_select_flags(const AsnBank& bank, const FramePlane& decoded, const FramePlane& original,
                                 const codec::PartitionMap& partition) {
  const auto pairs = frame_patches(decoded, original, partition);
  std::array<std::vector<FramePlane>, kBankSize> outputs;
  for (int j = 0; j < kBankSize; ++j) outputs[static_cast<std::size_t>(j)] = models::postprocess_pairs(bank.member(j), pairs);

  EncodeResult r;
  std::vector<FramePlane> chosen;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    MemberPsnr row{};
    for (std::size_t j = 0; j < kBankSize; ++j) row[j] = metrics::psnr(outputs[j][i], pairs[i].original);
    const int best = best_member(row);
    r.psnr.push_back(row);
    r.flags.flags.push_back(static_cast<std::uint8_t>(best));
    chosen.push_back(outputs[static_cast<std::size_t>(best)][i]);
  }
  r.output = dataset::assemble_patches(chosen, decoded.width(), decoded.height());
  return r;
}

FramePlane decode_dispatch(const AsnBank& bank, const FramePlane& decoded, const codec::PartitionMap& partition,
                           const FlagStream& flags) {
  const auto pairs = frame_patches(decoded, decoded, partition);
  if (flags.patch_count() != pairs.size())
    throw FormatError("decode_dispatch: " + std::to_string(flags.patch_count()) + " flags for " +
                      std::to_string(pairs.size()) + " patches");
  for (std::uint8_t f : flags.flags)
    if (f >= kBankSize) throw FormatError("decode_dispatch: flag " + std::to_string(f) + " out of range");
  std::vector<FramePlane> out(pairs.size());
  for (int j = 0; j < kBankSize; ++j) {
    std::vector<std::size_t> idx;
    std::vector<dataset::PatchPair> group;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (flags.flags[i] == j) {
        idx.push_back(i);
        group.push_back(pairs[i]);
      }
    if (group.empty()) continue;
    auto processed = models::postprocess_pairs(bank.member(j), group);
    for (std::size_t g = 0; g < idx.size(); ++g) out[idx[g]] = std::move(processed[g]);
  }
  return dataset::assemble_patches(out, decoded.width(), decoded.height());
}

void save_bank(const std::filesystem::path& dir, const AsnBank& bank) {
  bank.validate();
  std::filesystem::create_directories(dir);
  models::save_model(dir / "global.asnm", bank.global);
  for (int j = 0; j < kLocalCount; ++j)
    models::save_model(dir / ("local" + std::to_string(j) + ".asnm"), bank.local[static_cast<std::size_t>(j)]);
  std::ofstream out(dir / "bank.txt");
  out << "asn-bank 1\n" << "iteration " << bank.iteration << "\nseed " << bank.seed << '\n';
  if (!out) throw FormatError("cannot write " + (dir / "bank.txt").string());
}

AsnBank load_bank(const std::filesystem::path& dir) {
  std::ifstream in(dir / "bank.txt");
  if (!in) throw FormatError("cannot read " + (dir / "bank.txt").string());
  std::string header, key1, key2;
  AsnBank bank;
  std::getline(in, header);
  if (header != "asn-bank 1" || !(in >> key1 >> bank.iteration >> key2 >> bank.seed) || key1 != "iteration" ||
      key2 != "seed")
    throw FormatError((dir / "bank.txt").string() + ": not a bank manifest");
  bank.global = models::load_model(dir / "global.asnm");
  for (int j = 0; j < kLocalCount; ++j)
    bank.local[static_cast<std::size_t>(j)] = models::load_model(dir / ("local" + std::to_string(j) + ".asnm"));
  try {
    bank.validate();
  } catch (const PreconditionError& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  return bank;
}

}  // namespace asn::ensemble
