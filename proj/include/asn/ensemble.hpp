#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "asn/codec.hpp"
#include "asn/dataset.hpp"
#include "asn/flags.hpp"
#include "asn/models.hpp"
#include "asn/nn/optim.hpp"

// Adaptive switching: three local CNNs and one global CNN, a per-patch choice
// among them made by the encoder and signalled to the decoder as a flag.
namespace asn::ensemble {

inline constexpr int kLocalCount = 3;
inline constexpr int kBankSize = 4;
inline constexpr int kGlobalIndex = 3;

struct AsnBank {
  std::array<models::Model, kLocalCount> local;
  models::Model global;
  int iteration = 0;
  std::uint64_t seed = 0;

  // 0..2 are the local models, 3 the global one.
  const models::Model& member(int j) const;
  models::Model& member(int j);
  // All members must take the same inputs (mask use, mask kind, fusion).
  void validate() const;
};

// Every member a copy of `model`.
AsnBank uniform_bank(const models::Model& model);

enum class InitMethod { random, psnr, cluster };
const char* init_method_name(InitMethod m);
InitMethod parse_init_method(std::string_view name);

// I.i.d. uniform labels in [0, k). From 30 patches on, the seed is advanced
// until every class is used.
std::vector<int> init_random(std::size_t n, std::uint64_t seed, int k = kLocalCount);
// Terciles of the decoded-patch PSNR, lowest PSNR = class 0; ties keep index
// order.
std::vector<int> init_psnr(std::span<const dataset::PatchPair> pairs);
// Clusters of residual feature vectors, classes ordered by mean PSNR.
std::vector<int> init_cluster(std::span<const dataset::PatchPair> pairs, std::uint64_t seed);
std::vector<int> init_labels(InitMethod method, std::span<const dataset::PatchPair> pairs, std::uint64_t seed);

struct FoldPlan {
  std::vector<std::vector<std::size_t>> folds;
  std::array<int, kLocalCount> chosen{};  // distinct fold indices, one per local model
};

// Seeded shuffle of [0, n) dealt into `folds` folds.
FoldPlan plan_folds(std::size_t n, std::uint64_t seed, int folds = 5);

// Local model j is trained from scratch on fold chosen[j]; the global model on
// all of `data`, unless a trained one is supplied.
AsnBank pretrain_bank(std::span<const dataset::PatchPair> data, const models::ModelConfig& config,
                      const nn::TrainConfig& train_config, std::uint64_t seed, const models::Model* global = nullptr);

using MemberPsnr = std::array<double, kBankSize>;

// PSNR of each member's 8-bit output against the original, per patch.
std::vector<MemberPsnr> member_psnr(const AsnBank& bank, std::span<const dataset::PatchPair> pairs);
// Index of the highest PSNR; ties go to the lowest index.
int best_member(const MemberPsnr& psnr);
// New label per patch in [0, 3]; 3 means the global model did best.
std::vector<int> refine_labels(const AsnBank& bank, std::span<const dataset::PatchPair> pairs);

// Mean over patches of (best member PSNR - decoded PSNR).
double switched_gain(std::span<const MemberPsnr> psnr, std::span<const dataset::PatchPair> pairs);

struct IterateOptions {
  int max_iters = 10;
  double stall_eps = 0.002;  // dB
  nn::TrainConfig fine_tune;
};

struct IterateResult {
  // Validation gain of the switched bank; entry 0 is the bank as given.
  std::vector<double> gain_curve;
  double global_gain = 0.0;  // global model alone, same validation set
  std::vector<int> labels;   // last refinement of the training patches
  std::vector<std::array<std::size_t, kBankSize>> class_sizes;  // per iteration
};

// Each iteration fine-tunes local model j on the training patches labelled j
// (skipped when there are none), relabels the training set and records the
// validation gain. Stops when the gain moves by less than stall_eps or after
// max_iters iterations. The global model is never changed.
IterateResult iterate_train(AsnBank& bank, std::span<const dataset::PatchPair> train,
                            std::span<const dataset::PatchPair> validation, std::vector<int> labels,
                            const IterateOptions& options);

struct EncodeResult {
  FlagStream flags;
  std::vector<MemberPsnr> psnr;  // per patch
  FramePlane output;             // best member per patch
};

// Encoder side: needs the original frame to choose.
EncodeResult encode_select_flags(const AsnBank& bank, const FramePlane& decoded, const FramePlane& original,
                                 const codec::PartitionMap& partition);
// Decoder side: each patch through its flagged member.
FramePlane decode_dispatch(const AsnBank& bank, const FramePlane& decoded, const codec::PartitionMap& partition,
                           const FlagStream& flags);

// Directory with global.asnm, local0..2.asnm and bank.txt.
void save_bank(const std::filesystem::path& dir, const AsnBank& bank);
AsnBank load_bank(const std::filesystem::path& dir);

}  // namespace asn::ensemble
