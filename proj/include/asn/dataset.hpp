#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asn/codec.hpp"
#include "asn/frame.hpp"
#include "asn/mask.hpp"

namespace asn::dataset {

inline constexpr int kPatchSize = 64;

struct PatchSource {
  std::uint32_t sequence = 0;
  std::uint32_t frame = 0;
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  friend bool operator==(const PatchSource&, const PatchSource&) = default;
};

// One 64x64 training/evaluation sample: decoded patch X, original patch Y and
// the partition-derived masks of X.
struct PatchPair {
  FramePlane decoded;
  FramePlane original;
  mask::Mask mask_mm;
  mask::Mask mask_bm;
  codec::PartitionMap partition;  // restricted to the patch
  PatchSource source;
  int qp = 0;
  std::optional<int> label;

  const mask::Mask& mask(mask::MaskKind kind) const { return kind == mask::MaskKind::mean ? mask_mm : mask_bm; }
};

// Crops bottom/right to the largest multiple of 64 in each dimension.
FramePlane crop_to_multiple(const FramePlane& frame);

// Non-overlapping 64x64 grid in raster order. `source` supplies the sequence
// and frame ids; x/y are filled in per patch.
std::vector<PatchPair> extract_patches(const FramePlane& original, const FramePlane& decoded,
                                       const codec::PartitionMap& partition, int qp, PatchSource source = {});

// Inverse of the grid walk: pastes raster-ordered 64x64 patches back into a frame.
FramePlane assemble_patches(std::span<const FramePlane> patches, int width, int height);

enum class Split { train, validation };

struct ManifestEntry {
  PatchSource source;
  int qp = 0;
  Split split = Split::train;
  std::optional<int> label;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<std::string> sequences;  // name per sequence id
  std::vector<ManifestEntry> entries;  // aligned with the shard records
  std::vector<int> qps;
  std::uint64_t seed = 0;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Assigns whole sequences to validation: round(val_fraction * sequences),
// at least one, chosen by a seeded shuffle.
DatasetManifest split_dataset(DatasetManifest manifest, double val_fraction = 0.1, std::uint64_t seed = 0);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// "ASND" shard: magic, u32 version, u32 count, then fixed-size records
// (source, qp, label, decoded and original samples, 8x8-unit partition grid).
// Masks are regenerated on load.
inline constexpr std::uint32_t kShardFormatVersion = 1;
void write_shard(const std::filesystem::path& path, std::span<const PatchPair> patches);
std::vector<PatchPair> read_shard(const std::filesystem::path& path);

struct Dataset {
  DatasetManifest manifest;
  std::vector<PatchPair> patches;  // patches[i] belongs to manifest.entries[i]

  std::vector<PatchPair> subset(Split split) const;
};

struct BuildOptions {
  int qp = 37;
  double split_threshold = codec::kDefaultSplitThreshold;
  // 0 keeps every frame; otherwise a seeded random choice per sequence.
  int frames_per_sequence = 0;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct Sequence {
  std::string name;
  std::vector<FramePlane> frames;
};

// Codes every selected frame, extracts patches and splits by sequence.
Dataset build_dataset(std::span<const Sequence> sequences, const BuildOptions& options);

// Directory layout: manifest.txt + patches.asnd.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace asn::dataset
