#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "asn/frame.hpp"

// Toy block-transform codec: quadtree partition, orthonormal DCT, uniform
// scalar quantization and a zeroth-order entropy rate model. It stands in for
// a real HEVC encoder: it produces decoded frames with block artifacts plus
// the partition map that produced them.
namespace asn::codec {

inline constexpr int kCtuSize = 64;
inline constexpr int kMinBlockSize = 8;
inline constexpr double kDefaultSplitThreshold = 100.0;

struct Block {
  int x = 0;
  int y = 0;
  int size = 0;
  friend bool operator==(const Block&, const Block&) = default;
};

// Quadtree leaves covering a frame. Construction validates the tiling.
class PartitionMap {
 public:
  PartitionMap() = default;
  PartitionMap(int frame_width, int frame_height, std::vector<Block> blocks);

  int frame_width() const { return width_; }
  int frame_height() const { return height_; }
  std::span<const Block> blocks() const { return blocks_; }

  // Leaves inside the window, shifted so the window origin is (0, 0). The
  // window must be CTU-aligned so that no block straddles it.
  PartitionMap restrict_to(int x, int y, int w, int h) const;

  // Per-pixel index into blocks(); built on demand.
  std::vector<std::uint32_t> owner_map() const;

  friend bool operator==(const PartitionMap&, const PartitionMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Block> blocks_;
};

// Text format: "width height" header, then one "x y size" triple per line.
void write_partition(const std::filesystem::path& path, const PartitionMap& map);
PartitionMap read_partition(const std::filesystem::path& path);

struct QpConfig {
  int qp = 0;
  double quant_step = 1.0;

  // quant_step = 2^((qp - 4) / 6); doubles every 6 QP like HEVC.
  static QpConfig from_qp(int qp);
};

struct RateEstimate {
  double payload_bits = 0.0;
  std::uint64_t signaling_bits = 0;
  double total_bits() const { return payload_bits + static_cast<double>(signaling_bits); }
};

struct CodecResult {
  FramePlane decoded;
  PartitionMap partition;
  RateEstimate rate;
};

// Top-down quadtree per 64x64 CTU: a block splits while its sample variance
// exceeds split_threshold and it is larger than 8x8.
PartitionMap partition_frame(const FramePlane& frame, double split_threshold = kDefaultSplitThreshold);

// Number of coded split/no-split flags implied by a partition (one per
// quadtree node larger than the minimum block size).
std::uint64_t count_split_decisions(const PartitionMap& map);

// Orthonormal type-II 2-D DCT of an n x n row-major block, n in {2..64}.
std::vector<double> dct2d(std::span<const double> block, int n);
std::vector<double> idct2d(std::span<const double> coeffs, int n);

CodecResult encode_decode(const FramePlane& frame, const QpConfig& qp,
                          double split_threshold = kDefaultSplitThreshold);

}  // namespace asn::codec
