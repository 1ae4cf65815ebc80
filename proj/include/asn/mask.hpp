#pragma once

#include <span>
#include <vector>

#include "asn/codec.hpp"
#include "asn/frame.hpp"

namespace asn::mask {

enum class MaskKind { mean, boundary };

// Per-pixel partition guidance in [0, 1], same raster as its frame.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height, std::vector<float> values);

  int width() const { return width_; }
  int height() const { return height_; }
  float at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const float> values() const { return values_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> values_;
};

// Each partition block filled with mean(decoded samples in block) / 255.
Mask gen_mean_mask(const FramePlane& decoded, const codec::PartitionMap& partition);

// 1 on a two-pixel band straddling every internal block edge (one pixel on
// each side), 0 elsewhere. The outer frame border is never marked.
Mask gen_boundary_mask(const codec::PartitionMap& partition);

Mask gen_mask(MaskKind kind, const FramePlane& decoded, const codec::PartitionMap& partition);

// Values x 255, rounded; for inspection.
FramePlane mask_to_frame(const Mask& mask);

}  // namespace asn::mask
