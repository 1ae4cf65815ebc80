#include "asn/mask.hpp"

#include <algorithm>
#include <cmath>

#include "asn/error.hpp"

namespace asn::mask {

Mask::Mask(int width, int height, std::vector<float> values)
    : width_(width), height_(height), values_(std::move(values)) {
  require(width > 0 && height > 0 && values_.size() == static_cast<std::size_t>(width) * height,
          "Mask: value count does not match dimensions");
  require(std::all_of(values_.begin(), values_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; }),
          "Mask: values must lie in [0, 1]");
}

Mask gen_mean_mask(const FramePlane& decoded, const codec::PartitionMap& partition) {
  require(decoded.width() == partition.frame_width() && decoded.height() == partition.frame_height(),
          "gen_mean_mask: partition does not match frame dimensions");
  const int w = decoded.width();
  std::vector<float> values(static_cast<std::size_t>(w) * decoded.height());
  for (const codec::Block& b : partition.blocks()) {
    std::uint64_t sum = 0;
    for (int y = b.y; y < b.y + b.size; ++y)
      for (int x = b.x; x < b.x + b.size; ++x) sum += decoded.at(x, y);
    const double mean = static_cast<double>(sum) / (static_cast<double>(b.size) * b.size);
    const auto v = static_cast<float>(mean / 255.0);
    for (int y = b.y; y < b.y + b.size; ++y)
      std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(y) * w + b.x, b.size, v);
  }
  return Mask(w, decoded.height(), std::move(values));
}

Mask gen_boundary_mask(const codec::PartitionMap& partition) {
  const int w = partition.frame_width();
  const int h = partition.frame_height();
  std::vector<float> values(static_cast<std::size_t>(w) * h, 0.0f);
  auto mark = [&](int x, int y) { values[static_cast<std::size_t>(y) * w + x] = 1.0f; };
  // Every internal edge is the left or top edge of some block.
  for (const codec::Block& b : partition.blocks()) {
    if (b.x > 0)
      for (int y = b.y; y < b.y + b.size; ++y) {
        mark(b.x - 1, y);
        mark(b.x, y);
      }
    if (b.y > 0)
      for (int x = b.x; x < b.x + b.size; ++x) {
        mark(x, b.y - 1);
        mark(x, b.y);
      }
  }
  return Mask(w, h, std::move(values));
}

Mask gen_mask(MaskKind kind, const FramePlane& decoded, const codec::PartitionMap& partition) {
  return kind == MaskKind::mean ? gen_mean_mask(decoded, partition) : gen_boundary_mask(partition);
}

FramePlane mask_to_frame(const Mask& mask) {
  std::vector<std::uint8_t> samples(mask.values().size());
  std::transform(mask.values().begin(), mask.values().end(), samples.begin(),
                 [](float v) { return static_cast<std::uint8_t>(std::lround(v * 255.0f)); });
  return FramePlane(mask.width(), mask.height(), std::move(samples));
}

}  // namespace asn::mask
