#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace asn {

// Single-channel 8-bit luminance raster, row-major.
class FramePlane {
 public:
  FramePlane() = default;
  FramePlane(int width, int height, std::uint8_t fill = 0);
  FramePlane(int width, int height, std::vector<std::uint8_t> samples);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return samples_.empty(); }

  std::uint8_t at(int x, int y) const { return samples_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t& at(int x, int y) { return samples_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<const std::uint8_t> samples() const { return samples_; }
  std::span<std::uint8_t> samples() { return samples_; }

  // Copy of the w x h window whose top-left corner is (x, y).
  FramePlane crop(int x, int y, int w, int h) const;
  // Writes `patch` into this frame with its top-left corner at (x, y).
  void paste(const FramePlane& patch, int x, int y);

  friend bool operator==(const FramePlane&, const FramePlane&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> samples_;
};

// Binary PGM (P5, maxval 255).
FramePlane read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const FramePlane& frame);

// Sorted list of *.pgm files in a directory (one sequence).
std::vector<std::filesystem::path> list_pgm(const std::filesystem::path& dir);

}  // namespace asn
