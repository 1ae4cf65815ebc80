#include "asn/codec.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "asn/error.hpp"
#include "asn/parallel.hpp"

namespace asn::codec {

namespace {

bool valid_block_size(int s) { return s == 8 || s == 16 || s == 32 || s == 64; }

}  // namespace

PartitionMap::PartitionMap(int frame_width, int frame_height, std::vector<Block> blocks)
    : width_(frame_width), height_(frame_height), blocks_(std::move(blocks)) {
  require(width_ > 0 && height_ > 0 && width_ % kMinBlockSize == 0 && height_ % kMinBlockSize == 0,
          "PartitionMap: frame dimensions must be positive multiples of 8");
  // Coverage is tracked on the 8x8 grid since every block is a multiple of 8.
  const int gw = width_ / kMinBlockSize;
  const int gh = height_ / kMinBlockSize;
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(gw) * gh, 0);
  for (const Block& b : blocks_) {
    require(valid_block_size(b.size), "PartitionMap: block size must be 8, 16, 32 or 64");
    require(b.x >= 0 && b.y >= 0 && b.x + b.size <= width_ && b.y + b.size <= height_,
            "PartitionMap: block outside frame");
    require(b.x % b.size == 0 && b.y % b.size == 0, "PartitionMap: block not aligned to its size");
    for (int gy = b.y / kMinBlockSize; gy < (b.y + b.size) / kMinBlockSize; ++gy)
      for (int gx = b.x / kMinBlockSize; gx < (b.x + b.size) / kMinBlockSize; ++gx) {
        auto& c = covered[static_cast<std::size_t>(gy) * gw + gx];
        require(c == 0, "PartitionMap: overlapping blocks");
        c = 1;
      }
  }
  require(std::all_of(covered.begin(), covered.end(), [](std::uint8_t c) { return c == 1; }),
          "PartitionMap: blocks do not cover the frame");
}

PartitionMap PartitionMap::restrict_to(int x, int y, int w, int h) const {
  require(x >= 0 && y >= 0 && x + w <= width_ && y + h <= height_, "restrict_to: window outside frame");
  std::vector<Block> inside;
  for (const Block& b : blocks_) {
    const bool in = b.x >= x && b.y >= y && b.x + b.size <= x + w && b.y + b.size <= y + h;
    const bool out = b.x + b.size <= x || b.x >= x + w || b.y + b.size <= y || b.y >= y + h;
    require(in || out, "restrict_to: window cuts through a block");
    if (in) inside.push_back({b.x - x, b.y - y, b.size});
  }
  return PartitionMap(w, h, std::move(inside));
}

std::vector<std::uint32_t> PartitionMap::owner_map() const {
  std::vector<std::uint32_t> owner(static_cast<std::size_t>(width_) * height_);
  for (std::uint32_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    for (int r = b.y; r < b.y + b.size; ++r)
      std::fill_n(owner.begin() + static_cast<std::ptrdiff_t>(r) * width_ + b.x, b.size, i);
  }
  return owner;
}

void write_partition(const std::filesystem::path& path, const PartitionMap& map) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << map.frame_width() << ' ' << map.frame_height() << '\n';
  for (const Block& b : map.blocks()) out << b.x << ' ' << b.y << ' ' << b.size << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

PartitionMap read_partition(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  int w = 0, h = 0;
  if (!(in >> w >> h)) throw FormatError("partition file: missing header in " + path.string());
  std::vector<Block> blocks;
  Block b;
  while (in >> b.x >> b.y >> b.size) blocks.push_back(b);
  if (!in.eof()) throw FormatError("partition file: malformed record in " + path.string());
  try {
    return PartitionMap(w, h, std::move(blocks));
  } catch (const PreconditionError& e) {
    throw FormatError(std::string("partition file ") + path.string() + ": " + e.what());
  }
}

QpConfig QpConfig::from_qp(int qp) {
  require(qp >= 0 && qp <= 51, "QP must be in [0, 51]");
  return {qp, std::exp2((qp - 4) / 6.0)};
}

namespace {

double block_variance(const FramePlane& f, int x0, int y0, int size) {
  double sum = 0.0, sq = 0.0;
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x) {
      const double v = f.at(x, y);
      sum += v;
      sq += v * v;
    }
  const double n = static_cast<double>(size) * size;
  const double mean = sum / n;
  return std::max(0.0, sq / n - mean * mean);
}

void split_recursive(const FramePlane& f, int x, int y, int size, double threshold, std::vector<Block>& out) {
  if (size > kMinBlockSize && block_variance(f, x, y, size) > threshold) {
    const int half = size / 2;
    split_recursive(f, x, y, half, threshold, out);
    split_recursive(f, x + half, y, half, threshold, out);
    split_recursive(f, x, y + half, half, threshold, out);
    split_recursive(f, x + half, y + half, half, threshold, out);
    return;
  }
  out.push_back({x, y, size});
}

void require_ctu_multiple(const FramePlane& frame) {
  if (frame.width() % kCtuSize != 0 || frame.height() % kCtuSize != 0)
    throw PreconditionError("frame dimensions must be multiples of 64 (got " + std::to_string(frame.width()) + "x" +
                            std::to_string(frame.height()) + "); crop first");
}

}  // namespace

PartitionMap partition_frame(const FramePlane& frame, double split_threshold) {
  require_ctu_multiple(frame);
  require(split_threshold >= 0.0, "split_threshold must be nonnegative");
  std::vector<Block> blocks;
  for (int y = 0; y < frame.height(); y += kCtuSize)
    for (int x = 0; x < frame.width(); x += kCtuSize) split_recursive(frame, x, y, kCtuSize, split_threshold, blocks);
  return PartitionMap(frame.width(), frame.height(), std::move(blocks));
}

std::uint64_t count_split_decisions(const PartitionMap& map) {
  // Leaves above the minimum size each carry a "no split" flag; every
  // internal node carries a "split" flag and a CTU with L leaves has (L-1)/3
  // internal nodes.
  std::uint64_t leaves_above_min = 0;
  std::uint64_t internal = 0;
  const int ctus_x = (map.frame_width() + kCtuSize - 1) / kCtuSize;
  const int ctus_y = (map.frame_height() + kCtuSize - 1) / kCtuSize;
  std::vector<std::uint64_t> leaves_per_ctu(static_cast<std::size_t>(ctus_x) * ctus_y, 0);
  for (const Block& b : map.blocks()) {
    if (b.size > kMinBlockSize) ++leaves_above_min;
    ++leaves_per_ctu[static_cast<std::size_t>(b.y / kCtuSize) * ctus_x + b.x / kCtuSize];
  }
  for (std::uint64_t l : leaves_per_ctu) internal += (l - 1) / 3;
  return leaves_above_min + internal;
}

namespace {

// Row k holds basis function k: alpha_k cos(pi (2i+1) k / 2n).
const std::vector<double>& dct_basis(int n) {
  static const std::array<std::vector<double>, 7> table = [] {
    std::array<std::vector<double>, 7> t;
    for (int log = 1; log <= 6; ++log) {
      const int m = 1 << log;
      auto& c = t[log];
      c.resize(static_cast<std::size_t>(m) * m);
      for (int k = 0; k < m; ++k) {
        const double alpha = k == 0 ? std::sqrt(1.0 / m) : std::sqrt(2.0 / m);
        for (int i = 0; i < m; ++i)
          c[static_cast<std::size_t>(k) * m + i] = alpha * std::cos(std::numbers::pi * (2 * i + 1) * k / (2.0 * m));
      }
    }
    return t;
  }();
  return table[static_cast<std::size_t>(std::countr_zero(static_cast<unsigned>(n)))];
}

void check_transform_size(std::size_t len, int n) {
  require(n >= 2 && n <= 64 && (n & (n - 1)) == 0, "DCT size must be one of 2, 4, 8, 16, 32, 64");
  require(len == static_cast<std::size_t>(n) * n, "DCT input must be a square n x n block");
}

// Forward: C * in * C^T. Inverse: C^T * in * C.
std::vector<double> separable(std::span<const double> in, int n, bool inverse) {
  const auto& c = dct_basis(n);
  const auto N = static_cast<std::size_t>(n);
  std::vector<double> tmp(N * N, 0.0), out(N * N, 0.0);
  // Rows: tmp[r][k] = sum_i in[r][i] * M(k, i)
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t k = 0; k < N; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < N; ++i) s += in[r * N + i] * (inverse ? c[i * N + k] : c[k * N + i]);
      tmp[r * N + k] = s;
    }
  // Columns: out[k][col] = sum_r M(k, r) * tmp[r][col]
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t col = 0; col < N; ++col) {
      double s = 0.0;
      for (std::size_t r = 0; r < N; ++r) s += (inverse ? c[r * N + k] : c[k * N + r]) * tmp[r * N + col];
      out[k * N + col] = s;
    }
  return out;
}

}  // namespace

std::vector<double> dct2d(std::span<const double> block, int n) {
  check_transform_size(block.size(), n);
  return separable(block, n, false);
}

std::vector<double> idct2d(std::span<const double> coeffs, int n) {
  check_transform_size(coeffs.size(), n);
  return separable(coeffs, n, true);
}

namespace {

// Zeroth-order entropy (bits/symbol) of a symbol multiset.
double entropy_bits(std::vector<long>& symbols) {
  std::sort(symbols.begin(), symbols.end());
  const double n = static_cast<double>(symbols.size());
  double h = 0.0;
  for (std::size_t i = 0; i < symbols.size();) {
    std::size_t j = i;
    while (j < symbols.size() && symbols[j] == symbols[i]) ++j;
    const double p = static_cast<double>(j - i) / n;
    h -= p * std::log2(p);
    i = j;
  }
  return h;
}

}  // namespace

CodecResult encode_decode(const FramePlane& frame, const QpConfig& qp, double split_threshold) {
  require_ctu_multiple(frame);
  PartitionMap partition = partition_frame(frame, split_threshold);
  FramePlane decoded(frame.width(), frame.height());
  const auto blocks = partition.blocks();
  std::vector<double> block_bits(blocks.size(), 0.0);

  parallel_for(blocks.size(), [&](std::size_t bi) {
    const Block& b = blocks[bi];
    const auto n = static_cast<std::size_t>(b.size);
    std::vector<double> samples(n * n);
    for (int r = 0; r < b.size; ++r)
      for (int c = 0; c < b.size; ++c) samples[r * n + c] = frame.at(b.x + c, b.y + r);
    std::vector<double> coeffs = dct2d(samples, b.size);
    std::vector<long> symbols(coeffs.size());
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
      symbols[i] = std::lround(coeffs[i] / qp.quant_step);
      coeffs[i] = static_cast<double>(symbols[i]) * qp.quant_step;
    }
    const std::vector<double> recon = idct2d(coeffs, b.size);
    for (int r = 0; r < b.size; ++r)
      for (int c = 0; c < b.size; ++c) {
        const double v = std::clamp(std::round(recon[r * n + c]), 0.0, 255.0);
        decoded.at(b.x + c, b.y + r) = static_cast<std::uint8_t>(v);
      }
    block_bits[bi] = entropy_bits(symbols) * static_cast<double>(symbols.size());
  });

  RateEstimate rate;
  for (double bits : block_bits) rate.payload_bits += bits;
  rate.signaling_bits = count_split_decisions(partition);
  return {std::move(decoded), std::move(partition), rate};
}

}  // namespace asn::codec
