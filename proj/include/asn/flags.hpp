#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

// Per-patch bank selections and their "ASNF" serialization: magic, u32
// version, u32 patch count, then 2-bit flags packed most-significant-first
// with a zero-padded final byte.
namespace asn::ensemble {

inline constexpr std::uint32_t kFlagFormatVersion = 1;
inline constexpr int kFlagBits = 2;

struct FlagStream {
  std::vector<std::uint8_t> flags;  // raster patch order, each in [0, 3]

  std::size_t patch_count() const { return flags.size(); }
  friend bool operator==(const FlagStream&, const FlagStream&) = default;
};

std::vector<std::uint8_t> pack_flags(std::span<const std::uint8_t> flags);
// Throws FormatError unless `packed` is exactly the packing of `count` flags.
std::vector<std::uint8_t> unpack_flags(std::span<const std::uint8_t> packed, std::size_t count);

std::vector<std::uint8_t> encode_flag_stream(const FlagStream& stream);
FlagStream decode_flag_stream(std::span<const std::uint8_t> bytes);

void write_flags(const std::filesystem::path& path, const FlagStream& stream);
FlagStream read_flags(const std::filesystem::path& path);

}  // namespace asn::ensemble
