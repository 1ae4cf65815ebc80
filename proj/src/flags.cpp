#include "asn/flags.hpp"

#include <string>

#include "asn/binio.hpp"
#include "asn/error.hpp"

namespace asn::ensemble {

namespace {

constexpr std::string_view kMagic = "ASNF";

std::size_t packed_size(std::size_t count) { return (count * kFlagBits + 7) / 8; }

}  // namespace

std::vector<std::uint8_t> pack_flags(std::span<const std::uint8_t> flags) {
  std::vector<std::uint8_t> out(packed_size(flags.size()), 0);
  for (std::size_t i = 0; i < flags.size(); ++i) {
    require(flags[i] <= 3, "pack_flags: flag " + std::to_string(flags[i]) + " at patch " + std::to_string(i) +
                               " is out of range [0, 3]");
    out[i / 4] |= static_cast<std::uint8_t>(flags[i] << (6 - 2 * (i % 4)));
  }
  return out;
}

std::vector<std::uint8_t> unpack_flags(std::span<const std::uint8_t> packed, std::size_t count) {
  if (packed.size() != packed_size(count))
    throw FormatError("flag stream: " + std::to_string(packed.size()) + " bytes for " + std::to_string(count) +
                      " flags, expected " + std::to_string(packed_size(count)));
  std::vector<std::uint8_t> flags(count);
  for (std::size_t i = 0; i < count; ++i) flags[i] = (packed[i / 4] >> (6 - 2 * (i % 4))) & 3;
  if (count % 4 != 0 && (packed.back() & ((1u << (8 - 2 * (count % 4))) - 1)) != 0)
    throw FormatError("flag stream: nonzero padding bits");
  return flags;
}

std::vector<std::uint8_t> encode_flag_stream(const FlagStream& stream) {
  binio::Writer out;
  out.magic(kMagic);
  out.u32(kFlagFormatVersion);
  out.u32(static_cast<std::uint32_t>(stream.flags.size()));
  const auto packed = pack_flags(stream.flags);
  out.bytes(packed.data(), packed.size());
  return std::move(out.buffer());
}

FlagStream decode_flag_stream(std::span<const std::uint8_t> bytes) {
  binio::Reader in(bytes, "ASNF flag stream");
  in.expect_magic(kMagic);
  const std::uint32_t version = in.u32();
  if (version != kFlagFormatVersion) throw FormatError("ASNF flag stream: unsupported version " + std::to_string(version));
  const std::uint32_t count = in.u32();
  return {unpack_flags(bytes.subspan(bytes.size() - in.remaining()), count)};
}

void write_flags(const std::filesystem::path& path, const FlagStream& stream) {
  binio::write_file(path, encode_flag_stream(stream));
}

FlagStream read_flags(const std::filesystem::path& path) { return decode_flag_stream(binio::read_file(path)); }

}  // namespace asn::ensemble
