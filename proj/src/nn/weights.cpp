#include "asn/nn/weights.hpp"

#include "asn/binio.hpp"
#include "asn/error.hpp"

namespace asn::nn {

namespace {

constexpr std::string_view kMagic = "ASNM";
constexpr std::string_view kStepKey = "step=";

}  // namespace

std::vector<std::uint8_t> encode_model(const ModelWeights& weights) {
  binio::Writer out;
  out.magic(kMagic);
  out.u32(kModelFormatVersion);
  out.str(std::string(kStepKey) + std::to_string(weights.step) + "\n" + weights.architecture);
  out.u32(static_cast<std::uint32_t>(weights.tensors.size()));
  for (const auto& t : weights.tensors) {
    out.str(t.name);
    const Shape& s = t.value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) out.u32(static_cast<std::uint32_t>(d));
    out.f32s(t.value.data());
  }
  return std::move(out.buffer());
}

ModelWeights decode_model(std::span<const std::uint8_t> bytes) {
  binio::Reader in(bytes, "ASNM model");
  in.expect_magic(kMagic);
  const std::uint32_t version = in.u32();
  if (version != kModelFormatVersion) throw FormatError("ASNM model: unsupported version " + std::to_string(version));
  ModelWeights w;
  const std::string descriptor = in.str();
  const auto eol = descriptor.find('\n');
  if (!descriptor.starts_with(kStepKey) || eol == std::string::npos)
    throw FormatError("ASNM model: descriptor lacks step counter");
  try {
    w.step = std::stoull(descriptor.substr(kStepKey.size(), eol - kStepKey.size()));
  } catch (const std::exception&) {
    throw FormatError("ASNM model: bad step counter");
  }
  w.architecture = descriptor.substr(eol + 1);
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.str();
    Shape s;
    s.n = static_cast<int>(in.u32());
    s.c = static_cast<int>(in.u32());
    s.h = static_cast<int>(in.u32());
    s.w = static_cast<int>(in.u32());
    if (s.size() * sizeof(float) > in.remaining()) throw FormatError("ASNM model: truncated tensor " + name);
    Tensor t(s);
    in.f32s(t.data());
    w.tensors.push_back({std::move(name), std::move(t)});
  }
  if (in.remaining() != 0) throw FormatError("ASNM model: trailing bytes");
  return w;
}

void save_model(const std::filesystem::path& path, const ModelWeights& weights) {
  binio::write_file(path, encode_model(weights));
}

ModelWeights load_model(const std::filesystem::path& path) { return decode_model(binio::read_file(path)); }

}  // namespace asn::nn
