#pragma once

#include <cstdint>
#include <filesystem>
#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asn/error.hpp"
#include "asn/nn/tensor.hpp"

namespace asn::nn {

template <typename T>
struct BasicNamedTensor {
  std::string name;
  BasicTensor<T> value;
};

// Named, ordered parameter tensors plus the architecture descriptor that
// produced them. Batch-norm running statistics live here too, as buffers.
template <typename T>
class BasicModelWeights {
 public:
  std::string architecture;
  std::uint64_t step = 0;
  std::vector<BasicNamedTensor<T>> tensors;

  // Running statistics are buffers: saved, but never optimized.
  static bool is_buffer(std::string_view name) {
    return name.ends_with(".running_mean") || name.ends_with(".running_var");
  }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].name == name) return i;
    return std::nullopt;
  }
  BasicTensor<T>& at(std::string_view name) { return tensors[index_of(name)].value; }
  const BasicTensor<T>& at(std::string_view name) const { return tensors[index_of(name)].value; }

  // Number of trainable scalars.
  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& t : tensors)
      if (!is_buffer(t.name)) total += t.value.size();
    return total;
  }
  void zero_grad() {
    for (auto& t : tensors) t.value.zero_grad();
  }
  void drop_grads() {
    for (auto& t : tensors) t.value.drop_grad();
  }
  // Same names, shapes and values (gradients ignored).
  bool same_values(const BasicModelWeights& other) const {
    if (tensors.size() != other.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& a = tensors[i];
      const auto& b = other.tensors[i];
      if (a.name != b.name || !(a.value.shape() == b.value.shape())) return false;
      if (!std::equal(a.value.data().begin(), a.value.data().end(), b.value.data().begin())) return false;
    }
    return true;
  }

  template <typename U>
  BasicModelWeights<U> cast() const {
    BasicModelWeights<U> out;
    out.architecture = architecture;
    out.step = step;
    for (const auto& t : tensors) out.tensors.push_back({t.name, t.value.template cast<U>()});
    return out;
  }

 private:
  std::size_t index_of(std::string_view name) const {
    const auto i = find(name);
    require(i.has_value(), "ModelWeights: no tensor named " + std::string(name));
    return *i;
  }
};

using NamedTensor = BasicNamedTensor<float>;
using ModelWeights = BasicModelWeights<float>;

// ASNM container: "ASNM", u32 version, descriptor (u32 length + UTF-8), u32
// tensor count, then per tensor: name (u32 length + UTF-8), 4 x u32 shape,
// little-endian float32 data.
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> encode_model(const ModelWeights& weights);
ModelWeights decode_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const ModelWeights& weights);
ModelWeights load_model(const std::filesystem::path& path);

}  // namespace asn::nn
