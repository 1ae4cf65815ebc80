#pragma once

#include <span>
#include <vector>

#include "asn/nn/tensor.hpp"

// Layer kernels with explicit forward/backward pairs. Backward functions
// accumulate (+=) into the gradient spans they are given so that a node
// feeding several consumers sums their contributions.
namespace asn::nn {

enum class Mode { train, infer };

inline constexpr float kBatchNormMomentum = 0.9f;
inline constexpr float kBatchNormEpsilon = 1e-5f;

// All kernels are instantiated for float (the network) and double (the
// finite-difference oracle).

// Zero-padded "same" convolution. weight: (out, in, k, k), bias: (out, 1, 1, 1), k odd.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);
template <typename T>
void conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                     std::span<T> grad_input, std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
struct BatchNormCache {
  std::vector<T> mean;  // statistics actually used for normalization
  std::vector<T> inv_std;
  Mode mode = Mode::infer;
};

// gamma, beta, running_mean, running_var: one value per channel. In train
// mode the batch statistics normalize; running stats are updated only when
// update_stats is set (running = 0.9 running + 0.1 batch, unbiased variance).
template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& input, std::span<const T> gamma, std::span<const T> beta,
                                 std::span<T> running_mean, std::span<T> running_var, Mode mode, bool update_stats,
                                 BatchNormCache<T>* cache);
template <typename T>
void batchnorm_backward(const BasicTensor<T>& input, std::span<const T> gamma, const BatchNormCache<T>& cache,
                        const BasicTensor<T>& grad_out, std::span<T> grad_input, std::span<T> grad_gamma,
                        std::span<T> grad_beta);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);
// Subgradient 0 at 0: uses the forward output.
template <typename T>
void relu_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_out, std::span<T> grad_input);

template <typename T>
BasicTensor<T> add_forward(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Channel-axis concatenation and its inverse.
template <typename T>
BasicTensor<T> concat_forward(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
void concat_backward(const BasicTensor<T>& grad_out, int a_channels, std::span<T> grad_a, std::span<T> grad_b);
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& input, int begin, int end);
template <typename T>
void slice_backward(const BasicTensor<T>& grad_out, const Shape& input_shape, int begin, std::span<T> grad_input);

// Mean over every element of (pred - target)^2. grad (optional) receives
// 2 (pred - target) / element_count.
double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad = nullptr);

}  // namespace asn::nn
