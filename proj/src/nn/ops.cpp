#include "asn/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "asn/error.hpp"
#include "asn/parallel.hpp"

namespace asn::nn {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void check_conv_shapes(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  const Shape& ws = weight.shape();
  require(ws.h == ws.w && ws.h % 2 == 1, "conv2d: kernel must be square with odd size, got " + ws.str());
  require(input.shape().c == ws.c, "conv2d: input has " + std::to_string(input.shape().c) +
                                       " channels, weight expects " + std::to_string(ws.c));
  require(input.shape().h >= 1 && input.shape().w >= 1, "conv2d: empty spatial dims");
  require(bias.size() == static_cast<std::size_t>(ws.n), "conv2d: bias length must equal output channels");
}

// Rows: (channel, ky, kx); columns: output pixel. Zero padding k/2.
template <typename T>
void im2col(std::span<const T> sample, int channels, int h, int w, int k, std::vector<T>& cols) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  cols.assign(static_cast<std::size_t>(channels) * k * k * hw, T(0));
  for (int c = 0; c < channels; ++c) {
    const T* plane = sample.data() + c * hw;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h || x1 <= x0) continue;
          std::copy(plane + static_cast<std::size_t>(sy) * w + x0 + dx, plane + static_cast<std::size_t>(sy) * w + x1 + dx,
                    row + static_cast<std::size_t>(y) * w + x0);
        }
      }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& cols, int channels, int h, int w, int k, std::span<T> sample) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    T* plane = sample.data() + c * hw;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          T* dst = plane + static_cast<std::size_t>(sy) * w + dx;
          const T* src = row + static_cast<std::size_t>(y) * w;
          for (int x = x0; x < x1; ++x) dst[x] += src[x];
        }
      }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  check_conv_shapes(input, weight, bias);
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  const int k = ws.h;
  const auto hw = static_cast<Eigen::Index>(is.plane());
  const Eigen::Index patch = static_cast<Eigen::Index>(ws.c) * k * k;
  BasicTensor<T> out({is.n, ws.n, is.h, is.w});
  const ConstMatMap<T> wmat(weight.raw(), ws.n, patch);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.raw(), ws.n);

  parallel_for(static_cast<std::size_t>(is.n), [&](std::size_t n) {
    MatMap<T> omat(out.sample(static_cast<int>(n)).data(), ws.n, hw);
    if (k == 1) {
      omat.noalias() = wmat * ConstMatMap<T>(input.sample(static_cast<int>(n)).data(), patch, hw);
    } else {
      thread_local std::vector<T> cols;
      im2col(input.sample(static_cast<int>(n)), is.c, is.h, is.w, k, cols);
      omat.noalias() = wmat * ConstMatMap<T>(cols.data(), patch, hw);
    }
    omat.colwise() += bvec;
  });
  return out;
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                     std::span<T> grad_input, std::span<T> grad_weight, std::span<T> grad_bias) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  const int k = ws.h;
  require(grad_out.shape() == Shape{is.n, ws.n, is.h, is.w}, "conv2d_backward: grad_out shape mismatch");
  require(grad_input.empty() || grad_input.size() == input.size(), "conv2d_backward: grad_input size mismatch");
  require(grad_weight.size() == weight.size() && grad_bias.size() == static_cast<std::size_t>(ws.n),
          "conv2d_backward: parameter gradient size mismatch");
  const auto hw = static_cast<Eigen::Index>(is.plane());
  const Eigen::Index patch = static_cast<Eigen::Index>(ws.c) * k * k;
  const ConstMatMap<T> wmat(weight.raw(), ws.n, patch);

  // Per-sample parameter gradients, reduced in sample order afterwards so the
  // sum does not depend on the worker count.
  const std::size_t wsize = weight.size();
  std::vector<T> dw(static_cast<std::size_t>(is.n) * wsize);
  std::vector<T> db(static_cast<std::size_t>(is.n) * ws.n);

  parallel_for(static_cast<std::size_t>(is.n), [&](std::size_t n) {
    const int ni = static_cast<int>(n);
    const ConstMatMap<T> gmat(grad_out.sample(ni).data(), ws.n, hw);
    thread_local std::vector<T> cols;
    const T* cols_ptr = input.sample(ni).data();
    if (k != 1) {
      im2col(input.sample(ni), is.c, is.h, is.w, k, cols);
      cols_ptr = cols.data();
    }
    MatMap<T>(dw.data() + n * wsize, ws.n, patch).noalias() = gmat * ConstMatMap<T>(cols_ptr, patch, hw).transpose();
    // Plain loop: Eigen's vectorized reductions sum in an alignment-dependent order.
    for (int o = 0; o < ws.n; ++o) {
      const T* g = grad_out.sample(ni).data() + static_cast<std::size_t>(o) * hw;
      T acc = 0;
      for (Eigen::Index i = 0; i < hw; ++i) acc += g[i];
      db[n * ws.n + static_cast<std::size_t>(o)] = acc;
    }
    if (grad_input.empty()) return;
    auto gin = grad_input.subspan(n * is.sample(), is.sample());
    if (k == 1) {
      MatMap<T>(gin.data(), patch, hw).noalias() += wmat.transpose() * gmat;
    } else {
      thread_local std::vector<T> dcols;
      dcols.resize(static_cast<std::size_t>(patch) * hw);
      MatMap<T>(dcols.data(), patch, hw).noalias() = wmat.transpose() * gmat;
      col2im_add(dcols, is.c, is.h, is.w, k, gin);
    }
  });

  for (int n = 0; n < is.n; ++n) {
    const T* src = dw.data() + static_cast<std::size_t>(n) * wsize;
    for (std::size_t i = 0; i < wsize; ++i) grad_weight[i] += src[i];
    const T* bsrc = db.data() + static_cast<std::size_t>(n) * ws.n;
    for (int o = 0; o < ws.n; ++o) grad_bias[o] += bsrc[o];
  }
}

template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& input, std::span<const T> gamma, std::span<const T> beta,
                                 std::span<T> running_mean, std::span<T> running_var, Mode mode, bool update_stats,
                                 BatchNormCache<T>* cache) {
  const Shape& s = input.shape();
  const auto channels = static_cast<std::size_t>(s.c);
  require(gamma.size() == channels && beta.size() == channels && running_mean.size() == channels &&
              running_var.size() == channels,
          "batchnorm: per-channel parameters do not match channel count");
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  require(mode == Mode::infer || count > 1, "batchnorm: train mode needs more than one value per channel");

  std::vector<T> mean(channels), inv_std(channels);
  BasicTensor<T> out(s);
  parallel_for(channels, [&](std::size_t c) {
    double m, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = input.raw() + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      m = sum / count;
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = input.raw() + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      var = sq / count;
      if (update_stats) {
        const T momentum = kBatchNormMomentum;
        running_mean[c] = momentum * running_mean[c] + (T(1) - momentum) * static_cast<T>(m);
        running_var[c] = momentum * running_var[c] + (T(1) - momentum) * static_cast<T>(var * count / (count - 1.0));
      }
    } else {
      m = running_mean[c];
      var = running_var[c];
    }
    mean[c] = static_cast<T>(m);
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEpsilon));
    const T scale = gamma[c] * inv_std[c];
    const T shift = beta[c] - scale * mean[c];
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      const T* p = input.raw() + off;
      T* o = out.raw() + off;
      for (std::size_t i = 0; i < plane; ++i) o[i] = scale * p[i] + shift;
    }
  });
  if (cache) *cache = {std::move(mean), std::move(inv_std), mode};
  return out;
}

template <typename T>
void batchnorm_backward(const BasicTensor<T>& input, std::span<const T> gamma, const BatchNormCache<T>& cache,
                        const BasicTensor<T>& grad_out, std::span<T> grad_input, std::span<T> grad_gamma,
                        std::span<T> grad_beta) {
  const Shape& s = input.shape();
  require(grad_out.shape() == s, "batchnorm_backward: grad_out shape mismatch");
  const auto channels = static_cast<std::size_t>(s.c);
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  parallel_for(channels, [&](std::size_t c) {
    const double mu = cache.mean[c];
    const double is = cache.inv_std[c];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double dy = grad_out.raw()[off + i];
        sum_dy += dy;
        sum_dy_xhat += dy * (input.raw()[off + i] - mu) * is;
      }
    }
    grad_gamma[c] += static_cast<T>(sum_dy_xhat);
    grad_beta[c] += static_cast<T>(sum_dy);
    if (grad_input.empty()) return;
    const double g = gamma[c] * is;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double dy = grad_out.raw()[off + i];
        if (cache.mode == Mode::train) {
          const double xhat = (input.raw()[off + i] - mu) * is;
          grad_input[off + i] += static_cast<T>(g * (dy - sum_dy / count - xhat * sum_dy_xhat / count));
        } else {
          grad_input[off + i] += static_cast<T>(g * dy);
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  std::transform(input.data().begin(), input.data().end(), out.data().begin(),
                 [](T v) { return v > T(0) ? v : T(0); });
  return out;
}

template <typename T>
void relu_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_out, std::span<T> grad_input) {
  require(output.shape() == grad_out.shape() && grad_input.size() == output.size(), "relu_backward: shape mismatch");
  for (std::size_t i = 0; i < output.size(); ++i)
    if (output.raw()[i] > T(0)) grad_input[i] += grad_out.raw()[i];
}

template <typename T>
BasicTensor<T> add_forward(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "add: shapes differ " + a.shape().str() + " vs " + b.shape().str());
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.raw()[i] = a.raw()[i] + b.raw()[i];
  return out;
}

template <typename T>
BasicTensor<T> concat_forward(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, "concat: non-channel dims differ");
  BasicTensor<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    auto dst = out.sample(n);
    std::copy(a.sample(n).begin(), a.sample(n).end(), dst.begin());
    std::copy(b.sample(n).begin(), b.sample(n).end(), dst.begin() + static_cast<std::ptrdiff_t>(sa.sample()));
  }
  return out;
}

template <typename T>
void concat_backward(const BasicTensor<T>& grad_out, int a_channels, std::span<T> grad_a, std::span<T> grad_b) {
  const Shape& s = grad_out.shape();
  const std::size_t a_len = static_cast<std::size_t>(a_channels) * s.plane();
  const std::size_t b_len = s.sample() - a_len;
  for (int n = 0; n < s.n; ++n) {
    auto src = grad_out.sample(n);
    for (std::size_t i = 0; i < a_len; ++i) grad_a[n * a_len + i] += src[i];
    for (std::size_t i = 0; i < b_len; ++i) grad_b[n * b_len + i] += src[a_len + i];
  }
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& input, int begin, int end) {
  const Shape& s = input.shape();
  require(0 <= begin && begin < end && end <= s.c, "slice_channels: bad channel range");
  BasicTensor<T> out({s.n, end - begin, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    auto src = input.sample(n).subspan(begin * s.plane(), out.shape().sample());
    std::copy(src.begin(), src.end(), out.sample(n).begin());
  }
  return out;
}

template <typename T>
void slice_backward(const BasicTensor<T>& grad_out, const Shape& input_shape, int begin, std::span<T> grad_input) {
  const Shape& s = grad_out.shape();
  for (int n = 0; n < s.n; ++n) {
    auto src = grad_out.sample(n);
    T* dst = grad_input.data() + n * input_shape.sample() + begin * input_shape.plane();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  }
}

double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad) {
  require(pred.shape() == target.shape(), "mse_loss: shapes differ " + pred.shape().str() + " vs " +
                                              target.shape().str());
  const double count = static_cast<double>(pred.size());
  require(count > 0, "mse_loss: empty tensors");
  double sum = 0.0;
  if (grad) *grad = Tensor(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.raw()[i]) - target.raw()[i];
    sum += d * d;
    if (grad) grad->raw()[i] = static_cast<float>(2.0 * d / count);
  }
  return sum / count;
}

#define ASN_INSTANTIATE_OPS(T)                                                                                 \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
  template void conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, std::span<T>, \
                                std::span<T>, std::span<T>);                                                       \
  template BasicTensor<T> batchnorm_forward(const BasicTensor<T>&, std::span<const T>, std::span<const T>,         \
                                            std::span<T>, std::span<T>, Mode, bool, BatchNormCache<T>*);           \
  template void batchnorm_backward(const BasicTensor<T>&, std::span<const T>, const BatchNormCache<T>&,             \
                                   const BasicTensor<T>&, std::span<T>, std::span<T>, std::span<T>);               \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                                     \
  template void relu_backward(const BasicTensor<T>&, const BasicTensor<T>&, std::span<T>);                         \
  template BasicTensor<T> add_forward(const BasicTensor<T>&, const BasicTensor<T>&);                               \
  template BasicTensor<T> concat_forward(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template void concat_backward(const BasicTensor<T>&, int, std::span<T>, std::span<T>);                           \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, int, int);                                         \
  template void slice_backward(const BasicTensor<T>&, const Shape&, int, std::span<T>);

ASN_INSTANTIATE_OPS(float)
ASN_INSTANTIATE_OPS(double)

}  // namespace asn::nn
