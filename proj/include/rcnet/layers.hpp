#pragma once

// Forward and backward kernels for the layers RC-Net is built from. These are
// pure tensor functions; ops.hpp wires them onto an autograd tape.

#include "rcnet/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcnet {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// conv2d

template <typename Scalar>
struct ConvParams {
  Tensor<Scalar> kernel;  // [out_ch, in_ch, k, k], k in {1, 3}
  Tensor<Scalar> bias;    // [out_ch]
};

inline void check_conv_shapes(const Shape& x, const Shape& kernel, const Shape& bias,
                              Index padding) {
  if (x.size() != 4) throw ShapeError("conv2d: input must be rank 4, got " + to_string(x));
  if (kernel.size() != 4)
    throw ShapeError("conv2d: kernel must be rank 4, got " + to_string(kernel));
  if (kernel[2] != kernel[3] || (kernel[2] != 1 && kernel[2] != 3))
    throw ShapeError("conv2d: only 3x3 and 1x1 kernels are supported, got " +
                     to_string(kernel));
  if (kernel[1] != x[1])
    throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(x[1]) +
                     " channels but kernel expects " + std::to_string(kernel[1]));
  if (bias.size() != 1 || bias[0] != kernel[0])
    throw ShapeError("conv2d: bias shape " + to_string(bias) + " does not match " +
                     std::to_string(kernel[0]) + " output channels");
  if (padding < 0) throw ShapeError("conv2d: negative padding");
  if (x[2] + 2 * padding < kernel[2] || x[3] + 2 * padding < kernel[3])
    throw ShapeError("conv2d: input smaller than kernel");
}

namespace detail {

// Unfolds one sample [C, H, W] into a [C*k*k, Ho*Wo] patch matrix.
template <typename Scalar>
void im2col(const Scalar* x, Index channels, Index height, Index width, Index k, Index pad,
            Index out_h, Index out_w, RowMatrix<Scalar>& cols) {
  cols.resize(channels * k * k, out_h * out_w);
  for (Index c = 0; c < channels; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* row = cols.row((c * k + ky) * k + kx).data();
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy + ky - pad;
          Scalar* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = x + (c * height + iy) * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox + kx - pad;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : Scalar(0);
          }
        }
      }
}

// Adjoint of im2col: scatters patch-matrix gradients back onto [C, H, W].
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, Index channels, Index height, Index width, Index k,
            Index pad, Index out_h, Index out_w, Scalar* dx) {
  for (Index c = 0; c < channels; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* row = cols.row((c * k + ky) * k + kx).data();
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy + ky - pad;
          if (iy < 0 || iy >= height) continue;
          Scalar* dst = dx + (c * height + iy) * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox + kx - pad;
            if (ix >= 0 && ix < width) dst[ix] += row[oy * out_w + ox];
          }
        }
      }
}

template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;

}  // namespace detail

/// Stride-1 2-D convolution (cross-correlation) with zero padding.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, Index padding) {
  check_conv_shapes(x.shape(), kernel.shape(), bias.shape(), padding);
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index cout = kernel.dim(0), k = kernel.dim(2);
  const Index oh = h + 2 * padding - k + 1, ow = w + 2 * padding - k + 1;

  Tensor<Scalar> out({n, cout, oh, ow});
  detail::ConstRowMap<Scalar> wmat(kernel.data().data(), cout, cin * k * k);
  const auto b = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.data().data(),
                                                                           cout);
  RowMatrix<Scalar> cols;
  for (Index s = 0; s < n; ++s) {
    const Scalar* xs = x.data().data() + s * cin * h * w;
    detail::RowMap<Scalar> ys(out.data().data() + s * cout * oh * ow, cout, oh * ow);
    if (k == 1 && padding == 0) {
      ys.noalias() = wmat * detail::ConstRowMap<Scalar>(xs, cin, h * w);
    } else {
      detail::im2col(xs, cin, h, w, k, padding, oh, ow, cols);
      ys.noalias() = wmat * cols;
    }
    ys.colwise() += b;
  }
  return out;
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input, kernel, bias;
};

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                                  Index padding, const Tensor<Scalar>& grad_out) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index cout = kernel.dim(0), k = kernel.dim(2);
  const Index oh = grad_out.dim(2), ow = grad_out.dim(3);

  ConvGrads<Scalar> g{zeros_like(x), zeros_like(kernel), zeros<Scalar>({cout})};
  detail::ConstRowMap<Scalar> wmat(kernel.data().data(), cout, cin * k * k);
  detail::RowMap<Scalar> dw(g.kernel.data().data(), cout, cin * k * k);
  auto db = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(g.bias.data().data(), cout);

  RowMatrix<Scalar> cols, dcols;
  for (Index s = 0; s < n; ++s) {
    const Scalar* xs = x.data().data() + s * cin * h * w;
    Scalar* dxs = g.input.data().data() + s * cin * h * w;
    detail::ConstRowMap<Scalar> dy(grad_out.data().data() + s * cout * oh * ow, cout, oh * ow);
    db += dy.rowwise().sum();
    if (k == 1 && padding == 0) {
      detail::ConstRowMap<Scalar> xm(xs, cin, h * w);
      dw.noalias() += dy * xm.transpose();
      detail::RowMap<Scalar>(dxs, cin, h * w).noalias() += wmat.transpose() * dy;
    } else {
      detail::im2col(xs, cin, h, w, k, padding, oh, ow, cols);
      dw.noalias() += dy * cols.transpose();
      dcols.noalias() = wmat.transpose() * dy;
      detail::col2im(dcols, cin, h, w, k, padding, oh, ow, dxs);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// batchnorm2d

template <typename Scalar>
struct BatchNormParams {
  Tensor<Scalar> gamma, beta;                // learnable, [C]
  Tensor<Scalar> running_mean, running_var;  // state, [C]
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);
};

/// Intermediate values needed by the backward pass.
template <typename Scalar>
struct BatchNormCache {
  Tensor<Scalar> normalized;                    // x_hat, same shape as x
  Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std;  // per channel
  Mode mode = Mode::Train;
};

/// Per-channel normalization over (N, H, W). In train mode the batch
/// statistics (biased variance) are used and the running statistics are
/// updated with `running <- (1 - momentum) * running + momentum * batch`.
/// Eval mode uses the running statistics and leaves them untouched.
template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                           const Tensor<Scalar>& beta, Tensor<Scalar>& running_mean,
                           Tensor<Scalar>& running_var, Scalar momentum, Scalar eps, Mode mode,
                           BatchNormCache<Scalar>* cache = nullptr) {
  if (x.rank() != 4) throw ShapeError("batchnorm2d: input must be rank 4");
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (const Tensor<Scalar>* t : {&gamma, &beta, static_cast<const Tensor<Scalar>*>(&running_mean),
                                  static_cast<const Tensor<Scalar>*>(&running_var)})
    if (t->shape() != Shape{c})
      throw ShapeError("batchnorm2d: parameter shape " + to_string(t->shape()) +
                       " does not match " + std::to_string(c) + " channels");
  if (!(eps > Scalar(0))) throw std::invalid_argument("batchnorm2d: eps must be positive");
  const Index count = n * plane;
  if (mode == Mode::Train && count < 2)
    throw ShapeError("batchnorm2d: train mode needs at least 2 elements per channel");

  Eigen::Array<Scalar, Eigen::Dynamic, 1> mu(c), var(c);
  if (mode == Mode::Train) {
    for (Index ch = 0; ch < c; ++ch) {
      Scalar s = 0;
      for (Index s_ = 0; s_ < n; ++s_)
        s += x.array().segment((s_ * c + ch) * plane, plane).sum();
      mu[ch] = s / Scalar(count);
      Scalar v = 0;
      for (Index s_ = 0; s_ < n; ++s_)
        v += (x.array().segment((s_ * c + ch) * plane, plane) - mu[ch]).square().sum();
      var[ch] = v / Scalar(count);
    }
    running_mean.array() = (Scalar(1) - momentum) * running_mean.array() + momentum * mu;
    running_var.array() = (Scalar(1) - momentum) * running_var.array() + momentum * var;
  } else {
    mu = running_mean.array();
    var = running_var.array();
  }
  const Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std = (var + eps).rsqrt();

  Tensor<Scalar> out(x.shape());
  Tensor<Scalar> xhat(x.shape());
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (s * c + ch) * plane;
      xhat.array().segment(off, plane) = (x.array().segment(off, plane) - mu[ch]) * inv_std[ch];
      out.array().segment(off, plane) =
          gamma[ch] * xhat.array().segment(off, plane) + beta[ch];
    }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = inv_std;
    cache->mode = mode;
  }
  return out;
}

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input, gamma, beta;
};

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm2d_backward(const BatchNormCache<Scalar>& cache,
                                            const Tensor<Scalar>& gamma,
                                            const Tensor<Scalar>& grad_out) {
  const Tensor<Scalar>& xhat = cache.normalized;
  const Index n = xhat.dim(0), c = xhat.dim(1), plane = xhat.dim(2) * xhat.dim(3);
  const Scalar count = Scalar(n * plane);
  BatchNormGrads<Scalar> g{Tensor<Scalar>(xhat.shape()), zeros<Scalar>({c}), zeros<Scalar>({c})};
  for (Index ch = 0; ch < c; ++ch) {
    Scalar sum_dy = 0, sum_dy_xhat = 0;
    for (Index s = 0; s < n; ++s) {
      const Index off = (s * c + ch) * plane;
      sum_dy += grad_out.array().segment(off, plane).sum();
      sum_dy_xhat +=
          (grad_out.array().segment(off, plane) * xhat.array().segment(off, plane)).sum();
    }
    g.beta[ch] = sum_dy;
    g.gamma[ch] = sum_dy_xhat;
    const Scalar k = gamma[ch] * cache.inv_std[ch];
    for (Index s = 0; s < n; ++s) {
      const Index off = (s * c + ch) * plane;
      if (cache.mode == Mode::Eval) {
        g.input.array().segment(off, plane) = k * grad_out.array().segment(off, plane);
      } else {
        g.input.array().segment(off, plane) =
            k * (grad_out.array().segment(off, plane) - sum_dy / count -
                 xhat.array().segment(off, plane) * (sum_dy_xhat / count));
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// relu

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.shape(), x.array().max(Scalar(0)));
}

// ---------------------------------------------------------------------------
// 2x2 stride-2 max pooling and index unpooling

/// Argmax of each pooled element, stored as a flat offset (h * W + w) into
/// the corresponding input plane.
struct PoolIndices {
  Shape input_shape;               // [N, C, H, W] of the pooled input
  Shape output_shape;              // [N, C, H/2, W/2]
  std::vector<Index> offsets;      // one per pooled element, row-major
};

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> values;
  PoolIndices indices;
};

/// Ties resolve to the first element of the window in row-major order.
template <typename Scalar>
PoolResult<Scalar> maxpool2d(const Tensor<Scalar>& x) {
  if (x.rank() != 4) throw ShapeError("maxpool2d: input must be rank 4");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2)
    throw ShapeError("maxpool2d: spatial dims must be even, got " + to_string(x.shape()));
  const Index oh = h / 2, ow = w / 2;
  PoolResult<Scalar> r{Tensor<Scalar>({n, c, oh, ow}),
                       PoolIndices{x.shape(), {n, c, oh, ow}, {}}};
  r.indices.offsets.resize(static_cast<std::size_t>(n * c * oh * ow));
  Index o = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    const Scalar* src = x.data().data() + plane * h * w;
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx, ++o) {
        Index best = (2 * y) * w + 2 * xx;
        for (Index dy = 0; dy < 2; ++dy)
          for (Index dx = 0; dx < 2; ++dx) {
            const Index cand = (2 * y + dy) * w + 2 * xx + dx;
            if (src[cand] > src[best]) best = cand;
          }
        r.values[o] = src[best];
        r.indices.offsets[static_cast<std::size_t>(o)] = best;
      }
  }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const PoolIndices& idx, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> dx(idx.input_shape);
  const Index plane_in = idx.input_shape[2] * idx.input_shape[3];
  const Index plane_out = idx.output_shape[2] * idx.output_shape[3];
  for (Index o = 0; o < grad_out.size(); ++o)
    dx[(o / plane_out) * plane_in + idx.offsets[static_cast<std::size_t>(o)]] += grad_out[o];
  return dx;
}

inline void check_unpool(const Shape& y, const PoolIndices& idx) {
  if (y != idx.output_shape)
    throw ShapeError("maxunpool2d: input shape " + to_string(y) +
                     " does not match pool indices " + to_string(idx.output_shape));
}

/// Places each value at its recorded argmax, zeros elsewhere.
template <typename Scalar>
Tensor<Scalar> maxunpool2d(const Tensor<Scalar>& y, const PoolIndices& idx) {
  check_unpool(y.shape(), idx);
  Tensor<Scalar> out(idx.input_shape);
  const Index plane_in = idx.input_shape[2] * idx.input_shape[3];
  const Index plane_out = idx.output_shape[2] * idx.output_shape[3];
  for (Index o = 0; o < y.size(); ++o)
    out[(o / plane_out) * plane_in + idx.offsets[static_cast<std::size_t>(o)]] = y[o];
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxunpool2d_backward(const PoolIndices& idx, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> dy(idx.output_shape);
  const Index plane_in = idx.input_shape[2] * idx.input_shape[3];
  const Index plane_out = idx.output_shape[2] * idx.output_shape[3];
  for (Index o = 0; o < dy.size(); ++o)
    dy[o] = grad_out[(o / plane_out) * plane_in + idx.offsets[static_cast<std::size_t>(o)]];
  return dy;
}

// ---------------------------------------------------------------------------
// softmax over channels

/// Per-pixel softmax across the channel axis, with max-subtraction.
template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& x) {
  if (x.rank() != 4) throw ShapeError("softmax_channels: input must be rank 4");
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<Scalar> out(x.shape());
  for (Index s = 0; s < n; ++s)
    for (Index p = 0; p < plane; ++p) {
      Scalar m = -std::numeric_limits<Scalar>::infinity();
      for (Index ch = 0; ch < c; ++ch) m = std::max(m, x[(s * c + ch) * plane + p]);
      Scalar z = 0;
      for (Index ch = 0; ch < c; ++ch) {
        const Scalar e = std::exp(x[(s * c + ch) * plane + p] - m);
        out[(s * c + ch) * plane + p] = e;
        z += e;
      }
      for (Index ch = 0; ch < c; ++ch) out[(s * c + ch) * plane + p] /= z;
    }
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_channels_backward(const Tensor<Scalar>& probs,
                                         const Tensor<Scalar>& grad_out) {
  const Index n = probs.dim(0), c = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  Tensor<Scalar> dx(probs.shape());
  for (Index s = 0; s < n; ++s)
    for (Index p = 0; p < plane; ++p) {
      Scalar dot = 0;
      for (Index ch = 0; ch < c; ++ch)
        dot += probs[(s * c + ch) * plane + p] * grad_out[(s * c + ch) * plane + p];
      for (Index ch = 0; ch < c; ++ch) {
        const Index i = (s * c + ch) * plane + p;
        dx[i] = probs[i] * (grad_out[i] - dot);
      }
    }
  return dx;
}

// ---------------------------------------------------------------------------
// weighted cross-entropy

struct ClassWeights {
  double background = 1.0;
  double vessel = 1.0;

  double operator[](int cls) const { return cls ? vessel : background; }
};

inline constexpr double kLogClamp = 1e-12;

inline void check_wce_shapes(const Shape& probs, const Shape& target, const Shape& fov) {
  if (probs.size() != 4 || probs[1] != 2)
    throw ShapeError("weighted_cross_entropy: probs must be [N,2,H,W], got " + to_string(probs));
  const Shape expect{probs[0], probs[2], probs[3]};
  if (target != expect)
    throw ShapeError("weighted_cross_entropy: target shape " + to_string(target) +
                     " expected " + to_string(expect));
  if (fov != expect)
    throw ShapeError("weighted_cross_entropy: fov shape " + to_string(fov) + " expected " +
                     to_string(expect));
}

/// loss = -(1/|FOV|) * sum_{p in FOV} w_t(p) * log(max(probs[t(p)](p), 1e-12)).
/// `target` and `fov` are [N, H, W] maps holding 0/1.
template <typename Scalar>
Scalar weighted_cross_entropy(const Tensor<Scalar>& probs, const Tensor<Scalar>& target,
                              const ClassWeights& weights, const Tensor<Scalar>& fov) {
  check_wce_shapes(probs.shape(), target.shape(), fov.shape());
  const Index n = probs.dim(0), plane = probs.dim(2) * probs.dim(3);
  double total = 0.0;
  Index count = 0;
  for (Index s = 0; s < n; ++s)
    for (Index p = 0; p < plane; ++p) {
      if (fov[s * plane + p] < Scalar(0.5)) continue;
      const int t = target[s * plane + p] > Scalar(0.5) ? 1 : 0;
      const double prob = probs[(s * 2 + t) * plane + p];
      total += weights[t] * std::log(std::max(prob, kLogClamp));
      ++count;
    }
  if (count == 0) throw std::invalid_argument("weighted_cross_entropy: empty FOV");
  return static_cast<Scalar>(-total / static_cast<double>(count));
}

template <typename Scalar>
Tensor<Scalar> weighted_cross_entropy_backward(const Tensor<Scalar>& probs,
                                               const Tensor<Scalar>& target,
                                               const ClassWeights& weights,
                                               const Tensor<Scalar>& fov, Scalar grad_out) {
  const Index n = probs.dim(0), plane = probs.dim(2) * probs.dim(3);
  const Index count = static_cast<Index>((fov.array() >= Scalar(0.5)).count());
  Tensor<Scalar> dp(probs.shape());
  for (Index s = 0; s < n; ++s)
    for (Index p = 0; p < plane; ++p) {
      if (fov[s * plane + p] < Scalar(0.5)) continue;
      const int t = target[s * plane + p] > Scalar(0.5) ? 1 : 0;
      const Index i = (s * 2 + t) * plane + p;
      if (probs[i] > Scalar(kLogClamp))
        dp[i] = -grad_out * Scalar(weights[t]) / (Scalar(count) * probs[i]);
    }
  return dp;
}

}  // namespace rcnet
