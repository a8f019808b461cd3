#pragma once

// Differentiable layer primitives on NCHW tensors. Every forward has a
// matching vector-Jacobian product. Convolutions come in two routes: a
// direct nested-loop reference and a patch-matrix (im2col) route that runs
// through Eigen's GEMM; the tests hold the two within 1e-5 of each other.

#include "linknet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace linknet {

struct Extent2 {
  Index h = 1, w = 1;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

struct ConvSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Extent2 kernel{1, 1};
  Extent2 stride{1, 1};
  Extent2 pad{0, 0};
  Extent2 output_pad{0, 0};  // transposed convolution only
  bool has_bias = false;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

inline ConvSpec make_conv(Index cin, Index cout, Index k, Index stride, Index pad, bool bias = false) {
  return ConvSpec{cin, cout, {k, k}, {stride, stride}, {pad, pad}, {0, 0}, bias};
}

inline ConvSpec make_full_conv(Index cin, Index cout, Index k, Index stride, Index pad,
                               Index output_pad, bool bias = false) {
  return ConvSpec{cin, cout, {k, k}, {stride, stride}, {pad, pad}, {output_pad, output_pad}, bias};
}

inline void validate(const ConvSpec& s, bool transposed) {
  if (s.in_channels < 1 || s.out_channels < 1) throw ShapeError("conv: channel counts must be >= 1");
  if (s.kernel.h < 1 || s.kernel.w < 1) throw ShapeError("conv: kernel must be >= 1");
  if (s.stride.h < 1 || s.stride.w < 1) throw ShapeError("conv: stride must be >= 1");
  if (s.pad.h < 0 || s.pad.w < 0) throw ShapeError("conv: padding must be >= 0");
  if (s.output_pad.h < 0 || s.output_pad.w < 0) throw ShapeError("conv: output_pad must be >= 0");
  if (transposed) {
    if (s.output_pad.h >= s.stride.h || s.output_pad.w >= s.stride.w)
      throw ShapeError("full-conv: output_pad must be smaller than stride");
  } else if (s.output_pad.h != 0 || s.output_pad.w != 0) {
    throw ShapeError("conv: output_pad applies to transposed convolution only");
  }
}

inline Extent2 conv_output_hw(const ConvSpec& s, Index h, Index w) {
  validate(s, false);
  const Index nh = h + 2 * s.pad.h - s.kernel.h;
  const Index nw = w + 2 * s.pad.w - s.kernel.w;
  if (nh < 0 || nw < 0)
    throw ShapeError("conv: kernel larger than padded input " + to_string({h, w}));
  return {nh / s.stride.h + 1, nw / s.stride.w + 1};
}

inline Extent2 conv_transpose_output_hw(const ConvSpec& s, Index h, Index w) {
  validate(s, true);
  const Index oh = (h - 1) * s.stride.h - 2 * s.pad.h + s.kernel.h + s.output_pad.h;
  const Index ow = (w - 1) * s.stride.w - 2 * s.pad.w + s.kernel.w + s.output_pad.w;
  if (oh < 1 || ow < 1) throw ShapeError("full-conv: non-positive output size " + to_string({oh, ow}));
  return {oh, ow};
}

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;

// Patch geometry shared by im2col and col2im. `in` is the image being
// sampled, `out` the grid of kernel anchors.
struct PatchGeometry {
  Index channels;
  Extent2 in, out, kernel, stride, pad;
  Index rows() const { return channels * kernel.h * kernel.w; }
  Index cols() const { return out.h * out.w; }
};

// cols[(c*kh + u)*kw + v][i*Wo + j] = x[c, i*sh + u - ph, j*sw + v - pw] (0 outside).
template <typename Scalar>
void im2col(const Scalar* x, const PatchGeometry& g, Scalar* cols) {
  const Index ncols = g.cols();
  for (Index c = 0; c < g.channels; ++c)
    for (Index u = 0; u < g.kernel.h; ++u)
      for (Index v = 0; v < g.kernel.w; ++v) {
        Scalar* row = cols + ((c * g.kernel.h + u) * g.kernel.w + v) * ncols;
        const Scalar* plane = x + c * g.in.h * g.in.w;
        for (Index i = 0; i < g.out.h; ++i) {
          const Index y = i * g.stride.h + u - g.pad.h;
          Scalar* dst = row + i * g.out.w;
          if (y < 0 || y >= g.in.h) {
            std::fill_n(dst, g.out.w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + y * g.in.w;
          for (Index j = 0; j < g.out.w; ++j) {
            const Index xx = j * g.stride.w + v - g.pad.w;
            dst[j] = (xx >= 0 && xx < g.in.w) ? src[xx] : Scalar(0);
          }
        }
      }
}

// Adjoint of im2col: scatter-adds columns back into the image.
template <typename Scalar>
void col2im(const Scalar* cols, const PatchGeometry& g, Scalar* x) {
  const Index ncols = g.cols();
  for (Index c = 0; c < g.channels; ++c)
    for (Index u = 0; u < g.kernel.h; ++u)
      for (Index v = 0; v < g.kernel.w; ++v) {
        const Scalar* row = cols + ((c * g.kernel.h + u) * g.kernel.w + v) * ncols;
        Scalar* plane = x + c * g.in.h * g.in.w;
        for (Index i = 0; i < g.out.h; ++i) {
          const Index y = i * g.stride.h + u - g.pad.h;
          if (y < 0 || y >= g.in.h) continue;
          const Scalar* src = row + i * g.out.w;
          Scalar* dst = plane + y * g.in.w;
          for (Index j = 0; j < g.out.w; ++j) {
            const Index xx = j * g.stride.w + v - g.pad.w;
            if (xx >= 0 && xx < g.in.w) dst[xx] += src[j];
          }
        }
      }
}

template <typename Scalar>
void check_conv_operands(const Tensor<Scalar>& x, const ConvSpec& s, const Tensor<Scalar>& weight,
                         const Tensor<Scalar>* bias, bool transposed) {
  validate(s, transposed);
  const char* name = transposed ? "full-conv" : "conv";
  if (x.rank() != 4) throw ShapeError(std::string(name) + ": input must be rank 4, got " + to_string(x.shape()));
  if (x.dim(1) != s.in_channels)
    throw ShapeError(std::string(name) + ": input has " + std::to_string(x.dim(1)) +
                     " channels, spec expects " + std::to_string(s.in_channels));
  const Shape expected = transposed ? Shape{s.in_channels, s.out_channels, s.kernel.h, s.kernel.w}
                                    : Shape{s.out_channels, s.in_channels, s.kernel.h, s.kernel.w};
  if (weight.shape() != expected)
    throw ShapeError(std::string(name) + ": weight shape " + to_string(weight.shape()) +
                     " does not match " + to_string(expected));
  if (bias && bias->shape() != Shape{s.out_channels})
    throw ShapeError(std::string(name) + ": bias shape " + to_string(bias->shape()));
}

template <typename Scalar>
void add_channel_bias(Tensor<Scalar>& y, const Tensor<Scalar>& bias) {
  const Index n = y.dim(0), c = y.dim(1), plane = y.dim(2) * y.dim(3);
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      Scalar* p = y.data() + (b * c + ch) * plane;
      const Scalar v = bias[ch];
      for (Index k = 0; k < plane; ++k) p[k] += v;
    }
}

template <typename Scalar>
Tensor<Scalar> channel_sums(const Tensor<Scalar>& g) {
  const Index n = g.dim(0), c = g.dim(1), plane = g.dim(2) * g.dim(3);
  Tensor<Scalar> out({c});
  for (Index ch = 0; ch < c; ++ch) {
    double acc = 0;
    for (Index b = 0; b < n; ++b) {
      const Scalar* p = g.data() + (b * c + ch) * plane;
      for (Index k = 0; k < plane; ++k) acc += p[k];
    }
    out[ch] = static_cast<Scalar>(acc);
  }
  return out;
}

}  // namespace detail

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> grad_x;
  Tensor<Scalar> grad_weight;
  std::optional<Tensor<Scalar>> grad_bias;
};

/// Reference convolution by direct summation.
template <typename Scalar>
Tensor<Scalar> conv2d_direct(const Tensor<Scalar>& x, const ConvSpec& s, const Tensor<Scalar>& weight,
                             const Tensor<Scalar>* bias = nullptr) {
  detail::check_conv_operands(x, s, weight, bias, false);
  const Index n = x.dim(0), H = x.dim(2), W = x.dim(3);
  const Extent2 o = conv_output_hw(s, H, W);
  Tensor<Scalar> y({n, s.out_channels, o.h, o.w});
  for (Index b = 0; b < n; ++b)
    for (Index oc = 0; oc < s.out_channels; ++oc)
      for (Index i = 0; i < o.h; ++i)
        for (Index j = 0; j < o.w; ++j) {
          double acc = bias ? static_cast<double>((*bias)[oc]) : 0.0;
          for (Index c = 0; c < s.in_channels; ++c)
            for (Index u = 0; u < s.kernel.h; ++u) {
              const Index yy = i * s.stride.h + u - s.pad.h;
              if (yy < 0 || yy >= H) continue;
              for (Index v = 0; v < s.kernel.w; ++v) {
                const Index xx = j * s.stride.w + v - s.pad.w;
                if (xx < 0 || xx >= W) continue;
                acc += static_cast<double>(x(b, c, yy, xx)) * static_cast<double>(weight(oc, c, u, v));
              }
            }
          y(b, oc, i, j) = static_cast<Scalar>(acc);
        }
  return y;
}

/// Reference transposed convolution by scatter-add.
template <typename Scalar>
Tensor<Scalar> conv_transpose2d_direct(const Tensor<Scalar>& x, const ConvSpec& s,
                                       const Tensor<Scalar>& weight, const Tensor<Scalar>* bias = nullptr) {
  detail::check_conv_operands(x, s, weight, bias, true);
  const Index n = x.dim(0), H = x.dim(2), W = x.dim(3);
  const Extent2 o = conv_transpose_output_hw(s, H, W);
  Tensor<double> acc({n, s.out_channels, o.h, o.w});
  for (Index b = 0; b < n; ++b)
    for (Index c = 0; c < s.in_channels; ++c)
      for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < W; ++j) {
          const double xv = static_cast<double>(x(b, c, i, j));
          for (Index oc = 0; oc < s.out_channels; ++oc)
            for (Index u = 0; u < s.kernel.h; ++u) {
              const Index yy = i * s.stride.h + u - s.pad.h;
              if (yy < 0 || yy >= o.h) continue;
              for (Index v = 0; v < s.kernel.w; ++v) {
                const Index xx = j * s.stride.w + v - s.pad.w;
                if (xx < 0 || xx >= o.w) continue;
                acc(b, oc, yy, xx) += xv * static_cast<double>(weight(c, oc, u, v));
              }
            }
        }
  Tensor<Scalar> y = acc.template cast<Scalar>();
  if (bias) detail::add_channel_bias(y, *bias);
  return y;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvSpec& s, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>* bias = nullptr) {
  detail::check_conv_operands(x, s, weight, bias, false);
  const Index n = x.dim(0), H = x.dim(2), W = x.dim(3);
  const Extent2 o = conv_output_hw(s, H, W);
  const detail::PatchGeometry g{s.in_channels, {H, W}, o, s.kernel, s.stride, s.pad};
  Tensor<Scalar> y({n, s.out_channels, o.h, o.w});
  detail::RowMatrix<Scalar> cols(g.rows(), g.cols());
  detail::ConstRowMap<Scalar> wm(weight.data(), s.out_channels, g.rows());
  for (Index b = 0; b < n; ++b) {
    detail::im2col(x.data() + b * s.in_channels * H * W, g, cols.data());
    detail::RowMap<Scalar> ym(y.data() + b * s.out_channels * g.cols(), s.out_channels, g.cols());
    ym.noalias() = wm * cols;
  }
  if (bias) detail::add_channel_bias(y, *bias);
  return y;
}

template <typename Scalar>
ConvGrads<Scalar> conv2d_vjp(const Tensor<Scalar>& x, const ConvSpec& s, const Tensor<Scalar>& weight,
                             const Tensor<Scalar>& grad_out) {
  detail::check_conv_operands<Scalar>(x, s, weight, nullptr, false);
  const Index n = x.dim(0), H = x.dim(2), W = x.dim(3);
  const Extent2 o = conv_output_hw(s, H, W);
  if (grad_out.shape() != Shape{n, s.out_channels, o.h, o.w})
    throw ShapeError("conv vjp: grad_out shape " + to_string(grad_out.shape()) + " does not match output " +
                     to_string({n, s.out_channels, o.h, o.w}));
  const detail::PatchGeometry g{s.in_channels, {H, W}, o, s.kernel, s.stride, s.pad};
  ConvGrads<Scalar> out{Tensor<Scalar>(x.shape()), Tensor<Scalar>(weight.shape()), std::nullopt};
  detail::RowMatrix<Scalar> cols(g.rows(), g.cols());
  detail::ConstRowMap<Scalar> wm(weight.data(), s.out_channels, g.rows());
  detail::RowMap<Scalar> gw(out.grad_weight.data(), s.out_channels, g.rows());
  for (Index b = 0; b < n; ++b) {
    detail::ConstRowMap<Scalar> go(grad_out.data() + b * s.out_channels * g.cols(), s.out_channels, g.cols());
    detail::im2col(x.data() + b * s.in_channels * H * W, g, cols.data());
    gw.noalias() += go * cols.transpose();
    cols.noalias() = wm.transpose() * go;
    detail::col2im(cols.data(), g, out.grad_x.data() + b * s.in_channels * H * W);
  }
  if (s.has_bias) out.grad_bias = detail::channel_sums(grad_out);
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv_transpose2d(const Tensor<Scalar>& x, const ConvSpec& s, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>* bias = nullptr) {
  detail::check_conv_operands(x, s, weight, bias, true);
  const Index n = x.dim(0), H = x.dim(2), W = x.dim(3);
  const Extent2 o = conv_transpose_output_hw(s, H, W);
  // The output image is sampled on the input grid, so the geometry is the
  // one of a forward conv from `o` back to (H, W).
  const detail::PatchGeometry g{s.out_channels, o, {H, W}, s.kernel, s.stride, s.pad};
  Tensor<Scalar> y({n, s.out_channels, o.h, o.w});
  detail::RowMatrix<Scalar> cols(g.rows(), g.cols());
  detail::ConstRowMap<Scalar> wm(weight.data(), s.in_channels, g.rows());
  for (Index b = 0; b < n; ++b) {
    detail::ConstRowMap<Scalar> xm(x.data() + b * s.in_channels * H * W, s.in_channels, H * W);
    cols.noalias() = wm.transpose() * xm;
    detail::col2im(cols.data(), g, y.data() + b * s.out_channels * o.h * o.w);
  }
  if (bias) detail::add_channel_bias(y, *bias);
  return y;
}

template <typename Scalar>
ConvGrads<Scalar> conv_transpose2d_vjp(const Tensor<Scalar>& x, const ConvSpec& s,
                                       const Tensor<Scalar>& weight, const Tensor<Scalar>& grad_out) {
  detail::check_conv_operands<Scalar>(x, s, weight, nullptr, true);
  const Index n = x.dim(0), H = x.dim(2), W = x.dim(3);
  const Extent2 o = conv_transpose_output_hw(s, H, W);
  if (grad_out.shape() != Shape{n, s.out_channels, o.h, o.w})
    throw ShapeError("full-conv vjp: grad_out shape " + to_string(grad_out.shape()) +
                     " does not match output " + to_string({n, s.out_channels, o.h, o.w}));
  const detail::PatchGeometry g{s.out_channels, o, {H, W}, s.kernel, s.stride, s.pad};
  ConvGrads<Scalar> out{Tensor<Scalar>(x.shape()), Tensor<Scalar>(weight.shape()), std::nullopt};
  detail::RowMatrix<Scalar> cols(g.rows(), g.cols());
  detail::ConstRowMap<Scalar> wm(weight.data(), s.in_channels, g.rows());
  detail::RowMap<Scalar> gw(out.grad_weight.data(), s.in_channels, g.rows());
  for (Index b = 0; b < n; ++b) {
    detail::im2col(grad_out.data() + b * s.out_channels * o.h * o.w, g, cols.data());
    detail::ConstRowMap<Scalar> xm(x.data() + b * s.in_channels * H * W, s.in_channels, H * W);
    detail::RowMap<Scalar> gx(out.grad_x.data() + b * s.in_channels * H * W, s.in_channels, H * W);
    gx.noalias() = wm * cols;
    gw.noalias() += xm * cols.transpose();
  }
  if (s.has_bias) out.grad_bias = detail::channel_sums(grad_out);
  return out;
}

// ---------------------------------------------------------------- batch norm

enum class Mode { Train, Infer };

template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> gamma, beta, running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  static BatchNormState identity(Index channels) {
    return {Tensor<Scalar>({channels}, Scalar(1)), Tensor<Scalar>({channels}, Scalar(0)),
            Tensor<Scalar>({channels}, Scalar(0)), Tensor<Scalar>({channels}, Scalar(1))};
  }
  Index channels() const { return gamma.size(); }
};

template <typename Scalar>
struct BatchNormCache {
  Mode mode = Mode::Infer;
  Tensor<Scalar> x_hat;
  std::vector<double> inv_std;
  Tensor<Scalar> gamma;
};

template <typename Scalar>
struct BatchNormResult {
  Tensor<Scalar> y;
  BatchNormState<Scalar> state;
  BatchNormCache<Scalar> cache;
  bool variance_clamped = false;  // a batch variance came out below -1e-6
};

template <typename Scalar>
BatchNormResult<Scalar> batchnorm2d(const Tensor<Scalar>& x, const BatchNormState<Scalar>& state, Mode mode) {
  if (x.rank() != 4) throw ShapeError("batchnorm: input must be rank 4, got " + to_string(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Shape vec{c};
  if (state.gamma.shape() != vec || state.beta.shape() != vec || state.running_mean.shape() != vec ||
      state.running_var.shape() != vec)
    throw ShapeError("batchnorm: state vectors do not match " + std::to_string(c) + " channels");
  const Index m = n * plane;
  if (mode == Mode::Train && m < 2) throw ShapeError("batchnorm: training needs N*H*W >= 2");

  BatchNormResult<Scalar> r{Tensor<Scalar>(x.shape()), state, {}, false};
  r.cache.mode = mode;
  r.cache.x_hat = Tensor<Scalar>(x.shape());
  r.cache.inv_std.resize(static_cast<std::size_t>(c));
  r.cache.gamma = state.gamma;

  for (Index ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0;
      for (Index b = 0; b < n; ++b) {
        const Scalar* p = x.data() + (b * c + ch) * plane;
        for (Index k = 0; k < plane; ++k) sum += p[k];
      }
      mean = sum / static_cast<double>(m);
      double sq = 0;
      for (Index b = 0; b < n; ++b) {
        const Scalar* p = x.data() + (b * c + ch) * plane;
        for (Index k = 0; k < plane; ++k) {
          const double d = p[k] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(m);
      if (var < -1e-6) r.variance_clamped = true;
      var = std::max(var, 0.0);
      const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
      const double mom = state.momentum;
      r.state.running_mean[ch] = static_cast<Scalar>((1 - mom) * state.running_mean[ch] + mom * mean);
      r.state.running_var[ch] = static_cast<Scalar>((1 - mom) * state.running_var[ch] + mom * unbiased);
    } else {
      mean = state.running_mean[ch];
      var = std::max(static_cast<double>(state.running_var[ch]), 0.0);
    }
    const double inv_std = 1.0 / std::sqrt(var + state.epsilon);
    r.cache.inv_std[static_cast<std::size_t>(ch)] = inv_std;
    const double g = state.gamma[ch], be = state.beta[ch];
    for (Index b = 0; b < n; ++b) {
      const Index base = (b * c + ch) * plane;
      for (Index k = 0; k < plane; ++k) {
        const double xh = (x[base + k] - mean) * inv_std;
        r.cache.x_hat[base + k] = static_cast<Scalar>(xh);
        r.y[base + k] = static_cast<Scalar>(g * xh + be);
      }
    }
  }
  return r;
}

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> grad_x, grad_gamma, grad_beta;
};

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm2d_vjp(const BatchNormCache<Scalar>& cache, const Tensor<Scalar>& grad_out) {
  require_same_shape(cache.x_hat, grad_out, "batchnorm vjp");
  const Index n = grad_out.dim(0), c = grad_out.dim(1), plane = grad_out.dim(2) * grad_out.dim(3);
  const double m = static_cast<double>(n * plane);
  BatchNormGrads<Scalar> r{Tensor<Scalar>(grad_out.shape()), Tensor<Scalar>({c}), Tensor<Scalar>({c})};
  for (Index ch = 0; ch < c; ++ch) {
    double sum_g = 0, sum_gx = 0;
    for (Index b = 0; b < n; ++b) {
      const Index base = (b * c + ch) * plane;
      for (Index k = 0; k < plane; ++k) {
        sum_g += grad_out[base + k];
        sum_gx += static_cast<double>(grad_out[base + k]) * cache.x_hat[base + k];
      }
    }
    r.grad_beta[ch] = static_cast<Scalar>(sum_g);
    r.grad_gamma[ch] = static_cast<Scalar>(sum_gx);
    const double scale = cache.gamma[ch] * cache.inv_std[static_cast<std::size_t>(ch)];
    for (Index b = 0; b < n; ++b) {
      const Index base = (b * c + ch) * plane;
      for (Index k = 0; k < plane; ++k) {
        const double g = grad_out[base + k];
        r.grad_x[base + k] = static_cast<Scalar>(
            cache.mode == Mode::Train ? scale * (g - sum_g / m - cache.x_hat[base + k] * sum_gx / m)
                                      : scale * g);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------- relu

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  y.array() = x.array().max(Scalar(0));
  return y;
}

// Subgradient at 0 is 0.
template <typename Scalar>
Tensor<Scalar> relu_vjp(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out) {
  require_same_shape(x, grad_out, "relu vjp");
  Tensor<Scalar> g(x.shape());
  g.array() = (x.array() > Scalar(0)).select(grad_out.array(), Scalar(0));
  return g;
}

// ---------------------------------------------------------------- max pool

struct PoolSpec {
  Extent2 window{3, 3};
  Extent2 stride{2, 2};
  Extent2 pad{1, 1};
  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

inline Extent2 pool_output_hw(const PoolSpec& p, Index h, Index w) {
  if (p.window.h < 1 || p.window.w < 1 || p.stride.h < 1 || p.stride.w < 1)
    throw ShapeError("maxpool: window and stride must be >= 1");
  if (p.pad.h < 0 || p.pad.w < 0 || p.pad.h >= p.window.h || p.pad.w >= p.window.w)
    throw ShapeError("maxpool: padding must be in [0, window)");
  ConvSpec as_conv{1, 1, p.window, p.stride, p.pad, {0, 0}, false};
  return conv_output_hw(as_conv, h, w);
}

template <typename Scalar>
struct MaxPoolResult {
  Tensor<Scalar> y;
  std::vector<Index> argmax;  // flat input offset of each output's winner
};

template <typename Scalar>
MaxPoolResult<Scalar> maxpool2d(const Tensor<Scalar>& x, const PoolSpec& p = {}) {
  if (x.rank() != 4) throw ShapeError("maxpool: input must be rank 4, got " + to_string(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Extent2 o = pool_output_hw(p, H, W);
  MaxPoolResult<Scalar> r{Tensor<Scalar>({n, c, o.h, o.w}), {}};
  r.argmax.resize(static_cast<std::size_t>(r.y.size()));
  Index out_idx = 0;
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < o.h; ++i)
        for (Index j = 0; j < o.w; ++j, ++out_idx) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Index best_off = -1;
          // Row-major scan with strict '>' keeps the smallest offset on ties.
          for (Index u = 0; u < p.window.h; ++u) {
            const Index yy = i * p.stride.h + u - p.pad.h;
            if (yy < 0 || yy >= H) continue;
            for (Index v = 0; v < p.window.w; ++v) {
              const Index xx = j * p.stride.w + v - p.pad.w;
              if (xx < 0 || xx >= W) continue;
              const Index off = x.offset(b, ch, yy, xx);
              if (best_off < 0 || x[off] > best) {
                best = x[off];
                best_off = off;
              }
            }
          }
          if (best_off < 0) throw ShapeError("maxpool: window covers only padding");
          r.y[out_idx] = best;
          r.argmax[static_cast<std::size_t>(out_idx)] = best_off;
        }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2d_vjp(const std::vector<Index>& argmax, const Tensor<Scalar>& grad_out,
                             const Shape& input_shape) {
  if (static_cast<Index>(argmax.size()) != grad_out.size())
    throw ShapeError("maxpool vjp: argmax/grad_out size mismatch");
  Tensor<Scalar> g(input_shape);
  for (std::size_t k = 0; k < argmax.size(); ++k) g[argmax[k]] += grad_out[static_cast<Index>(k)];
  return g;
}

}  // namespace linknet
