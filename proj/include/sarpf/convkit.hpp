#pragma once

// Dilated 2D convolution (cross-correlation), 1x1 pointwise convolution,
// 2x2 stride-2 transposed convolution, their backward rules, straight-loop
// reference implementations, and receptive-field arithmetic.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sarpf/tensor.hpp"

namespace sarpf {

struct ConvGeometry {
  std::size_t dilation = 1;
  std::size_t padding = 0;  // zero padding on every side
};

/// Weights are laid out (out_channels, in_channels, k_h, k_w).
struct ConvKernel {
  Tensor4 weights;
  std::vector<double> bias;
  std::size_t dilation = 1;
  std::size_t padding = 0;

  static ConvKernel zeros(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw, std::size_t dilation = 1,
                          std::size_t padding = 0) {
    return {Tensor4({out, in, kh, kw}), std::vector<double>(out, 0.0), dilation, padding};
  }

  std::size_t out_channels() const noexcept { return weights.shape().n; }
  std::size_t in_channels() const noexcept { return weights.shape().c; }
  std::size_t k_h() const noexcept { return weights.shape().h; }
  std::size_t k_w() const noexcept { return weights.shape().w; }
  ConvGeometry geometry() const noexcept { return {dilation, padding}; }

  void validate() const {
    if (bias.size() != out_channels()) throw ShapeError("ConvKernel: bias length differs from out_channels");
    if (dilation < 1) throw ContractError("ConvKernel: dilation must be >= 1");
    if (k_h() == 0 || k_w() == 0) throw ShapeError("ConvKernel: empty kernel");
  }
};

/// Fixed 2x2 kernel with stride 2. Weights are laid out (in_channels, out_channels, 2, 2).
struct DeconvKernel {
  Tensor4 weights;
  std::vector<double> bias;

  static DeconvKernel zeros(std::size_t in, std::size_t out) {
    return {Tensor4({in, out, 2, 2}), std::vector<double>(out, 0.0)};
  }

  std::size_t in_channels() const noexcept { return weights.shape().n; }
  std::size_t out_channels() const noexcept { return weights.shape().c; }

  void validate() const {
    if (weights.shape().h != 2 || weights.shape().w != 2) throw ShapeError("DeconvKernel: kernel must be 2x2");
    if (bias.size() != out_channels()) throw ShapeError("DeconvKernel: bias length differs from out_channels");
  }
};

namespace detail {

inline std::ptrdiff_t sdiff(std::size_t a, std::size_t b) {
  return static_cast<std::ptrdiff_t>(a) - static_cast<std::ptrdiff_t>(b);
}

inline Shape4 conv_output_shape(const Shape4& x, const Shape4& w, ConvGeometry g) {
  if (x.c != w.c) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, kernel expects " + std::to_string(w.c));
  }
  if (g.dilation < 1) throw ContractError("conv2d: dilation must be >= 1");
  const auto span_h = static_cast<std::ptrdiff_t>(g.dilation * (w.h - 1));
  const auto span_w = static_cast<std::ptrdiff_t>(g.dilation * (w.w - 1));
  const auto oh = static_cast<std::ptrdiff_t>(x.h + 2 * g.padding) - span_h;
  const auto ow = static_cast<std::ptrdiff_t>(x.w + 2 * g.padding) - span_w;
  if (oh < 1 || ow < 1) throw ShapeError("conv2d: kernel footprint exceeds padded input " + x.str());
  return {x.n, w.n, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
}

// Valid output range [lo, hi) for a tap offset so that out + offset stays inside [0, extent).
inline void tap_range(std::ptrdiff_t offset, std::size_t extent, std::size_t out_extent, std::size_t& lo,
                      std::size_t& hi) {
  const std::ptrdiff_t l = std::max<std::ptrdiff_t>(0, -offset);
  const std::ptrdiff_t h = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_extent),
                                                    static_cast<std::ptrdiff_t>(extent) - offset);
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(std::max(l, h));
}

}  // namespace detail

inline Tensor4 conv2d(const Tensor4& x, const Tensor4& weights, std::span<const double> bias, ConvGeometry g) {
  const Shape4 os = detail::conv_output_shape(x.shape(), weights.shape(), g);
  if (bias.size() != os.c) throw ShapeError("conv2d: bias length differs from out_channels");
  const Shape4& xs = x.shape();
  const Shape4& ws = weights.shape();
  Tensor4 out(os);
  for (std::size_t b = 0; b < os.n; ++b) {
    for (std::size_t o = 0; o < os.c; ++o) {
      auto dst = out.plane(b, o);
      std::fill(dst.begin(), dst.end(), bias[o]);
      for (std::size_t i = 0; i < xs.c; ++i) {
        const auto src = x.plane(b, i);
        for (std::size_t ky = 0; ky < ws.h; ++ky) {
          const auto dy = detail::sdiff(ky * g.dilation, g.padding);
          std::size_t y0, y1;
          detail::tap_range(dy, xs.h, os.h, y0, y1);
          for (std::size_t kx = 0; kx < ws.w; ++kx) {
            const double wv = weights(o, i, ky, kx);
            const auto dx = detail::sdiff(kx * g.dilation, g.padding);
            std::size_t x0, x1;
            detail::tap_range(dx, xs.w, os.w, x0, x1);
            for (std::size_t y = y0; y < y1; ++y) {
              double* orow = dst.data() + y * os.w;
              const double* irow = src.data() + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * xs.w;
              for (std::size_t xx = x0; xx < x1; ++xx) {
                orow[xx] += wv * irow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(xx) + dx)];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

inline Tensor4 conv2d(const Tensor4& x, const ConvKernel& k) {
  k.validate();
  return conv2d(x, k.weights, k.bias, k.geometry());
}

/// Direct evaluation of the definition, one output element at a time.
inline Tensor4 naive_conv2d(const Tensor4& x, const ConvKernel& k) {
  k.validate();
  const Shape4 os = detail::conv_output_shape(x.shape(), k.weights.shape(), k.geometry());
  const Shape4& xs = x.shape();
  Tensor4 out(os);
  for (std::size_t b = 0; b < os.n; ++b) {
    for (std::size_t o = 0; o < os.c; ++o) {
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t xx = 0; xx < os.w; ++xx) {
          double acc = k.bias[o];
          for (std::size_t i = 0; i < xs.c; ++i) {
            for (std::size_t ky = 0; ky < k.k_h(); ++ky) {
              for (std::size_t kx = 0; kx < k.k_w(); ++kx) {
                const auto iy = detail::sdiff(y + ky * k.dilation, k.padding);
                const auto ix = detail::sdiff(xx + kx * k.dilation, k.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(xs.h) ||
                    ix >= static_cast<std::ptrdiff_t>(xs.w)) {
                  continue;
                }
                acc += k.weights(o, i, ky, kx) * x(b, i, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
            }
          }
          out(b, o, y, xx) = acc;
        }
      }
    }
  }
  return out;
}

struct ConvGrads {
  Tensor4 dx;
  Tensor4 dweights;
  std::vector<double> dbias;
};

inline ConvGrads conv2d_backward(const Tensor4& x, const Tensor4& weights, ConvGeometry g, const Tensor4& dout) {
  const Shape4 os = detail::conv_output_shape(x.shape(), weights.shape(), g);
  if (!(dout.shape() == os)) throw ShapeError("conv2d_backward: dout shape " + dout.shape().str() + " != " + os.str());
  const Shape4& xs = x.shape();
  const Shape4& ws = weights.shape();
  ConvGrads grads{Tensor4(xs), Tensor4(ws), std::vector<double>(os.c, 0.0)};
  for (std::size_t b = 0; b < os.n; ++b) {
    for (std::size_t o = 0; o < os.c; ++o) {
      const auto go = dout.plane(b, o);
      for (double v : go) grads.dbias[o] += v;
      for (std::size_t i = 0; i < xs.c; ++i) {
        const auto src = x.plane(b, i);
        auto dsrc = grads.dx.plane(b, i);
        for (std::size_t ky = 0; ky < ws.h; ++ky) {
          const auto dy = detail::sdiff(ky * g.dilation, g.padding);
          std::size_t y0, y1;
          detail::tap_range(dy, xs.h, os.h, y0, y1);
          for (std::size_t kx = 0; kx < ws.w; ++kx) {
            const auto dx = detail::sdiff(kx * g.dilation, g.padding);
            std::size_t x0, x1;
            detail::tap_range(dx, xs.w, os.w, x0, x1);
            const double wv = weights(o, i, ky, kx);
            double acc = 0.0;
            for (std::size_t y = y0; y < y1; ++y) {
              const double* grow = go.data() + y * os.w;
              const std::size_t irow = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * xs.w;
              for (std::size_t xx = x0; xx < x1; ++xx) {
                const std::size_t ii = irow + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(xx) + dx);
                acc += grow[xx] * src[ii];
                dsrc[ii] += grow[xx] * wv;
              }
            }
            grads.dweights(o, i, ky, kx) += acc;
          }
        }
      }
    }
  }
  return grads;
}

inline ConvGrads conv2d_backward(const Tensor4& x, const ConvKernel& k, const Tensor4& dout) {
  k.validate();
  return conv2d_backward(x, k.weights, k.geometry(), dout);
}

/// 1x1 convolution: a per-pixel linear map across channels plus bias.
inline Tensor4 pointwise_conv(const Tensor4& x, const ConvKernel& k) {
  if (k.k_h() != 1 || k.k_w() != 1) throw ContractError("pointwise_conv: kernel must be 1x1");
  if (k.padding != 0) throw ContractError("pointwise_conv: padding must be 0");
  return conv2d(x, k);
}

inline ConvGrads pointwise_conv_backward(const Tensor4& x, const ConvKernel& k, const Tensor4& dout) {
  if (k.k_h() != 1 || k.k_w() != 1) throw ContractError("pointwise_conv: kernel must be 1x1");
  return conv2d_backward(x, k, dout);
}

// ---------------------------------------------------------------------------
// 2x transposed convolution

inline Shape4 deconv2x_output_shape(const Shape4& x, const Shape4& w) {
  if (w.h != 2 || w.w != 2) throw ShapeError("deconv2x: kernel must be 2x2");
  if (x.c != w.n) {
    throw ShapeError("deconv2x: input has " + std::to_string(x.c) + " channels, kernel expects " + std::to_string(w.n));
  }
  return {x.n, w.c, 2 * x.h, 2 * x.w};
}

inline Tensor4 deconv2x(const Tensor4& x, const Tensor4& weights, std::span<const double> bias) {
  const Shape4 os = deconv2x_output_shape(x.shape(), weights.shape());
  if (bias.size() != os.c) throw ShapeError("deconv2x: bias length differs from out_channels");
  const Shape4& xs = x.shape();
  Tensor4 out(os);
  for (std::size_t b = 0; b < os.n; ++b) {
    for (std::size_t o = 0; o < os.c; ++o) {
      auto dst = out.plane(b, o);
      std::fill(dst.begin(), dst.end(), bias[o]);
      for (std::size_t i = 0; i < xs.c; ++i) {
        const auto src = x.plane(b, i);
        const double w00 = weights(i, o, 0, 0), w01 = weights(i, o, 0, 1);
        const double w10 = weights(i, o, 1, 0), w11 = weights(i, o, 1, 1);
        for (std::size_t y = 0; y < xs.h; ++y) {
          double* top = dst.data() + (2 * y) * os.w;
          double* bottom = top + os.w;
          const double* row = src.data() + y * xs.w;
          for (std::size_t xx = 0; xx < xs.w; ++xx) {
            const double v = row[xx];
            top[2 * xx] += v * w00;
            top[2 * xx + 1] += v * w01;
            bottom[2 * xx] += v * w10;
            bottom[2 * xx + 1] += v * w11;
          }
        }
      }
    }
  }
  return out;
}

inline Tensor4 deconv2x(const Tensor4& x, const DeconvKernel& k) {
  k.validate();
  return deconv2x(x, k.weights, k.bias);
}

/// Reference: every input pixel scatters value * kernel into its own 2x2 block.
inline Tensor4 naive_deconv2x(const Tensor4& x, const DeconvKernel& k) {
  k.validate();
  const Shape4 os = deconv2x_output_shape(x.shape(), k.weights.shape());
  const Shape4& xs = x.shape();
  Tensor4 out(os);
  for (std::size_t b = 0; b < os.n; ++b)
    for (std::size_t o = 0; o < os.c; ++o)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t xx = 0; xx < os.w; ++xx) out(b, o, y, xx) = k.bias[o];
  for (std::size_t b = 0; b < xs.n; ++b)
    for (std::size_t i = 0; i < xs.c; ++i)
      for (std::size_t y = 0; y < xs.h; ++y)
        for (std::size_t xx = 0; xx < xs.w; ++xx)
          for (std::size_t o = 0; o < os.c; ++o)
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t c = 0; c < 2; ++c)
                out(b, o, 2 * y + a, 2 * xx + c) += x(b, i, y, xx) * k.weights(i, o, a, c);
  return out;
}

/// The input gradient is the stride-2 2x2 convolution of dout with the kernel.
inline ConvGrads deconv2x_backward(const Tensor4& x, const Tensor4& weights, const Tensor4& dout) {
  const Shape4 os = deconv2x_output_shape(x.shape(), weights.shape());
  if (!(dout.shape() == os)) throw ShapeError("deconv2x_backward: dout shape " + dout.shape().str());
  const Shape4& xs = x.shape();
  ConvGrads grads{Tensor4(xs), Tensor4(weights.shape()), std::vector<double>(os.c, 0.0)};
  for (std::size_t b = 0; b < os.n; ++b) {
    for (std::size_t o = 0; o < os.c; ++o) {
      const auto go = dout.plane(b, o);
      for (double v : go) grads.dbias[o] += v;
      for (std::size_t i = 0; i < xs.c; ++i) {
        const auto src = x.plane(b, i);
        auto dsrc = grads.dx.plane(b, i);
        const double w00 = weights(i, o, 0, 0), w01 = weights(i, o, 0, 1);
        const double w10 = weights(i, o, 1, 0), w11 = weights(i, o, 1, 1);
        double a00 = 0, a01 = 0, a10 = 0, a11 = 0;
        for (std::size_t y = 0; y < xs.h; ++y) {
          const double* top = go.data() + (2 * y) * os.w;
          const double* bottom = top + os.w;
          for (std::size_t xx = 0; xx < xs.w; ++xx) {
            const double v = src[y * xs.w + xx];
            const double g00 = top[2 * xx], g01 = top[2 * xx + 1];
            const double g10 = bottom[2 * xx], g11 = bottom[2 * xx + 1];
            dsrc[y * xs.w + xx] += g00 * w00 + g01 * w01 + g10 * w10 + g11 * w11;
            a00 += v * g00;
            a01 += v * g01;
            a10 += v * g10;
            a11 += v * g11;
          }
        }
        grads.dweights(i, o, 0, 0) += a00;
        grads.dweights(i, o, 0, 1) += a01;
        grads.dweights(i, o, 1, 0) += a10;
        grads.dweights(i, o, 1, 1) += a11;
      }
    }
  }
  return grads;
}

inline ConvGrads deconv2x_backward(const Tensor4& x, const DeconvKernel& k, const Tensor4& dout) {
  k.validate();
  return deconv2x_backward(x, k.weights, dout);
}

// ---------------------------------------------------------------------------
// Receptive field

struct ReceptiveFieldState {
  std::int64_t r = 1;      // receptive field in input pixels
  std::int64_t layer = 0;  // number of layers applied
  friend bool operator==(const ReceptiveFieldState&, const ReceptiveFieldState&) = default;
};

/// r' = r + (K - 1) * d.
inline ReceptiveFieldState receptive_field_step(ReceptiveFieldState s, std::int64_t kernel, std::int64_t dilation) {
  if (kernel < 1) throw ContractError("receptive_field_step: kernel size must be >= 1");
  if (dilation < 1) throw ContractError("receptive_field_step: dilation must be >= 1");
  return {s.r + (kernel - 1) * dilation, s.layer + 1};
}

}  // namespace sarpf
