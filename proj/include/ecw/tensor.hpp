#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "ecw/common.hpp"

namespace ecw {

struct Shape {
  int64_t n = 1, c = 1, h = 1, w = 1;

  int64_t count() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;
};

// Dense NCHW tensor, row-major with width fastest. This is the only numeric
// container in the workbench; activations, weights and gradients all live here.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int64_t n, int64_t c, int64_t h, int64_t w)
      : shape{n, c, h, w}, data(static_cast<size_t>(n * c * h * w), T(0)) {}
  explicit Tensor(Shape s) : Tensor(s.n, s.c, s.h, s.w) {}

  int64_t size() const { return shape.count(); }

  T& at(int64_t b, int64_t ch, int64_t y, int64_t x) {
    return data[static_cast<size_t>(((b * shape.c + ch) * shape.h + y) * shape.w + x)];
  }
  T at(int64_t b, int64_t ch, int64_t y, int64_t x) const {
    return data[static_cast<size_t>(((b * shape.c + ch) * shape.h + y) * shape.w + x)];
  }

  T* plane(int64_t b, int64_t ch) {
    return data.data() + static_cast<size_t>((b * shape.c + ch) * shape.h * shape.w);
  }
  const T* plane(int64_t b, int64_t ch) const {
    return data.data() + static_cast<size_t>((b * shape.c + ch) * shape.h * shape.w);
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (int64_t i = 0; i < size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

// Stride-1 convolution parameters. Weights are [out, in, kh, kw].
template <typename T>
struct ConvParams {
  int64_t kh = 3, kw = 3;
  int64_t in_channels = 1, out_channels = 1;
  Tensor<T> weights;
  std::vector<T> bias;

  static ConvParams make(int64_t kh, int64_t kw, int64_t in_ch, int64_t out_ch) {
    ConvParams p;
    p.kh = kh;
    p.kw = kw;
    p.in_channels = in_ch;
    p.out_channels = out_ch;
    p.weights = Tensor<T>(out_ch, in_ch, kh, kw);
    p.bias.assign(static_cast<size_t>(out_ch), T(0));
    return p;
  }

  int64_t param_count() const { return (kh * kw * in_channels + 1) * out_channels; }
};

struct PoolParams {
  int64_t ph = 2, pw = 2;
};

namespace detail {

// y += a * x
template <typename T>
inline void axpy(T a, const T* x, T* y, int64_t len) {
  for (int64_t i = 0; i < len; ++i) y[i] += a * x[i];
}

template <typename T>
inline std::vector<T>& scratch_a() {
  static thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
inline std::vector<T>& scratch_b() {
  static thread_local std::vector<T> buf;
  return buf;
}

// Patch matrix in [K x N] layout, K = in*kh*kw, N = h*w, zero same-padding.
// Row (ci,ky,kx) is the input plane ci shifted by (ky-pad_h, kx-pad_w).
template <typename T>
void im2col(const Tensor<T>& in, int64_t b, int64_t kh, int64_t kw, T* cols) {
  const int64_t h = in.shape.h, w = in.shape.w, ph = kh / 2, pw = kw / 2;
  const int64_t hw = h * w;
  for (int64_t ci = 0; ci < in.shape.c; ++ci) {
    const T* src = in.plane(b, ci);
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        T* row = cols + ((ci * kh + ky) * kw + kx) * hw;
        const int64_t dy = ky - ph, dx = kx - pw;
        for (int64_t y = 0; y < h; ++y) {
          T* dst = row + y * w;
          const int64_t sy = y + dy;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* srow = src + sy * w;
          // valid x range in the destination: x + dx in [0, w)
          const int64_t x0 = std::max<int64_t>(0, -dx);
          const int64_t x1 = std::min<int64_t>(w, w - dx);
          std::fill(dst, dst + x0, T(0));
          if (x1 > x0) std::copy(srow + x0 + dx, srow + x1 + dx, dst + x0);
          std::fill(dst + std::max(x0, x1), dst + w, T(0));
        }
      }
    }
  }
}

// Patch matrix in [N x K] layout (one row per pixel) for weight gradients.
template <typename T>
void im2row(const Tensor<T>& in, int64_t b, int64_t kh, int64_t kw, T* rows) {
  const int64_t h = in.shape.h, w = in.shape.w, ph = kh / 2, pw = kw / 2;
  const int64_t k = in.shape.c * kh * kw;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      T* dst = rows + (y * w + x) * k;
      for (int64_t ci = 0; ci < in.shape.c; ++ci) {
        const T* src = in.plane(b, ci);
        for (int64_t ky = 0; ky < kh; ++ky) {
          const int64_t sy = y + ky - ph;
          for (int64_t kx = 0; kx < kw; ++kx) {
            const int64_t sx = x + kx - pw;
            *dst++ = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? src[sy * w + sx] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a [K x N] gradient patch matrix back onto the input plane.
template <typename T>
void col2im_add(const T* cols, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
                Tensor<T>& grad_in, int64_t b) {
  const int64_t ph = kh / 2, pw = kw / 2, hw = h * w;
  for (int64_t ci = 0; ci < c; ++ci) {
    T* dst_plane = grad_in.plane(b, ci);
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        const T* row = cols + ((ci * kh + ky) * kw + kx) * hw;
        const int64_t dy = ky - ph, dx = kx - pw;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const int64_t x0 = std::max<int64_t>(0, -dx);
          const int64_t x1 = std::min<int64_t>(w, w - dx);
          if (x1 <= x0) continue;
          axpy(T(1), row + y * w + x0, dst_plane + sy * w + x0 + dx, x1 - x0);
        }
      }
    }
  }
}

}  // namespace detail

// Same-padding stride-1 convolution; output spatial dims equal input dims.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& params) {
  if (params.kh % 2 == 0 || params.kw % 2 == 0)
    throw EvenKernel("conv2d: kernel dims must be odd for same padding");
  if (input.shape.c != params.in_channels)
    throw ShapeMismatch("conv2d: input channels do not match params.in_channels");

  const int64_t h = input.shape.h, w = input.shape.w, hw = h * w;
  const int64_t k = params.in_channels * params.kh * params.kw;
  Tensor<T> out(input.shape.n, params.out_channels, h, w);

  auto& cols = detail::scratch_a<T>();
  cols.resize(static_cast<size_t>(k * hw));

  for (int64_t b = 0; b < input.shape.n; ++b) {
    detail::im2col(input, b, params.kh, params.kw, cols.data());
    for (int64_t oc = 0; oc < params.out_channels; ++oc) {
      T* orow = out.plane(b, oc);
      std::fill(orow, orow + hw, params.bias[static_cast<size_t>(oc)]);
      const T* wrow = params.weights.data.data() + oc * k;
      for (int64_t kk = 0; kk < k; ++kk)
        detail::axpy(wrow[kk], cols.data() + kk * hw, orow, hw);
    }
  }
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

// Exact partials of sum(grad_out ⊙ conv2d_forward(input)).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                             const Tensor<T>& grad_out) {
  if (input.shape.c != params.in_channels)
    throw ShapeMismatch("conv2d_backward: input channels mismatch");
  Shape expect{input.shape.n, params.out_channels, input.shape.h, input.shape.w};
  if (!(grad_out.shape == expect))
    throw ShapeMismatch("conv2d_backward: grad_out shape mismatch");

  const int64_t h = input.shape.h, w = input.shape.w, hw = h * w;
  const int64_t k = params.in_channels * params.kh * params.kw;

  ConvGrads<T> g;
  g.input = Tensor<T>(input.shape);
  g.weights = Tensor<T>(params.weights.shape);
  g.bias.assign(static_cast<size_t>(params.out_channels), T(0));

  auto& grad_cols = detail::scratch_a<T>();
  grad_cols.resize(static_cast<size_t>(k * hw));
  auto& rows = detail::scratch_b<T>();
  rows.resize(static_cast<size_t>(k * hw));

  for (int64_t b = 0; b < input.shape.n; ++b) {
    // bias: per-channel sum of grad_out
    for (int64_t oc = 0; oc < params.out_channels; ++oc) {
      const T* go = grad_out.plane(b, oc);
      T s = 0;
      for (int64_t i = 0; i < hw; ++i) s += go[i];
      g.bias[static_cast<size_t>(oc)] += s;
    }

    // grad wrt input: cols_grad = W^T * grad_out, then scatter back
    std::fill(grad_cols.begin(), grad_cols.end(), T(0));
    for (int64_t kk = 0; kk < k; ++kk) {
      T* crow = grad_cols.data() + kk * hw;
      for (int64_t oc = 0; oc < params.out_channels; ++oc)
        detail::axpy(params.weights.data[static_cast<size_t>(oc * k + kk)],
                     grad_out.plane(b, oc), crow, hw);
    }
    detail::col2im_add(grad_cols.data(), params.in_channels, h, w, params.kh, params.kw,
                       g.input, b);

    // grad wrt weights: grad_out [out x hw] * patches [hw x k]
    detail::im2row(input, b, params.kh, params.kw, rows.data());
    for (int64_t oc = 0; oc < params.out_channels; ++oc) {
      const T* go = grad_out.plane(b, oc);
      T* gw = g.weights.data.data() + oc * k;
      for (int64_t p = 0; p < hw; ++p)
        detail::axpy(go[p], rows.data() + p * k, gw, k);
    }
  }
  return g;
}

// Forward max pooling. Records the winning input index per window for the
// backward pass; ties go to the first element in scan order (rows, then cols).
struct PoolIndexMap {
  Shape in_shape;
  Shape out_shape;
  std::vector<int64_t> argmax;  // flat index into the input tensor
};

template <typename T>
std::pair<Tensor<T>, PoolIndexMap> maxpool_forward(const Tensor<T>& input,
                                                   const PoolParams& p) {
  if (p.ph < 1 || p.pw < 1 || input.shape.h % p.ph != 0 || input.shape.w % p.pw != 0)
    throw IndivisibleShape("maxpool: pool factor must divide spatial dims exactly");

  const int64_t oh = input.shape.h / p.ph, ow = input.shape.w / p.pw;
  Tensor<T> out(input.shape.n, input.shape.c, oh, ow);
  PoolIndexMap map;
  map.in_shape = input.shape;
  map.out_shape = out.shape;
  map.argmax.resize(static_cast<size_t>(out.size()));

  int64_t oi = 0;
  for (int64_t b = 0; b < input.shape.n; ++b) {
    for (int64_t ch = 0; ch < input.shape.c; ++ch) {
      const T* src = input.plane(b, ch);
      const int64_t base = (b * input.shape.c + ch) * input.shape.h * input.shape.w;
      for (int64_t y = 0; y < oh; ++y) {
        for (int64_t x = 0; x < ow; ++x, ++oi) {
          T best = src[(y * p.ph) * input.shape.w + x * p.pw];
          int64_t best_idx = (y * p.ph) * input.shape.w + x * p.pw;
          for (int64_t wy = 0; wy < p.ph; ++wy) {
            for (int64_t wx = 0; wx < p.pw; ++wx) {
              const int64_t idx = (y * p.ph + wy) * input.shape.w + x * p.pw + wx;
              if (src[idx] > best) {
                best = src[idx];
                best_idx = idx;
              }
            }
          }
          out.data[static_cast<size_t>(oi)] = best;
          map.argmax[static_cast<size_t>(oi)] = base + best_idx;
        }
      }
    }
  }
  return {std::move(out), std::move(map)};
}

template <typename T>
Tensor<T> maxpool_backward(const PoolIndexMap& map, const Tensor<T>& grad_out) {
  if (!(grad_out.shape == map.out_shape))
    throw ShapeMismatch("maxpool_backward: grad_out shape mismatch");
  Tensor<T> grad_in(map.in_shape);
  for (int64_t i = 0; i < grad_out.size(); ++i)
    grad_in.data[static_cast<size_t>(map.argmax[static_cast<size_t>(i)])] +=
        grad_out.data[static_cast<size_t>(i)];
  return grad_in;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, const PoolParams& f) {
  require(f.ph >= 1 && f.pw >= 1, "upsample: factors must be >= 1");
  Tensor<T> out(input.shape.n, input.shape.c, input.shape.h * f.ph, input.shape.w * f.pw);
  for (int64_t b = 0; b < input.shape.n; ++b)
    for (int64_t ch = 0; ch < input.shape.c; ++ch) {
      const T* src = input.plane(b, ch);
      T* dst = out.plane(b, ch);
      for (int64_t y = 0; y < out.shape.h; ++y) {
        const T* srow = src + (y / f.ph) * input.shape.w;
        T* drow = dst + y * out.shape.w;
        for (int64_t x = 0; x < out.shape.w; ++x) drow[x] = srow[x / f.pw];
      }
    }
  return out;
}

// Adjoint of nearest upsampling: each input cell collects its replicated block.
template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& grad_out, const PoolParams& f) {
  if (grad_out.shape.h % f.ph != 0 || grad_out.shape.w % f.pw != 0)
    throw ShapeMismatch("upsample_backward: dims not divisible by factor");
  Tensor<T> grad_in(grad_out.shape.n, grad_out.shape.c, grad_out.shape.h / f.ph,
                    grad_out.shape.w / f.pw);
  for (int64_t b = 0; b < grad_out.shape.n; ++b)
    for (int64_t ch = 0; ch < grad_out.shape.c; ++ch) {
      const T* src = grad_out.plane(b, ch);
      T* dst = grad_in.plane(b, ch);
      for (int64_t y = 0; y < grad_out.shape.h; ++y) {
        const T* srow = src + y * grad_out.shape.w;
        T* drow = dst + (y / f.ph) * grad_in.shape.w;
        for (int64_t x = 0; x < grad_out.shape.w; ++x) drow[x / f.pw] += srow[x];
      }
    }
  return grad_in;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape);
  for (int64_t i = 0; i < input.size(); ++i)
    out.data[static_cast<size_t>(i)] = std::max(T(0), input.data[static_cast<size_t>(i)]);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  if (!(output.shape == grad_out.shape)) throw ShapeMismatch("relu_backward shape");
  Tensor<T> g(output.shape);
  for (int64_t i = 0; i < output.size(); ++i)
    g.data[static_cast<size_t>(i)] =
        output.data[static_cast<size_t>(i)] > T(0) ? grad_out.data[static_cast<size_t>(i)] : T(0);
  return g;
}

// Numerically stable logistic; output clamped to the open interval (0,1).
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out(input.shape);
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = T(1) - std::numeric_limits<T>::epsilon();
  for (int64_t i = 0; i < input.size(); ++i) {
    const T x = input.data[static_cast<size_t>(i)];
    T s;
    if (x >= T(0)) {
      s = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      s = e / (T(1) + e);
    }
    out.data[static_cast<size_t>(i)] = std::clamp(s, lo, hi);
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  if (!(output.shape == grad_out.shape)) throw ShapeMismatch("sigmoid_backward shape");
  Tensor<T> g(output.shape);
  for (int64_t i = 0; i < output.size(); ++i) {
    const T s = output.data[static_cast<size_t>(i)];
    g.data[static_cast<size_t>(i)] = grad_out.data[static_cast<size_t>(i)] * s * (T(1) - s);
  }
  return g;
}

}  // namespace ecw
