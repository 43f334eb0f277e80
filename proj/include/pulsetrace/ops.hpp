#ifndef PULSETRACE_OPS_HPP
#define PULSETRACE_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pulsetrace/detail/gemm.hpp"
#include "pulsetrace/detail/math.hpp"
#include "pulsetrace/detail/parallel.hpp"
#include "pulsetrace/errors.hpp"
#include "pulsetrace/tensor.hpp"

namespace pulsetrace {

// Geometry of a 2-d cross-correlation (no kernel flip) with zero padding.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;

  static ConvSpec make(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                       std::size_t stride, std::size_t pad) {
    return ConvSpec{in_ch, out_ch, k, k, stride, stride, pad, pad};
  }

  // floor((in + 2p - k)/s) + 1; throws when the result would be < 1.
  std::size_t out_extent(std::size_t in, std::size_t k, std::size_t p,
                         std::size_t s, const char* axis) const {
    if (in + 2 * p < k) {
      throw ShapeError(std::string("conv2d: degenerate output on ") + axis +
                       " axis: input " + std::to_string(in) + " + 2*" +
                       std::to_string(p) + " pad < kernel " +
                       std::to_string(k));
    }
    return (in + 2 * p - k) / s + 1;
  }
  std::size_t out_h(std::size_t in_h) const {
    return out_extent(in_h, kernel_h, pad_h, stride_h, "height");
  }
  std::size_t out_w(std::size_t in_w) const {
    return out_extent(in_w, kernel_w, pad_w, stride_w, "width");
  }
};

namespace detail {

template <typename T>
void expect_rank(const Tensor<T>& t, std::size_t rank, const char* op,
                 const char* name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + name + " has rank " +
                     std::to_string(t.rank()) + ", expected " +
                     std::to_string(rank));
  }
}

template <typename T>
void expect_extent(const Tensor<T>& t, std::size_t axis, std::size_t want,
                   const char* op, const char* name) {
  if (t.extent(axis) != want) {
    throw ShapeError(std::string(op) + ": " + name + " axis " +
                     std::to_string(axis) + " is " +
                     std::to_string(t.extent(axis)) + ", expected " +
                     std::to_string(want));
  }
}

// Column buffer for one input under one conv geometry: row r of the
// [C_in*kh*kw x out_h*out_w] matrix holds the input samples that kernel
// position r touches, zero where the window hangs over the padding.
// Columns are padded to the GEMM tile width so the register kernel covers
// the whole matrix. Reusable across convs that share input and geometry.
template <typename T>
struct ColBuffer {
  std::size_t k_eff = 0;  // C_in * kh * kw
  std::size_t n = 0;      // out_h * out_w
  std::size_t n_pad = 0;
  std::size_t out_h = 0, out_w = 0;
  std::vector<T> data;    // k_eff x n_pad
};

template <typename T>
ColBuffer<T> build_cols(const Tensor<T>& input, const ConvSpec& spec) {
  const std::size_t in_h = input.extent(1), in_w = input.extent(2);
  ColBuffer<T> cols;
  cols.out_h = spec.out_h(in_h);
  cols.out_w = spec.out_w(in_w);
  cols.k_eff = spec.in_channels * spec.kernel_h * spec.kernel_w;
  cols.n = cols.out_h * cols.out_w;
  cols.n_pad = padded_cols<T>(cols.n);
  cols.data.assign(cols.k_eff * cols.n_pad, T(0));

  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
  const std::size_t sh = spec.stride_h, sw = spec.stride_w;
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(spec.pad_h);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(spec.pad_w);
  const T* in = input.data();

  parallel_for(cols.k_eff, [&](std::size_t rbegin, std::size_t rend) {
    for (std::size_t r = rbegin; r < rend; ++r) {
      const std::size_t c = r / (kh * kw);
      const std::size_t ki = (r / kw) % kh;
      const std::size_t kj = r % kw;
      T* row = cols.data.data() + r * cols.n_pad;
      for (std::size_t oh = 0; oh < cols.out_h; ++oh) {
        const std::ptrdiff_t ih =
            static_cast<std::ptrdiff_t>(oh * sh + ki) - ph;
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in_h)) continue;
        // valid ow range: 0 <= ow*sw + kj - pw < in_w
        std::size_t ow0 = 0;
        if (static_cast<std::ptrdiff_t>(kj) < pw) {
          ow0 = (spec.pad_w - kj + sw - 1) / sw;
        }
        const std::ptrdiff_t max_iw = static_cast<std::ptrdiff_t>(in_w) - 1 -
                                      static_cast<std::ptrdiff_t>(kj) + pw;
        if (max_iw < 0) continue;
        const std::size_t ow1 = std::min(
            cols.out_w, static_cast<std::size_t>(max_iw) / sw + 1);
        if (ow0 >= ow1) continue;
        const T* src = in + (c * in_h + static_cast<std::size_t>(ih)) * in_w +
                       (ow0 * sw + kj - spec.pad_w);
        T* dst = row + oh * cols.out_w + ow0;
        if (sw == 1) {
          std::copy(src, src + (ow1 - ow0), dst);
        } else {
          for (std::size_t ow = ow0; ow < ow1; ++ow) {
            dst[ow - ow0] = src[(ow - ow0) * sw];
          }
        }
      }
    }
  });
  return cols;
}

// Scatter-add of a column-matrix gradient back onto the input grid.
// Parallel over input channels; each channel's rows are disjoint.
template <typename T>
void add_cols_to_grid(const ColBuffer<T>& cols, const ConvSpec& spec,
                      const T* dcols, std::size_t ld, Tensor<T>& grid) {
  const std::size_t in_h = grid.extent(1), in_w = grid.extent(2);
  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
  const std::size_t sh = spec.stride_h, sw = spec.stride_w;
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(spec.pad_h);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(spec.pad_w);
  T* out = grid.data();

  parallel_for(spec.in_channels, [&](std::size_t cbegin, std::size_t cend) {
    for (std::size_t c = cbegin; c < cend; ++c) {
      for (std::size_t rk = 0; rk < kh * kw; ++rk) {
        const std::size_t r = c * kh * kw + rk;
        const std::size_t ki = rk / kw;
        const std::size_t kj = rk % kw;
        const T* row = dcols + r * ld;
        for (std::size_t oh = 0; oh < cols.out_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * sh + ki) - ph;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in_h)) continue;
          std::size_t ow0 = 0;
          if (static_cast<std::ptrdiff_t>(kj) < pw) {
            ow0 = (spec.pad_w - kj + sw - 1) / sw;
          }
          const std::ptrdiff_t max_iw = static_cast<std::ptrdiff_t>(in_w) - 1 -
                                        static_cast<std::ptrdiff_t>(kj) + pw;
          if (max_iw < 0) continue;
          const std::size_t ow1 = std::min(
              cols.out_w, static_cast<std::size_t>(max_iw) / sw + 1);
          if (ow0 >= ow1) continue;
          T* dst = out + (c * in_h + static_cast<std::size_t>(ih)) * in_w +
                   (ow0 * sw + kj - spec.pad_w);
          const T* src = row + oh * cols.out_w + ow0;
          for (std::size_t ow = ow0; ow < ow1; ++ow) {
            dst[(ow - ow0) * sw] += src[ow - ow0];
          }
        }
      }
    }
  });
}

// out[C_out x n] (+)= W[C_out x k_eff] * cols, written through the padded
// scratch so every GEMM tile is full. Callers on a hot path can pass a
// reusable scratch buffer.
template <typename T>
void conv_gemm(const ColBuffer<T>& cols, const Tensor<T>& weights,
               const T* bias, Tensor<T>& out, bool accumulate,
               std::vector<T>* scratch_buf = nullptr) {
  const std::size_t m = weights.extent(0);
  std::vector<T> local;
  std::vector<T>& scratch = scratch_buf ? *scratch_buf : local;
  scratch.resize(m * cols.n_pad);
  gemm(m, cols.n_pad, cols.k_eff, weights.data(), cols.data.data(),
       scratch.data(), false);
  T* dst = out.data();
  parallel_for(m, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const T* src = scratch.data() + i * cols.n_pad;
      T* row = dst + i * cols.n;
      const T b = bias ? bias[i] : T(0);
      if (accumulate) {
        for (std::size_t j = 0; j < cols.n; ++j) row[j] += src[j] + b;
      } else {
        for (std::size_t j = 0; j < cols.n; ++j) row[j] = src[j] + b;
      }
    }
  });
}

// [n x k_eff] transpose of the column matrix, padding dropped.
template <typename T>
std::vector<T> transposed_cols(const ColBuffer<T>& cols) {
  std::vector<T> tight(cols.k_eff * cols.n);
  parallel_for(cols.k_eff, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      std::copy(cols.data.data() + r * cols.n_pad,
                cols.data.data() + r * cols.n_pad + cols.n,
                tight.data() + r * cols.n);
    }
  });
  std::vector<T> out(cols.n * cols.k_eff);
  transpose(cols.k_eff, cols.n, tight.data(), out.data());
  return out;
}

// bias_grad[c] += sum over the spatial plane of channel c.
template <typename T>
void add_channel_sums(const Tensor<T>& t, Tensor<T>& bias_grad) {
  const std::size_t plane = t.extent(1) * t.extent(2);
  for (std::size_t c = 0; c < t.extent(0); ++c) {
    T s = T(0);
    const T* row = t.data() + c * plane;
    for (std::size_t j = 0; j < plane; ++j) s += row[j];
    bias_grad[c] += s;
  }
}

template <typename T>
void validate_conv_args(const Tensor<T>& input, const Tensor<T>& weights,
                        const Tensor<T>* bias, const ConvSpec& spec) {
  expect_rank(input, 3, "conv2d", "input");
  expect_rank(weights, 4, "conv2d", "weights");
  expect_extent(input, 0, spec.in_channels, "conv2d", "input");
  expect_extent(weights, 0, spec.out_channels, "conv2d", "weights");
  expect_extent(weights, 1, spec.in_channels, "conv2d", "weights");
  expect_extent(weights, 2, spec.kernel_h, "conv2d", "weights");
  expect_extent(weights, 3, spec.kernel_w, "conv2d", "weights");
  if (bias) {
    expect_rank(*bias, 1, "conv2d", "bias");
    expect_extent(*bias, 0, spec.out_channels, "conv2d", "bias");
  }
}

}  // namespace detail

// --- convolution ----------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Param<T>& weights,
                 const Param<T>& bias, const ConvSpec& spec) {
  detail::validate_conv_args(input, weights.value, &bias.value, spec);
  auto cols = detail::build_cols(input, spec);
  Tensor<T> out({spec.out_channels, cols.out_h, cols.out_w});
  detail::conv_gemm(cols, weights.value, bias.value.data(), out, false);
  return out;
}

// Accumulates into weights.grad / bias.grad; returns the input gradient.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, Param<T>& weights,
                          Param<T>& bias, const ConvSpec& spec,
                          const Tensor<T>& upstream) {
  detail::validate_conv_args(input, weights.value, &bias.value, spec);
  auto cols = detail::build_cols(input, spec);
  detail::expect_rank(upstream, 3, "conv2d_backward", "upstream");
  detail::expect_extent(upstream, 0, spec.out_channels, "conv2d_backward",
                        "upstream");
  detail::expect_extent(upstream, 1, cols.out_h, "conv2d_backward",
                        "upstream");
  detail::expect_extent(upstream, 2, cols.out_w, "conv2d_backward",
                        "upstream");
  const std::size_t m = spec.out_channels;

  // dW += dY * cols^T
  const auto cols_t = detail::transposed_cols(cols);
  detail::gemm(m, cols.k_eff, cols.n, upstream.data(), cols_t.data(),
               weights.grad.data(), true);

  // db += row sums of dY
  detail::add_channel_sums(upstream, bias.grad);

  // dX = col2im(W^T * dY)
  std::vector<T> w_t(cols.k_eff * m);
  detail::transpose(m, cols.k_eff, weights.value.data(), w_t.data());
  std::vector<T> dcols(cols.k_eff * cols.n);
  detail::gemm(cols.k_eff, cols.n, m, w_t.data(), upstream.data(),
               dcols.data(), false);
  Tensor<T> grad_input(input.shape());
  detail::add_cols_to_grid(cols, spec, dcols.data(), cols.n, grad_input);
  return grad_input;
}

// --- max pooling ------------------------------------------------------------

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window,
                     std::size_t stride,
                     std::vector<std::uint32_t>* argmax = nullptr) {
  detail::expect_rank(input, 3, "max_pool2d", "input");
  const std::size_t ch = input.extent(0);
  const std::size_t in_h = input.extent(1), in_w = input.extent(2);
  if (window > in_h || window > in_w) {
    throw ShapeError("max_pool2d: window " + std::to_string(window) +
                     " larger than input " + std::to_string(in_h) + "x" +
                     std::to_string(in_w));
  }
  const std::size_t out_h = (in_h - window) / stride + 1;
  const std::size_t out_w = (in_w - window) / stride + 1;
  Tensor<T> out({ch, out_h, out_w});
  if (argmax) argmax->assign(out.size(), 0);

  detail::parallel_for(ch, [&](std::size_t cbegin, std::size_t cend) {
    for (std::size_t c = cbegin; c < cend; ++c) {
      for (std::size_t oh = 0; oh < out_h; ++oh) {
        for (std::size_t ow = 0; ow < out_w; ++ow) {
          const std::size_t ih0 = oh * stride, iw0 = ow * stride;
          std::size_t best = (c * in_h + ih0) * in_w + iw0;
          T best_v = input[best];
          for (std::size_t ki = 0; ki < window; ++ki) {
            for (std::size_t kj = 0; kj < window; ++kj) {
              const std::size_t idx = (c * in_h + ih0 + ki) * in_w + iw0 + kj;
              if (input[idx] > best_v) {  // ties keep first row-major index
                best_v = input[idx];
                best = idx;
              }
            }
          }
          const std::size_t o = (c * out_h + oh) * out_w + ow;
          out[o] = best_v;
          if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> max_pool2d_backward(const std::vector<std::uint32_t>& argmax,
                              const std::vector<std::size_t>& input_shape,
                              const Tensor<T>& upstream) {
  if (argmax.size() != upstream.size()) {
    throw ShapeError("max_pool2d_backward: argmax count " +
                     std::to_string(argmax.size()) + " != upstream size " +
                     std::to_string(upstream.size()));
  }
  Tensor<T> grad(input_shape);
  for (std::size_t o = 0; o < upstream.size(); ++o) {
    grad[argmax[o]] += upstream[o];
  }
  return grad;
}

// --- dense -----------------------------------------------------------------

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Param<T>& weights,
                const Param<T>& bias) {
  detail::expect_rank(weights.value, 2, "dense", "weights");
  const std::size_t m = weights.value.extent(0);
  const std::size_t n = weights.value.extent(1);
  if (input.size() != n) {
    throw ShapeError("dense: input length " + std::to_string(input.size()) +
                     " != weight columns " + std::to_string(n));
  }
  detail::expect_extent(bias.value, 0, m, "dense", "bias");
  Tensor<T> out({m});
  detail::gemv(m, n, weights.value.data(), input.data(), out.data());
  for (std::size_t i = 0; i < m; ++i) out[i] += bias.value[i];
  return out;
}

template <typename T>
Tensor<T> dense_backward(const Tensor<T>& input, Param<T>& weights,
                         Param<T>& bias, const Tensor<T>& upstream) {
  const std::size_t m = weights.value.extent(0);
  const std::size_t n = weights.value.extent(1);
  if (upstream.size() != m) {
    throw ShapeError("dense_backward: upstream length " +
                     std::to_string(upstream.size()) + " != rows " +
                     std::to_string(m));
  }
  detail::parallel_for(m, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const T u = upstream[i];
      T* wrow = weights.grad.data() + i * n;
      const T* x = input.data();
      for (std::size_t j = 0; j < n; ++j) wrow[j] += u * x[j];
      bias.grad[i] += u;
    }
  });
  Tensor<T> grad_input({n});
  detail::gemv_t(m, n, weights.value.data(), upstream.data(),
                 grad_input.data());
  return grad_input;
}

// --- activations -------------------------------------------------------------

enum class Activation { Sigmoid, Tanh, Relu };

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  const std::size_t n = input.size();
  switch (kind) {
    case Activation::Sigmoid:
      detail::parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) y[i] = detail::scalar_sigmoid(x[i]);
      });
      break;
    case Activation::Tanh:
      detail::parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) y[i] = detail::scalar_tanh(x[i]);
      });
      break;
    case Activation::Relu:
      detail::parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      });
      break;
  }
  return out;
}

template <typename T>
void activation_inplace(Tensor<T>& t, Activation kind) {
  T* y = t.data();
  const std::size_t n = t.size();
  switch (kind) {
    case Activation::Sigmoid:
      detail::parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) y[i] = detail::scalar_sigmoid(y[i]);
      });
      break;
    case Activation::Tanh:
      detail::parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) y[i] = detail::scalar_tanh(y[i]);
      });
      break;
    case Activation::Relu:
      detail::parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
      });
      break;
  }
}

// Derivative from the forward output: sigmoid' = y(1-y), tanh' = 1-y^2,
// relu' = [y > 0].
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& output, Activation kind,
                              const Tensor<T>& upstream) {
  if (!output.same_shape(upstream)) {
    throw ShapeError("activation_backward: output " +
                     Tensor<T>::shape_string(output.shape()) +
                     " vs upstream " +
                     Tensor<T>::shape_string(upstream.shape()));
  }
  Tensor<T> grad(output.shape());
  const T* y = output.data();
  const T* u = upstream.data();
  T* g = grad.data();
  const std::size_t n = output.size();
  switch (kind) {
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) g[i] = u[i] * y[i] * (T(1) - y[i]);
      break;
    case Activation::Tanh:
      for (std::size_t i = 0; i < n; ++i) g[i] = u[i] * (T(1) - y[i] * y[i]);
      break;
    case Activation::Relu:
      for (std::size_t i = 0; i < n; ++i) g[i] = y[i] > T(0) ? u[i] : T(0);
      break;
  }
  return grad;
}

// --- elementwise -------------------------------------------------------------

enum class Elementwise { Add, Mul };

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b,
                      Elementwise kind) {
  if (!a.same_shape(b)) {
    throw ShapeError("elementwise: " + Tensor<T>::shape_string(a.shape()) +
                     " vs " + Tensor<T>::shape_string(b.shape()) +
                     " (no broadcasting)");
  }
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  if (kind == Elementwise::Add) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  }
  return out;
}

// mul: (u.b, u.a); add: (u, u).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> elementwise_backward(const Tensor<T>& a,
                                                     const Tensor<T>& b,
                                                     Elementwise kind,
                                                     const Tensor<T>& upstream) {
  Tensor<T> ga(a.shape());
  Tensor<T> gb(b.shape());
  const std::size_t n = a.size();
  if (kind == Elementwise::Add) {
    for (std::size_t i = 0; i < n; ++i) ga[i] = gb[i] = upstream[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      ga[i] = upstream[i] * b[i];
      gb[i] = upstream[i] * a[i];
    }
  }
  return {std::move(ga), std::move(gb)};
}

// Gated convex blend (1-z).keep + z.cand; the recurrent state update.
template <typename T>
Tensor<T> gru_blend(const Tensor<T>& z, const Tensor<T>& keep,
                    const Tensor<T>& cand) {
  if (!z.same_shape(keep) || !z.same_shape(cand)) {
    throw ShapeError("gru_blend: mismatched shapes");
  }
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = (T(1) - z[i]) * keep[i] + z[i] * cand[i];
  }
  return out;
}

struct GruBlendGrads {
  template <typename T>
  struct Of {
    Tensor<T> z, keep, cand;
  };
};

template <typename T>
GruBlendGrads::Of<T> gru_blend_backward(const Tensor<T>& z,
                                        const Tensor<T>& keep,
                                        const Tensor<T>& cand,
                                        const Tensor<T>& upstream) {
  GruBlendGrads::Of<T> g{Tensor<T>(z.shape()), Tensor<T>(z.shape()),
                         Tensor<T>(z.shape())};
  for (std::size_t i = 0; i < z.size(); ++i) {
    g.z[i] = upstream[i] * (cand[i] - keep[i]);
    g.keep[i] = upstream[i] * (T(1) - z[i]);
    g.cand[i] = upstream[i] * z[i];
  }
  return g;
}

// --- flatten -----------------------------------------------------------------

template <typename T>
Tensor<T> flatten(const Tensor<T>& input) {
  return input.reshaped({input.size()});
}

template <typename T>
Tensor<T> flatten_backward(const Tensor<T>& upstream,
                           const std::vector<std::size_t>& input_shape) {
  return upstream.reshaped(input_shape);
}

}  // namespace pulsetrace

#endif  // PULSETRACE_OPS_HPP
