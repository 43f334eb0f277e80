#ifndef PULSETRACE_DETAIL_WINOGRAD_HPP
#define PULSETRACE_DETAIL_WINOGRAD_HPP

#include <cstddef>
#include <vector>

#include "pulsetrace/detail/gemm.hpp"
#include "pulsetrace/ops.hpp"

// Winograd F(2x2, 3x3) for stride-1 3x3 convolutions with pad 0 or 1:
// 2.25x fewer multiplies than direct evaluation. Used on the frozen-weight
// inference path only; training and gradient checks go through the im2col
// route in ops.hpp. Exact in real arithmetic, so outputs agree with conv2d
// up to rounding.
//
// Frequency-domain matmul layout: M[xi][tile][oc] = V[xi][tile][ic] *
// U[xi][ic][oc]. The tile count rides the GEMM's M dimension, which needs
// no padding, and output channels ride N where full register tiles live.

namespace pulsetrace::detail {

// U = G g G^T per channel pair, stored [16][c_in][c_out]. Weight tensors
// may be stacked along the output-channel axis so adjacent convolutions
// share one GEMM pass.
template <typename T>
struct WinoKernel {
  std::size_t c_out = 0, c_in = 0;
  std::size_t c_out_pad = 0;  // N axis padded so every GEMM tile is full
  std::vector<T> u;
};

template <typename T>
WinoKernel<T> wino_transform_weights(
    const std::vector<const Tensor<T>*>& kernels) {
  WinoKernel<T> out;
  out.c_in = kernels.front()->extent(1);
  for (const auto* k : kernels) out.c_out += k->extent(0);
  out.c_out_pad = padded_cols<T>(out.c_out);
  out.u.assign(16 * out.c_in * out.c_out_pad, T(0));

  std::size_t oc_base = 0;
  for (const auto* kt : kernels) {
    const std::size_t co = kt->extent(0), ci = kt->extent(1);
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t ic = 0; ic < ci; ++ic) {
        const T* g = kt->data() + (oc * ci + ic) * 9;
        // Gg: rows [g0; (g0+g1+g2)/2; (g0-g1+g2)/2; g2]
        T t[4][3];
        for (int j = 0; j < 3; ++j) {
          const T g0 = g[j], g1 = g[3 + j], g2 = g[6 + j];
          t[0][j] = g0;
          t[1][j] = (g0 + g1 + g2) / T(2);
          t[2][j] = (g0 - g1 + g2) / T(2);
          t[3][j] = g2;
        }
        // (Gg)G^T: same combination along columns
        for (int i = 0; i < 4; ++i) {
          const T a = t[i][0], b = t[i][1], c = t[i][2];
          const T uu[4] = {a, (a + b + c) / T(2), (a - b + c) / T(2), c};
          for (int xi = 0; xi < 4; ++xi) {
            const std::size_t row = static_cast<std::size_t>(i) * 4 +
                                    static_cast<std::size_t>(xi);
            out.u[(row * out.c_in + ic) * out.c_out_pad + oc_base + oc] =
                uu[xi];
          }
        }
      }
    }
    oc_base += co;
  }
  return out;
}

// V = B^T d B over overlapping 4x4 tiles (stride 2), stored
// [16][n_tiles][c_in].
template <typename T>
struct WinoTransformed {
  std::size_t c_in = 0;
  std::size_t tiles_y = 0, tiles_x = 0;
  std::vector<T> v;

  std::size_t tile_count() const { return tiles_y * tiles_x; }
};

// Optionally transforms into channel columns [c_offset, c_offset +
// channels) of a buffer declared for c_total channels, so two inputs can
// share one GEMM along the contraction axis. A tile's 16 frequency rows
// are staged in an L1-resident block and copied out contiguously.
template <typename T>
void wino_transform_input(const Tensor<T>& input, std::size_t pad,
                          std::size_t out_h, std::size_t out_w,
                          WinoTransformed<T>& out, std::size_t c_total = 0,
                          std::size_t c_offset = 0) {
  const std::size_t c_in = input.extent(0);
  if (c_total == 0) c_total = c_in;
  const std::size_t in_h = input.extent(1), in_w = input.extent(2);
  out.c_in = c_total;
  out.tiles_y = (out_h + 1) / 2;
  out.tiles_x = (out_w + 1) / 2;
  const std::size_t n_tiles = out.tile_count();
  out.v.resize(16 * n_tiles * c_total);

  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pad);
  parallel_for(n_tiles, [&](std::size_t tb, std::size_t te) {
    std::vector<T> staged(16 * c_in);
    for (std::size_t tile = tb; tile < te; ++tile) {
      const std::size_t ty = tile / out.tiles_x;
      const std::size_t tx = tile % out.tiles_x;
      const std::ptrdiff_t r0 = static_cast<std::ptrdiff_t>(2 * ty) - p;
      const std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(2 * tx) - p;
      const bool interior = r0 >= 0 && c0 >= 0 &&
                            r0 + 4 <= std::ptrdiff_t(in_h) &&
                            c0 + 4 <= std::ptrdiff_t(in_w);
      for (std::size_t c = 0; c < c_in; ++c) {
        const T* plane = input.data() + c * in_h * in_w;
        T d[4][4];
        if (interior) {
          const T* base = plane + static_cast<std::size_t>(r0) * in_w +
                          static_cast<std::size_t>(c0);
          for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
              d[i][j] = base[static_cast<std::size_t>(i) * in_w +
                             static_cast<std::size_t>(j)];
            }
          }
        } else {
          for (int i = 0; i < 4; ++i) {
            const std::ptrdiff_t r = r0 + i;
            for (int j = 0; j < 4; ++j) {
              const std::ptrdiff_t cc = c0 + j;
              d[i][j] = (r >= 0 && r < std::ptrdiff_t(in_h) && cc >= 0 &&
                         cc < std::ptrdiff_t(in_w))
                            ? plane[static_cast<std::size_t>(r) * in_w +
                                    static_cast<std::size_t>(cc)]
                            : T(0);
            }
          }
        }
        // B^T d
        T w[4][4];
        for (int j = 0; j < 4; ++j) {
          w[0][j] = d[0][j] - d[2][j];
          w[1][j] = d[1][j] + d[2][j];
          w[2][j] = d[2][j] - d[1][j];
          w[3][j] = d[1][j] - d[3][j];
        }
        // (B^T d) B into the staging block
        for (int i = 0; i < 4; ++i) {
          const T vv[4] = {w[i][0] - w[i][2], w[i][1] + w[i][2],
                           w[i][2] - w[i][1], w[i][1] - w[i][3]};
          for (int j = 0; j < 4; ++j) {
            const std::size_t row = static_cast<std::size_t>(i) * 4 +
                                    static_cast<std::size_t>(j);
            staged[row * c_in + c] = vv[j];
          }
        }
      }
      for (std::size_t row = 0; row < 16; ++row) {
        std::copy(staged.data() + row * c_in,
                  staged.data() + (row + 1) * c_in,
                  out.v.data() + (row * n_tiles + tile) * c_total + c_offset);
      }
    }
  });
}

// Stacks two transformed-weight blocks along the contraction axis, so a
// sum of two convolutions runs as a single GEMM over the paired input
// transform.
template <typename T>
WinoKernel<T> wino_concat_k(const WinoKernel<T>& lo, const WinoKernel<T>& hi) {
  if (lo.c_out != hi.c_out || lo.c_out_pad != hi.c_out_pad) {
    throw ShapeError("wino_concat_k: output channel mismatch");
  }
  WinoKernel<T> out;
  out.c_out = lo.c_out;
  out.c_out_pad = lo.c_out_pad;
  out.c_in = lo.c_in + hi.c_in;
  out.u.resize(16 * out.c_in * out.c_out_pad);
  const std::size_t row_bytes = out.c_out_pad;
  for (std::size_t xi = 0; xi < 16; ++xi) {
    T* dst = out.u.data() + xi * out.c_in * row_bytes;
    std::copy(lo.u.data() + xi * lo.c_in * row_bytes,
              lo.u.data() + (xi + 1) * lo.c_in * row_bytes, dst);
    std::copy(hi.u.data() + xi * hi.c_in * row_bytes,
              hi.u.data() + (xi + 1) * hi.c_in * row_bytes,
              dst + lo.c_in * row_bytes);
  }
  return out;
}

// M[xi] (+)= V[xi] * U[xi]; the 16 frequency GEMMs split across workers,
// which also spreads the one-pass-per-frame streaming of U.
template <typename T>
void wino_matmul(const WinoKernel<T>& u, const WinoTransformed<T>& v,
                 std::vector<T>& m, bool accumulate) {
  const std::size_t tiles = v.tile_count();
  const std::size_t n = u.c_out_pad;
  const std::size_t size = 16 * tiles * n;
  if (m.size() != size) m.resize(size);
  parallel_for(16, [&](std::size_t xb, std::size_t xe) {
    for (std::size_t xi = xb; xi < xe; ++xi) {
      gemm_serial(tiles, n, u.c_in, v.v.data() + xi * tiles * u.c_in,
                  u.u.data() + xi * u.c_in * n, m.data() + xi * tiles * n,
                  accumulate);
    }
  });
}

// Y = A^T M A per tile plus channel bias, cropped to the true extents.
// The output-channel axis is contiguous in M, so the tile math vectorizes
// across channels; writes scatter into the channel planes.
template <typename T>
void wino_output(const std::vector<T>& m, std::size_t c_out,
                 std::size_t c_out_pad, const WinoTransformed<T>& v,
                 const T* bias, Tensor<T>& out) {
  const std::size_t out_h = out.extent(1), out_w = out.extent(2);
  const std::size_t tiles = v.tile_count();
  const std::size_t plane = out_h * out_w;
  parallel_for(tiles, [&](std::size_t tb, std::size_t te) {
    for (std::size_t tile = tb; tile < te; ++tile) {
      const std::size_t ty = tile / v.tiles_x;
      const std::size_t tx = tile % v.tiles_x;
      const std::size_t r = 2 * ty, c = 2 * tx;
      const bool has_right = c + 1 < out_w;
      const bool has_down = r + 1 < out_h;
      const T* rows[16];
      for (int xi = 0; xi < 16; ++xi) {
        rows[xi] = m.data() +
                   (static_cast<std::size_t>(xi) * tiles + tile) * c_out_pad;
      }
      T* base = out.data() + r * out_w + c;
      for (std::size_t oc = 0; oc < c_out; ++oc) {
        T t0[4], t1[4];
        for (int j = 0; j < 4; ++j) {
          const T m0 = rows[0 * 4 + j][oc];
          const T m1 = rows[1 * 4 + j][oc];
          const T m2 = rows[2 * 4 + j][oc];
          const T m3 = rows[3 * 4 + j][oc];
          t0[j] = m0 + m1 + m2;
          t1[j] = m1 - m2 - m3;
        }
        const T b = bias ? bias[oc] : T(0);
        T* cell = base + oc * plane;
        cell[0] = t0[0] + t0[1] + t0[2] + b;
        if (has_right) cell[1] = t0[1] - t0[2] - t0[3] + b;
        if (has_down) {
          cell[out_w] = t1[0] + t1[1] + t1[2] + b;
          if (has_right) cell[out_w + 1] = t1[1] - t1[2] - t1[3] + b;
        }
      }
    }
  });
}

// Whole conv for the single-input case.
template <typename T>
void wino_conv3x3(const Tensor<T>& input, const WinoKernel<T>& kernel,
                  const T* bias, std::size_t pad, Tensor<T>& out,
                  WinoTransformed<T>& scratch_v, std::vector<T>& scratch_m) {
  wino_transform_input(input, pad, out.extent(1), out.extent(2), scratch_v);
  wino_matmul(kernel, scratch_v, scratch_m, false);
  wino_output(scratch_m, kernel.c_out, kernel.c_out_pad, scratch_v, bias,
              out);
}

}  // namespace pulsetrace::detail

#endif  // PULSETRACE_DETAIL_WINOGRAD_HPP
