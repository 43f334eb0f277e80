#ifndef PULSETRACE_DETAIL_GEMM_HPP
#define PULSETRACE_DETAIL_GEMM_HPP

#include <algorithm>
#include <cstddef>
#include <vector>

#include "pulsetrace/detail/parallel.hpp"

// Row-major GEMM/GEMV kernels sized for this engine's layer shapes
// (m up to a few hundred, k up to ~45k, n up to ~1k). Every output element
// accumulates in fixed k order through exactly one code path per call, so
// results are bitwise reproducible for any worker count.

namespace pulsetrace::detail {

template <typename T>
inline constexpr std::size_t kLanes = 64 / sizeof(T);  // one 512-bit vector

template <typename T>
inline constexpr std::size_t kTileN = 3 * kLanes<T>;

inline constexpr std::size_t kTileM = 8;

// Smallest multiple of the column tile covering n. Callers that own the B
// buffer zero-pad to this width so every tile takes the register kernel.
template <typename T>
inline std::size_t padded_cols(std::size_t n) {
  return (n + kTileN<T> - 1) / kTileN<T> * kTileN<T>;
}

// C tile [mr x nr] held in registers across the whole k loop. mr, nr are
// compile-time so the accumulator array vectorizes without reassociation.
template <typename T, std::size_t MR, std::size_t NR>
inline void gemm_tile(std::size_t k, const T* __restrict a, std::size_t lda,
                      const T* __restrict b, std::size_t ldb, T* __restrict c,
                      std::size_t ldc, bool accumulate) {
  T acc[MR][NR] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* __restrict brow = b + p * ldb;
    for (std::size_t i = 0; i < MR; ++i) {
      const T av = a[i * lda + p];
      for (std::size_t j = 0; j < NR; ++j) acc[i][j] += av * brow[j];
    }
  }
  for (std::size_t i = 0; i < MR; ++i) {
    T* crow = c + i * ldc;
    if (accumulate) {
      for (std::size_t j = 0; j < NR; ++j) crow[j] += acc[i][j];
    } else {
      for (std::size_t j = 0; j < NR; ++j) crow[j] = acc[i][j];
    }
  }
}

// Edge tile with runtime extents; same k-major accumulation order.
template <typename T>
inline void gemm_tile_edge(std::size_t k, std::size_t mr, std::size_t nr,
                           const T* __restrict a, std::size_t lda,
                           const T* __restrict b, std::size_t ldb,
                           T* __restrict c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t NR = kTileN<T>;
  T acc[kTileM][NR] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* __restrict brow = b + p * ldb;
    for (std::size_t i = 0; i < mr; ++i) {
      const T av = a[i * lda + p];
      for (std::size_t j = 0; j < nr; ++j) acc[i][j] += av * brow[j];
    }
  }
  for (std::size_t i = 0; i < mr; ++i) {
    T* crow = c + i * ldc;
    if (accumulate) {
      for (std::size_t j = 0; j < nr; ++j) crow[j] += acc[i][j];
    } else {
      for (std::size_t j = 0; j < nr; ++j) crow[j] = acc[i][j];
    }
  }
}

// k blocking keeps the active B panel (kc x NR) cache-resident while a
// thread sweeps its row blocks. Partial tile sums flush to C per chunk;
// the per-element accumulation order stays k-ascending.
inline constexpr std::size_t kTileK = 256;

// C[m x n] = A[m x k] * B[k x n], or += when accumulate is set.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate = false) {
  constexpr std::size_t MR = kTileM;
  constexpr std::size_t NR = kTileN<T>;
  const std::size_t mblocks = (m + MR - 1) / MR;
  parallel_for(mblocks, [&](std::size_t bbegin, std::size_t bend) {
    for (std::size_t p0 = 0; p0 < k; p0 += kTileK) {
      const std::size_t kc = std::min(kTileK, k - p0);
      const bool acc = accumulate || p0 > 0;
      for (std::size_t j0 = 0; j0 < n; j0 += NR) {
        const std::size_t nr = std::min(NR, n - j0);
        for (std::size_t ib = bbegin; ib < bend; ++ib) {
          const std::size_t i0 = ib * MR;
          const std::size_t mr = std::min(MR, m - i0);
          if (mr == MR && nr == NR) {
            gemm_tile<T, MR, NR>(kc, a + i0 * k + p0, k, b + (p0 + 0) * n + j0,
                                 n, c + i0 * n + j0, n, acc);
          } else {
            gemm_tile_edge<T>(kc, mr, nr, a + i0 * k + p0, k, b + p0 * n + j0,
                              n, c + i0 * n + j0, n, acc);
          }
        }
      }
    }
  });
}

// Single-thread GEMM for callers that already parallelize an outer batch
// dimension. Same tiles and accumulation order as gemm().
template <typename T>
void gemm_serial(std::size_t m, std::size_t n, std::size_t k, const T* a,
                 const T* b, T* c, bool accumulate = false) {
  constexpr std::size_t MR = kTileM;
  constexpr std::size_t NR = kTileN<T>;
  for (std::size_t p0 = 0; p0 < k; p0 += kTileK) {
    const std::size_t kc = std::min(kTileK, k - p0);
    const bool acc = accumulate || p0 > 0;
    for (std::size_t j0 = 0; j0 < n; j0 += NR) {
      const std::size_t nr = std::min(NR, n - j0);
      for (std::size_t i0 = 0; i0 < m; i0 += MR) {
        const std::size_t mr = std::min(MR, m - i0);
        if (mr == MR && nr == NR) {
          gemm_tile<T, MR, NR>(kc, a + i0 * k + p0, k, b + p0 * n + j0, n,
                               c + i0 * n + j0, n, acc);
        } else {
          gemm_tile_edge<T>(kc, mr, nr, a + i0 * k + p0, k, b + p0 * n + j0,
                            n, c + i0 * n + j0, n, acc);
        }
      }
    }
  }
}

// Lane-blocked dot: vectorizes without reassociation, fixed reduction order.
template <typename T>
inline T dot(std::size_t k, const T* __restrict a, const T* __restrict b) {
  constexpr std::size_t L = kLanes<T>;
  T acc[L] = {};
  std::size_t p = 0;
  for (; p + L <= k; p += L) {
    for (std::size_t l = 0; l < L; ++l) acc[l] += a[p + l] * b[p + l];
  }
  for (; p < k; ++p) acc[p % L] += a[p] * b[p];
  T sum = T(0);
  for (std::size_t l = 0; l < L; ++l) sum += acc[l];
  return sum;
}

// y[m] = A[m x k] * x[k]
template <typename T>
void gemv(std::size_t m, std::size_t k, const T* a, const T* x, T* y,
          bool accumulate = false) {
  parallel_for(m, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const T v = dot(k, a + i * k, x);
      y[i] = accumulate ? y[i] + v : v;
    }
  });
}

// y[k] (+)= A[m x k]^T * x[m]; each worker owns a column panel and streams
// the rows of A through it.
template <typename T>
void gemv_t(std::size_t m, std::size_t k, const T* a, const T* x, T* y,
            bool accumulate = false) {
  parallel_for(k, [&](std::size_t begin, std::size_t end) {
    if (!accumulate) std::fill(y + begin, y + end, T(0));
    for (std::size_t i = 0; i < m; ++i) {
      const T xi = x[i];
      const T* __restrict arow = a + i * k;
      for (std::size_t j = begin; j < end; ++j) y[j] += xi * arow[j];
    }
  });
}

// out[cols x rows] = in[rows x cols]^T, 32x32 cache tiles.
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t B = 32;
  const std::size_t rblocks = (rows + B - 1) / B;
  parallel_for(rblocks, [&](std::size_t bbegin, std::size_t bend) {
    for (std::size_t rb = bbegin; rb < bend; ++rb) {
      const std::size_t r0 = rb * B;
      const std::size_t r1 = std::min(rows, r0 + B);
      for (std::size_t c0 = 0; c0 < cols; c0 += B) {
        const std::size_t c1 = std::min(cols, c0 + B);
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t c = c0; c < c1; ++c) {
            out[c * rows + r] = in[r * cols + c];
          }
        }
      }
    }
  });
}

}  // namespace pulsetrace::detail

#endif  // PULSETRACE_DETAIL_GEMM_HPP
