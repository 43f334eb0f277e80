#ifndef PULSETRACE_DETAIL_MATH_HPP
#define PULSETRACE_DETAIL_MATH_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace pulsetrace::detail {

// exp for float built from branch-free primitives so activation loops
// vectorize. 2^f is a degree-6 polynomial on [-0.5, 0.5] (~1e-7 relative),
// exact at f = 0; the 2^n scale is assembled in the exponent bits.
inline float fast_exp(float x) {
  constexpr float kLog2e = 1.44269504088896341f;
  float y = x * kLog2e;
  y = std::min(126.0f, std::max(-126.0f, y));
  const float n = std::floor(y + 0.5f);
  const float f = y - n;
  float p = 1.535336188319500e-4f;
  p = p * f + 1.339887440266574e-3f;
  p = p * f + 9.618437357674640e-3f;
  p = p * f + 5.550332471162809e-2f;
  p = p * f + 2.402264791363012e-1f;
  p = p * f + 6.931472028550421e-1f;
  p = p * f + 1.0f;
  const auto bits =
      static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

inline float fast_sigmoid(float x) { return 1.0f / (1.0f + fast_exp(-x)); }

// Saturates to exactly +/-1 for |x| >~ 44, matching tanhf's behavior.
inline float fast_tanh(float x) { return 1.0f - 2.0f / (fast_exp(2.0f * x) + 1.0f); }

template <typename T>
T scalar_exp(T x) {
  if constexpr (std::is_same_v<T, float>) {
    return fast_exp(x);
  } else {
    return std::exp(x);
  }
}

template <typename T>
T scalar_sigmoid(T x) {
  if constexpr (std::is_same_v<T, float>) {
    return fast_sigmoid(x);
  } else {
    return T(1) / (T(1) + std::exp(-x));
  }
}

template <typename T>
T scalar_tanh(T x) {
  if constexpr (std::is_same_v<T, float>) {
    return fast_tanh(x);
  } else {
    return std::tanh(x);
  }
}

}  // namespace pulsetrace::detail

#endif  // PULSETRACE_DETAIL_MATH_HPP
