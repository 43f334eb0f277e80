#ifndef PULSETRACE_DETAIL_RNG_HPP
#define PULSETRACE_DETAIL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace pulsetrace::detail {

// mt19937_64 with hand-rolled mappings. The std distributions are
// implementation-defined, which would break the same-seed-same-bits
// contract across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 random bits
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n) via rejection, exactly uniform
  std::size_t index(std::size_t n) {
    const std::uint64_t bound = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= bound);
    return static_cast<std::size_t>(v % n);
  }

  // inverse-CDF Rayleigh; sigma = 1/sqrt(pi/2) gives unit mean
  double rayleigh(double sigma) {
    return sigma * std::sqrt(-2.0 * std::log1p(-uniform()));
  }

 private:
  std::mt19937_64 engine_;
};

// Fisher-Yates with explicit draws; std::shuffle is implementation-defined.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.index(i)]);
  }
}

// Kaiming-uniform fan-in: U(-b, b) with b = sqrt(6 / fan_in).
template <typename Tensor>
void kaiming_uniform_fill(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<std::decay_t<decltype(t[0])>>(
        rng.uniform(-bound, bound));
  }
}

}  // namespace pulsetrace::detail

#endif  // PULSETRACE_DETAIL_RNG_HPP
