#ifndef PULSETRACE_LOSS_HPP
#define PULSETRACE_LOSS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pulsetrace/errors.hpp"

// Training objective: MSE plus a periodicity penalty tying predictions one
// cardiac period apart. The period comes from peak detection on the ground
// truth and is consumed by training code only; inference never sees it.

namespace pulsetrace {

template <typename T>
struct DiameterTrace {
  std::vector<T> y_hat;     // predictions, mm
  std::vector<T> y;         // aligned ground truth, mm; empty = absent
  double frame_rate = 0.0;  // fps

  bool has_truth() const { return !y.empty(); }
  std::size_t length() const { return y_hat.size(); }
};

struct CycleInfo {
  std::size_t period_frames = 0;  // T_period, >= 2
  std::size_t cycle_count = 0;    // floor(K / T_period)
};

struct LossConfig {
  double lambda = 1e-6;        // cyclic penalty weight
  double sqrt_epsilon = 1e-12; // stabilizes the sqrt gradient at S ~ 0
};

// (1/K) sum (y - y_hat)^2
template <typename T>
T mse(const DiameterTrace<T>& trace) {
  if (!trace.has_truth()) throw ShapeError("mse: trace has no ground truth");
  if (trace.y.size() != trace.y_hat.size()) {
    throw ShapeError("mse: length mismatch, y " +
                     std::to_string(trace.y.size()) + " vs y_hat " +
                     std::to_string(trace.y_hat.size()));
  }
  if (trace.y_hat.empty()) throw ShapeError("mse: empty trace");
  T acc = T(0);
  for (std::size_t t = 0; t < trace.y.size(); ++t) {
    const T d = trace.y[t] - trace.y_hat[t];
    acc += d * d;
  }
  return acc / static_cast<T>(trace.y.size());
}

namespace detail {

// Strict local maxima; a flat top counts once, at its left edge.
template <typename T>
std::vector<std::size_t> local_maxima(const std::vector<T>& y) {
  std::vector<std::size_t> peaks;
  const std::size_t k = y.size();
  std::size_t i = 1;
  while (i + 1 < k) {
    if (y[i] > y[i - 1]) {
      std::size_t j = i;
      while (j + 1 < k && y[j + 1] == y[i]) ++j;
      if (j + 1 < k && y[j + 1] < y[i]) {
        peaks.push_back(i);
        i = j + 1;
        continue;
      }
      i = j + 1;
      continue;
    }
    ++i;
  }
  return peaks;
}

// Height above the higher of the two flanking minima, walking out to the
// nearest strictly-higher sample or the boundary.
template <typename T>
T prominence(const std::vector<T>& y, std::size_t p) {
  T left_min = y[p];
  for (std::size_t i = p; i-- > 0;) {
    if (y[i] > y[p]) break;
    left_min = std::min(left_min, y[i]);
  }
  T right_min = y[p];
  for (std::size_t i = p + 1; i < y.size(); ++i) {
    if (y[i] > y[p]) break;
    right_min = std::min(right_min, y[i]);
  }
  return y[p] - std::max(left_min, right_min);
}

}  // namespace detail

inline constexpr std::size_t kMinPeakSeparation = 8;  // frames, ~47 fps data
inline constexpr double kPeakProminenceFraction = 0.25;

// Peak detection on the ground-truth series; the period is the rounded
// mean of successive peak spacings. Throws NoPeaksError when fewer than
// two usable peaks exist (the caller disables the cyclic term).
template <typename T>
CycleInfo detect_period(const std::vector<T>& y, double frame_rate) {
  (void)frame_rate;  // acquisition metadata; separation is tuned for it
  const std::size_t k = y.size();
  auto candidates = detail::local_maxima(y);
  if (!candidates.empty()) {
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    const T min_prom = static_cast<T>(kPeakProminenceFraction) * (*hi - *lo);
    std::vector<std::size_t> prominent;
    for (std::size_t p : candidates) {
      if (detail::prominence(y, p) >= min_prom) prominent.push_back(p);
    }
    // enforce separation, keeping higher peaks first
    std::sort(prominent.begin(), prominent.end(),
              [&](std::size_t a, std::size_t b) {
                if (y[a] != y[b]) return y[a] > y[b];
                return a < b;
              });
    std::vector<std::size_t> kept;
    for (std::size_t p : prominent) {
      bool ok = true;
      for (std::size_t q : kept) {
        const std::size_t dist = p > q ? p - q : q - p;
        if (dist < kMinPeakSeparation) {
          ok = false;
          break;
        }
      }
      if (ok) kept.push_back(p);
    }
    std::sort(kept.begin(), kept.end());
    if (kept.size() >= 2) {
      double mean_spacing = 0.0;
      for (std::size_t i = 1; i < kept.size(); ++i) {
        mean_spacing += static_cast<double>(kept[i] - kept[i - 1]);
      }
      mean_spacing /= static_cast<double>(kept.size() - 1);
      CycleInfo info;
      info.period_frames =
          static_cast<std::size_t>(std::llround(mean_spacing));
      info.cycle_count = k / info.period_frames;
      return info;
    }
  }
  throw NoPeaksError("detect_period: fewer than 2 peaks in " +
                     std::to_string(k) + " samples; cyclic loss disabled");
}

// CL = sqrt(sum over adjacent-cycle pairs of squared prediction
// differences one period apart). Pairs that would index past the end of
// the sequence are dropped.
template <typename T>
T cyclic_loss(const std::vector<T>& y_hat, const CycleInfo& cycle,
              const LossConfig& cfg) {
  (void)cfg;
  const std::size_t k = y_hat.size();
  const std::size_t period = cycle.period_frames;
  if (period < 2) throw ShapeError("cyclic_loss: period must be >= 2");
  if (k < 2 * period) {
    throw ShapeError("cyclic_loss: sequence of " + std::to_string(k) +
                     " frames too short for one pair at period " +
                     std::to_string(period));
  }
  const std::size_t pairs = std::min(cycle.cycle_count, k / period) - 1;
  T s = T(0);
  for (std::size_t n = 1; n <= pairs; ++n) {
    for (std::size_t t = 0; t < period; ++t) {
      const T d = y_hat[t + (n - 1) * period] - y_hat[t + n * period];
      s += d * d;
    }
  }
  return std::sqrt(s);
}

template <typename T>
struct LossValue {
  T total = T(0);
  T mse_part = T(0);
  T cl_part = T(0);  // unweighted CL
  std::vector<T> grad;  // d total / d y_hat[t]
};

// MSE + lambda * CL with the gradient wrt every prediction. A nullopt
// cycle (peak detection failed) or lambda = 0 reduces exactly to MSE.
template <typename T>
LossValue<T> total_loss(const DiameterTrace<T>& trace,
                        const std::optional<CycleInfo>& cycle,
                        const LossConfig& cfg) {
  LossValue<T> out;
  out.mse_part = mse(trace);
  const std::size_t k = trace.length();
  out.grad.assign(k, T(0));
  for (std::size_t t = 0; t < k; ++t) {
    out.grad[t] = T(2) * (trace.y_hat[t] - trace.y[t]) / static_cast<T>(k);
  }
  out.total = out.mse_part;
  if (cycle.has_value() && cfg.lambda > 0.0) {
    const std::size_t period = cycle->period_frames;
    out.cl_part = cyclic_loss(trace.y_hat, *cycle, cfg);
    out.total += static_cast<T>(cfg.lambda) * out.cl_part;
    // d sqrt(S) = (dS/2) / sqrt(S + eps); zero exactly at S = 0
    const std::size_t pairs =
        std::min(cycle->cycle_count, k / period) - 1;
    const T denom = std::sqrt(out.cl_part * out.cl_part +
                              static_cast<T>(cfg.sqrt_epsilon));
    if (out.cl_part > T(0)) {
      const T scale = static_cast<T>(cfg.lambda) / denom;
      for (std::size_t n = 1; n <= pairs; ++n) {
        for (std::size_t t = 0; t < period; ++t) {
          const std::size_t a = t + (n - 1) * period;
          const std::size_t b = t + n * period;
          const T d = trace.y_hat[a] - trace.y_hat[b];
          out.grad[a] += scale * d;
          out.grad[b] -= scale * d;
        }
      }
    }
  }
  return out;
}

}  // namespace pulsetrace

#endif  // PULSETRACE_LOSS_HPP
