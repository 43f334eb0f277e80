#ifndef PULSETRACE_PHANTOM_HPP
#define PULSETRACE_PHANTOM_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "pulsetrace/detail/rng.hpp"
#include "pulsetrace/errors.hpp"
#include "pulsetrace/sequence_io.hpp"

// Procedural pulsatile-vessel phantoms: a dark horizontal lumen band whose
// width follows an asymmetric cardiac pulse, bright wall lines, a slow
// center drift, multiplicative speckle and per-frame gain jitter. The
// rendered band width is the exact ground truth.

namespace pulsetrace {

struct PhantomSpec {
  double baseline_diameter_mm = 4.0;  // d0
  double pulse_amplitude_mm = 0.4;    // a
  std::size_t period_frames = 20;     // T
  double phase = 0.0;
  double pulse_skew = 0.35;  // fast systolic rise, slow diastolic decay

  double drift_amplitude_px = 2.0;
  double drift_period_frames = 180.0;
  double drift_phase = 0.0;

  double speckle_strength = 0.35;  // 0 disables
  double gain_jitter = 0.08;       // 0 disables
  double wall_thickness_px = 2.0;

  double lumen_brightness = 0.08;
  double wall_brightness = 0.9;
  double tissue_brightness = 0.55;

  std::size_t frame_extent = 128;  // N = M
  double pixel_pitch_mm = 0.0625;
  double frame_rate_fps = 47.0;

  void validate() const {
    if (baseline_diameter_mm - pulse_amplitude_mm <= 0.0) {
      throw ConfigError("phantom: pulse amplitude swallows the baseline");
    }
    if (period_frames < 8) {
      throw ConfigError("phantom: period must be >= 8 frames");
    }
    const double max_radius_px =
        (baseline_diameter_mm + pulse_amplitude_mm) / pixel_pitch_mm / 2.0;
    const double reach = max_radius_px + wall_thickness_px + 1.0 +
                         std::fabs(drift_amplitude_px);
    if (2.0 * reach >= static_cast<double>(frame_extent)) {
      throw ConfigError("phantom: vessel exceeds the " +
                        std::to_string(frame_extent) + "px frame");
    }
  }

  // y(t) = d0 + a * sin(theta + skew * sin(theta)); exact period T for
  // integer T, peak-to-peak amplitude 2a.
  double diameter_at(std::size_t t) const {
    const double theta = 2.0 * std::numbers::pi *
                             static_cast<double>(t % period_frames) /
                             static_cast<double>(period_frames) +
                         phase;
    return baseline_diameter_mm +
           pulse_amplitude_mm *
               std::sin(theta + pulse_skew * std::sin(theta));
  }

  double center_row_at(std::size_t t) const {
    const double mid = (static_cast<double>(frame_extent) - 1.0) / 2.0;
    return mid + drift_amplitude_px *
                     std::sin(2.0 * std::numbers::pi *
                                  static_cast<double>(t) /
                                  drift_period_frames +
                              drift_phase);
  }
};

namespace detail {

// Piecewise-linear radial profile with 1px edge blends centered on the
// lumen and wall boundaries, so the half-intensity crossing sits exactly
// at the true radius.
inline double radial_intensity(double dist, double radius,
                               const PhantomSpec& spec) {
  const double wall_out = radius + spec.wall_thickness_px;
  auto blend = [](double d, double edge, double inner, double outer) {
    const double w = d - (edge - 0.5);
    return inner + (outer - inner) * w;
  };
  if (dist <= radius - 0.5) return spec.lumen_brightness;
  if (dist < radius + 0.5) {
    return blend(dist, radius, spec.lumen_brightness, spec.wall_brightness);
  }
  if (dist <= wall_out - 0.5) return spec.wall_brightness;
  if (dist < wall_out + 0.5) {
    return blend(dist, wall_out, spec.wall_brightness,
                 spec.tissue_brightness);
  }
  return spec.tissue_brightness;
}

}  // namespace detail

inline UltrasoundSequence generate(const PhantomSpec& spec, std::size_t k,
                                   std::uint64_t seed) {
  spec.validate();
  if (k == 0) throw ConfigError("phantom: need at least one frame");
  const std::size_t n = spec.frame_extent;
  detail::Rng rng(seed);
  UltrasoundSequence seq;
  seq.frame_rate = static_cast<float>(spec.frame_rate_fps);
  seq.pixel_pitch_mm = static_cast<float>(spec.pixel_pitch_mm);
  seq.seed = seed;
  seq.true_period = spec.period_frames;
  seq.frames.reserve(k);
  seq.diameters_mm.reserve(k);

  const double rayleigh_sigma = 1.0 / std::sqrt(std::numbers::pi / 2.0);
  std::vector<double> profile(n);
  std::vector<double> speckle_raw(n * n);
  std::vector<double> speckle(n * n);

  for (std::size_t t = 0; t < k; ++t) {
    const double diameter = spec.diameter_at(t);
    const double radius_px = diameter / spec.pixel_pitch_mm / 2.0;
    const double center = spec.center_row_at(t);
    seq.diameters_mm.push_back(static_cast<float>(diameter));

    for (std::size_t i = 0; i < n; ++i) {
      profile[i] = detail::radial_intensity(
          std::fabs(static_cast<double>(i) - center), radius_px, spec);
    }

    const double gain =
        spec.gain_jitter > 0.0
            ? 1.0 + spec.gain_jitter * rng.uniform(-1.0, 1.0)
            : 1.0;

    Tensor<float> frame({1, n, n});
    if (spec.speckle_strength > 0.0) {
      for (auto& v : speckle_raw) v = rng.rayleigh(rayleigh_sigma);
      // 3x3 box smoothing, clamped at the borders
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int di = -1; di <= 1; ++di) {
            for (int dj = -1; dj <= 1; ++dj) {
              const std::size_t ii = static_cast<std::size_t>(std::clamp<int>(
                  static_cast<int>(i) + di, 0, static_cast<int>(n) - 1));
              const std::size_t jj = static_cast<std::size_t>(std::clamp<int>(
                  static_cast<int>(j) + dj, 0, static_cast<int>(n) - 1));
              acc += speckle_raw[ii * n + jj];
            }
          }
          speckle[i * n + j] = acc / 9.0;
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double field =
              1.0 + spec.speckle_strength * (speckle[i * n + j] - 1.0);
          const double v = std::clamp(profile[i] * field * gain, 0.0, 1.0);
          frame.at3(0, i, j) = static_cast<float>(v);
        }
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const float v =
            static_cast<float>(std::clamp(profile[i] * gain, 0.0, 1.0));
        for (std::size_t j = 0; j < n; ++j) frame.at3(0, i, j) = v;
      }
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

// The same flip applied to every frame; the diameter is flip-invariant.
inline UltrasoundSequence augment_flip(const UltrasoundSequence& seq,
                                       bool horizontal, bool vertical) {
  UltrasoundSequence out = seq;
  if (!horizontal && !vertical) return out;
  const std::size_t rows = seq.rows(), cols = seq.cols();
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const auto& src = seq.frames[t];
    auto& dst = out.frames[t];
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t si = vertical ? rows - 1 - i : i;
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t sj = horizontal ? cols - 1 - j : j;
        dst.at3(0, i, j) = src.at3(0, si, sj);
      }
    }
  }
  return out;
}

// --- population sampling ----------------------------------------------------

struct PhantomRanges {
  double d0_min = 3.0, d0_max = 6.0;       // mm
  double amp_min = 0.2, amp_max = 0.6;     // mm
  std::size_t period_min = 15, period_max = 30;
  std::size_t frames_min = 21, frames_max = 126;
  std::size_t frame_extent = 128;
  double pixel_pitch_mm = 0.0625;

  static PhantomRanges full() { return PhantomRanges{}; }

  // 64px frames need a coarser pitch and smaller vessels to fit.
  static PhantomRanges test() {
    PhantomRanges r;
    r.d0_min = 2.0;
    r.d0_max = 4.5;
    r.amp_min = 0.2;
    r.amp_max = 0.5;
    r.frame_extent = 64;
    r.pixel_pitch_mm = 0.1;
    return r;
  }
};

struct SampledPhantom {
  PhantomSpec spec;
  std::size_t frames = 0;
};

inline SampledPhantom sample_phantom(const PhantomRanges& r,
                                     detail::Rng& rng) {
  SampledPhantom s;
  s.spec.frame_extent = r.frame_extent;
  s.spec.pixel_pitch_mm = r.pixel_pitch_mm;
  s.spec.baseline_diameter_mm = rng.uniform(r.d0_min, r.d0_max);
  s.spec.pulse_amplitude_mm = rng.uniform(r.amp_min, r.amp_max);
  s.spec.period_frames =
      r.period_min + rng.index(r.period_max - r.period_min + 1);
  s.spec.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  s.spec.drift_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  s.frames = r.frames_min + rng.index(r.frames_max - r.frames_min + 1);
  return s;
}

// --- dataset split ------------------------------------------------------------

struct DatasetSplit {
  std::vector<std::string> train, validation, test;
};

// Seeded shuffle, then floor-sized validation/test slices; the remainder
// goes to training.
inline DatasetSplit split(std::vector<std::string> ids, double train_frac,
                          double val_frac, double test_frac,
                          std::uint64_t seed) {
  if (ids.empty()) throw ConfigError("split: empty id list");
  const double sum = train_frac + val_frac + test_frac;
  if (std::fabs(sum - 1.0) > 1e-9) {
    throw ConfigError("split: fractions sum to " + std::to_string(sum));
  }
  detail::Rng rng(seed);
  detail::shuffle(ids, rng);
  const std::size_t n = ids.size();
  const auto n_val = static_cast<std::size_t>(
      std::floor(val_frac * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(
      std::floor(test_frac * static_cast<double>(n)));
  DatasetSplit out;
  out.validation.assign(ids.begin(), ids.begin() + n_val);
  out.test.assign(ids.begin() + n_val, ids.begin() + n_val + n_test);
  out.train.assign(ids.begin() + n_val + n_test, ids.end());
  return out;
}

}  // namespace pulsetrace

#endif  // PULSETRACE_PHANTOM_HPP
