#include "pulsetrace/phantom.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pulsetrace/loss.hpp"

using pulsetrace::BadMagicError;
using pulsetrace::ConfigError;
using pulsetrace::PhantomRanges;
using pulsetrace::PhantomSpec;
using pulsetrace::Tensor;
using pulsetrace::TruncatedError;
using pulsetrace::UltrasoundSequence;
using pulsetrace::UnsupportedVersionError;
using pulsetrace::detail::Rng;

namespace {

PhantomSpec clean_spec() {
  PhantomSpec spec;
  spec.speckle_strength = 0.0;
  spec.gain_jitter = 0.0;
  spec.drift_amplitude_px = 0.0;
  return spec;
}

// Independent width oracle: walk outward from the band center and place
// each lumen/wall edge at the interpolated half-intensity crossing.
double measured_band_width_px(const Tensor<float>& frame,
                              const PhantomSpec& spec) {
  const std::size_t n = frame.extent(1);
  const double mid_level =
      (spec.lumen_brightness + spec.wall_brightness) / 2.0;
  // darkest row ~ band center
  std::size_t center = 0;
  float darkest = 2.0f;
  for (std::size_t i = 0; i < n; ++i) {
    if (frame.at3(0, i, 0) < darkest) {
      darkest = frame.at3(0, i, 0);
      center = i;
    }
  }
  auto crossing = [&](int dir) {
    double prev = frame.at3(0, center, 0);
    for (std::size_t s = 1;; ++s) {
      const long i = static_cast<long>(center) + dir * static_cast<long>(s);
      if (i < 0 || i >= static_cast<long>(n)) return double(s - 1);
      const double cur = frame.at3(0, static_cast<std::size_t>(i), 0);
      if (cur >= mid_level) {
        // linear interpolation between samples s-1 and s
        return double(s - 1) + (mid_level - prev) / (cur - prev);
      }
      prev = cur;
    }
  };
  return crossing(+1) + crossing(-1);
}

}  // namespace

TEST(Phantom, DegeneratePulseGivesIdenticalFrames) {
  auto spec = clean_spec();
  spec.pulse_amplitude_mm = 0.0;
  auto seq = pulsetrace::generate(spec, 10, 42);
  ASSERT_EQ(seq.length(), 10u);
  for (std::size_t t = 1; t < 10; ++t) {
    EXPECT_EQ(seq.diameters_mm[t], seq.diameters_mm[0]);
    EXPECT_EQ(std::memcmp(seq.frames[t].data(), seq.frames[0].data(),
                          seq.frames[0].size() * sizeof(float)),
              0);
  }
}

TEST(Phantom, BaselineLumenWidthInPixels) {
  auto spec = clean_spec();
  spec.baseline_diameter_mm = 4.0;
  spec.pulse_amplitude_mm = 0.0;
  spec.pixel_pitch_mm = 0.0625;
  auto seq = pulsetrace::generate(spec, 1, 1);
  // 4 mm / 0.0625 mm/px = 64 px
  EXPECT_NEAR(measured_band_width_px(seq.frames[0], spec), 64.0, 0.5);
}

TEST(Phantom, SameSeedBitIdenticalDifferentSeedDiffers) {
  PhantomSpec spec;  // speckle on
  auto a = pulsetrace::generate(spec, 6, 7);
  auto b = pulsetrace::generate(spec, 6, 7);
  auto c = pulsetrace::generate(spec, 6, 8);
  bool any_diff = false;
  for (std::size_t t = 0; t < 6; ++t) {
    EXPECT_EQ(std::memcmp(a.frames[t].data(), b.frames[t].data(),
                          a.frames[t].size() * sizeof(float)),
              0);
    any_diff |= std::memcmp(a.frames[t].data(), c.frames[t].data(),
                            a.frames[t].size() * sizeof(float)) != 0;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Phantom, GroundTruthConsistencyNoiseFree) {
  auto spec = clean_spec();
  spec.drift_amplitude_px = 2.0;  // drift on; width must still track y
  auto seq = pulsetrace::generate(spec, 40, 3);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const double want_px = seq.diameters_mm[t] / spec.pixel_pitch_mm;
    EXPECT_NEAR(measured_band_width_px(seq.frames[t], spec), want_px, 0.5)
        << "frame " << t;
  }
}

TEST(Phantom, DetectPeriodRecoversGeneratorPeriodExactly) {
  for (std::size_t period : {15u, 20u, 23u, 30u}) {
    auto spec = clean_spec();
    spec.period_frames = period;
    auto seq = pulsetrace::generate(spec, 3 * period + 5, 11);
    std::vector<double> y(seq.diameters_mm.begin(), seq.diameters_mm.end());
    const auto info = pulsetrace::detect_period(y, seq.frame_rate);
    EXPECT_EQ(info.period_frames, period);
  }
}

TEST(Phantom, PixelsStayInUnitInterval) {
  PhantomSpec spec;
  spec.speckle_strength = 0.6;
  spec.gain_jitter = 0.15;
  auto seq = pulsetrace::generate(spec, 8, 21);
  for (const auto& f : seq.frames) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      EXPECT_GE(f[i], 0.0f);
      EXPECT_LE(f[i], 1.0f);
    }
  }
}

TEST(Phantom, VesselExceedingFrameRejected) {
  PhantomSpec spec;
  spec.baseline_diameter_mm = 9.0;  // 144 px at default pitch
  EXPECT_THROW(pulsetrace::generate(spec, 4, 1), ConfigError);
}

TEST(AugmentFlip, DoubleFlipIsIdentity) {
  PhantomSpec spec;
  auto seq = pulsetrace::generate(spec, 4, 5);
  auto twice = pulsetrace::augment_flip(
      pulsetrace::augment_flip(seq, true, true), true, true);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    EXPECT_EQ(std::memcmp(seq.frames[t].data(), twice.frames[t].data(),
                          seq.frames[t].size() * sizeof(float)),
              0);
  }
}

TEST(AugmentFlip, DiametersUnchanged) {
  PhantomSpec spec;
  auto seq = pulsetrace::generate(spec, 6, 9);
  auto flipped = pulsetrace::augment_flip(seq, false, true);
  EXPECT_EQ(seq.diameters_mm, flipped.diameters_mm);
}

TEST(AugmentFlip, VerticalFlipEqualsMirroredDrift) {
  auto spec = clean_spec();
  spec.drift_amplitude_px = 3.0;
  spec.drift_phase = 0.7;
  auto mirrored_spec = spec;
  mirrored_spec.drift_amplitude_px = -3.0;

  auto flipped = pulsetrace::augment_flip(pulsetrace::generate(spec, 12, 2),
                                          false, true);
  auto mirrored = pulsetrace::generate(mirrored_spec, 12, 2);
  for (std::size_t t = 0; t < 12; ++t) {
    for (std::size_t i = 0; i < flipped.frames[t].size(); ++i) {
      EXPECT_EQ(flipped.frames[t][i], mirrored.frames[t][i])
          << "t=" << t << " i=" << i;
    }
  }
}

TEST(Split, TwentyFiveIdsAt602020) {
  std::vector<std::string> ids;
  for (int i = 0; i < 25; ++i) ids.push_back("seq" + std::to_string(i));
  auto s = pulsetrace::split(ids, 0.6, 0.2, 0.2, 99);
  EXPECT_EQ(s.train.size(), 15u);
  EXPECT_EQ(s.validation.size(), 5u);
  EXPECT_EQ(s.test.size(), 5u);
}

TEST(Split, FloorArithmeticOnFiveIds) {
  std::vector<std::string> ids{"a", "b", "c", "d", "e"};
  auto s = pulsetrace::split(ids, 0.6, 0.2, 0.2, 1);
  EXPECT_EQ(s.train.size(), 3u);
  EXPECT_EQ(s.validation.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, DeterministicDisjointCovering) {
  std::vector<std::string> ids;
  for (int i = 0; i < 17; ++i) ids.push_back(std::to_string(i));
  auto a = pulsetrace::split(ids, 0.6, 0.2, 0.2, 5);
  auto b = pulsetrace::split(ids, 0.6, 0.2, 0.2, 5);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.test, b.test);

  std::vector<std::string> all;
  all.insert(all.end(), a.train.begin(), a.train.end());
  all.insert(all.end(), a.validation.begin(), a.validation.end());
  all.insert(all.end(), a.test.begin(), a.test.end());
  std::sort(all.begin(), all.end());
  auto sorted_ids = ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  EXPECT_EQ(all, sorted_ids);
}

TEST(Split, EmptyAndBadFractionsRejected) {
  EXPECT_THROW(pulsetrace::split({}, 0.6, 0.2, 0.2, 1), ConfigError);
  EXPECT_THROW(pulsetrace::split({"a"}, 0.5, 0.2, 0.2, 1), ConfigError);
}

TEST(UsqFormat, RoundTripBitIdentical) {
  PhantomSpec spec;
  spec.frame_extent = 64;
  spec.pixel_pitch_mm = 0.1;
  spec.baseline_diameter_mm = 3.0;
  auto seq = pulsetrace::generate(spec, 9, 77);
  std::stringstream buf;
  pulsetrace::write_sequence(buf, seq);
  auto back = pulsetrace::read_sequence(buf);
  ASSERT_EQ(back.length(), seq.length());
  EXPECT_EQ(back.frame_rate, seq.frame_rate);
  EXPECT_EQ(back.pixel_pitch_mm, seq.pixel_pitch_mm);
  EXPECT_EQ(back.seed, seq.seed);
  EXPECT_EQ(back.diameters_mm, seq.diameters_mm);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    EXPECT_EQ(std::memcmp(back.frames[t].data(), seq.frames[t].data(),
                          seq.frames[t].size() * sizeof(float)),
              0);
  }
}

TEST(UsqFormat, HeaderAndPayloadSizeArithmetic) {
  PhantomSpec spec;  // 128x128, defaults
  auto seq = pulsetrace::generate(spec, 125, 1);
  std::stringstream buf;
  pulsetrace::write_sequence(buf, seq);
  // header 36 bytes + 125 diameters + 125*128*128 pixels, all f32
  const std::size_t expected =
      36u + 125u * 4u + 125u * 128u * 128u * 4u;
  EXPECT_EQ(buf.str().size(), expected);
}

TEST(UsqFormat, CorruptedMagicRejected) {
  PhantomSpec spec;
  spec.frame_extent = 32;
  spec.pixel_pitch_mm = 0.05;
  spec.baseline_diameter_mm = 1.0;
  spec.pulse_amplitude_mm = 0.1;
  spec.drift_amplitude_px = 0.5;
  auto seq = pulsetrace::generate(spec, 2, 1);
  std::stringstream buf;
  pulsetrace::write_sequence(buf, seq);
  std::string s = buf.str();
  s[0] = 'X';
  std::stringstream bad(s);
  EXPECT_THROW(pulsetrace::read_sequence(bad), BadMagicError);
}

TEST(UsqFormat, UnsupportedVersionRejected) {
  PhantomSpec spec;
  spec.frame_extent = 32;
  spec.pixel_pitch_mm = 0.05;
  spec.baseline_diameter_mm = 1.0;
  spec.pulse_amplitude_mm = 0.1;
  spec.drift_amplitude_px = 0.5;
  auto seq = pulsetrace::generate(spec, 2, 1);
  std::stringstream buf;
  pulsetrace::write_sequence(buf, seq);
  std::string s = buf.str();
  s[4] = 9;  // version u32 little-endian low byte
  std::stringstream bad(s);
  EXPECT_THROW(pulsetrace::read_sequence(bad), UnsupportedVersionError);
}

TEST(UsqFormat, TruncatedPayloadRejected) {
  PhantomSpec spec;
  spec.frame_extent = 32;
  spec.pixel_pitch_mm = 0.05;
  spec.baseline_diameter_mm = 1.0;
  spec.pulse_amplitude_mm = 0.1;
  spec.drift_amplitude_px = 0.5;
  auto seq = pulsetrace::generate(spec, 3, 1);
  std::stringstream buf;
  pulsetrace::write_sequence(buf, seq);
  std::string s = buf.str();
  s.resize(s.size() - 100);
  std::stringstream bad(s);
  EXPECT_THROW(pulsetrace::read_sequence(bad), TruncatedError);
}

TEST(UsqFormat, FileRoundTrip) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "pt_usq_test";
  fs::create_directories(dir);
  const auto path = dir / "probe.usq";
  PhantomSpec spec = PhantomSpec{};
  spec.frame_extent = 64;
  spec.pixel_pitch_mm = 0.1;
  spec.baseline_diameter_mm = 3.0;
  auto seq = pulsetrace::generate(spec, 5, 123);
  pulsetrace::write_sequence(path, seq);
  auto back = pulsetrace::read_sequence(path);
  EXPECT_EQ(back.length(), 5u);
  EXPECT_EQ(back.diameters_mm, seq.diameters_mm);
  fs::remove_all(dir);
}

TEST(PhantomRangesCheck, SampledSpecsAlwaysValid) {
  for (auto ranges : {PhantomRanges::full(), PhantomRanges::test()}) {
    Rng rng(31337);
    for (int i = 0; i < 50; ++i) {
      auto s = pulsetrace::sample_phantom(ranges, rng);
      EXPECT_NO_THROW(s.spec.validate());
      EXPECT_GE(s.frames, ranges.frames_min);
      EXPECT_LE(s.frames, ranges.frames_max);
    }
  }
}

TEST(DiameterCsv, ExportsOneRowPerFrame) {
  PhantomSpec spec;
  spec.frame_extent = 32;
  spec.pixel_pitch_mm = 0.05;
  spec.baseline_diameter_mm = 1.0;
  spec.pulse_amplitude_mm = 0.1;
  spec.drift_amplitude_px = 0.5;
  auto seq = pulsetrace::generate(spec, 4, 2);
  std::stringstream out;
  pulsetrace::export_diameters_csv(out, seq);
  std::string line;
  std::getline(out, line);
  EXPECT_EQ(line, "frame_index,diameter_mm");
  int rows = 0;
  while (std::getline(out, line)) {
    if (!line.empty()) ++rows;
  }
  EXPECT_EQ(rows, 4);
}
