#include "pulsetrace/encoder.hpp"

#include <gtest/gtest.h>

#include <cstring>

#include "support/grad_check.hpp"

using pulsetrace::Activation;
using pulsetrace::ConvSpec;
using pulsetrace::EncoderConfig;
using pulsetrace::EncoderLayer;
using pulsetrace::EncoderParams;
using pulsetrace::EncoderTrace;
using pulsetrace::ShapeError;
using pulsetrace::Tensor;
using pulsetrace::detail::Rng;

namespace {

// Small three-layer config for gradient suites, 16 -> 4x2x2.
EncoderConfig toy_config() {
  EncoderConfig cfg;
  cfg.input_extent = 16;
  cfg.layers = {
      {ConvSpec::make(1, 2, 3, 2, 1), Activation::Relu, 2, 2},
      {ConvSpec::make(2, 4, 3, 1, 0), Activation::Relu, 0, 0},
  };
  cfg.out_channels = 4;
  cfg.out_h = cfg.out_w = 2;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST(EncoderConfigCheck, FullShapeTheorem128To256x13x13) {
  const auto cfg = EncoderConfig::full();
  EXPECT_EQ(cfg.out_channels, 256u);
  EXPECT_EQ(cfg.out_h, 13u);
  EXPECT_EQ(cfg.out_w, 13u);
  EXPECT_EQ(cfg.feature_size(), 43264u);
}

TEST(EncoderConfigCheck, TestProfile64To32x6x6) {
  const auto cfg = EncoderConfig::test();
  EXPECT_EQ(cfg.out_channels, 32u);
  EXPECT_EQ(cfg.out_h, 6u);
  EXPECT_EQ(cfg.out_w, 6u);
}

TEST(EncoderConfigCheck, InconsistentDeclarationRejected) {
  auto cfg = EncoderConfig::test();
  cfg.out_h = 7;
  EXPECT_THROW(cfg.validate(), ShapeError);
}

TEST(Encoder, FullConfigProducesDeclaredShape) {
  Rng rng(1);
  const auto cfg = EncoderConfig::full();
  auto params = EncoderParams<float>::init(cfg, rng);
  auto frame = pttest::random_tensor<float>({1, 128, 128}, rng, 0.0, 1.0);
  auto fm = pulsetrace::encode_frame(frame, params, cfg);
  EXPECT_EQ(fm.x.shape(), (std::vector<std::size_t>{256, 13, 13}));
  EXPECT_TRUE(fm.x.all_finite());
}

TEST(Encoder, TestConfigProducesDeclaredShape) {
  Rng rng(2);
  const auto cfg = EncoderConfig::test();
  auto params = EncoderParams<float>::init(cfg, rng);
  auto frame = pttest::random_tensor<float>({1, 64, 64}, rng, 0.0, 1.0);
  auto fm = pulsetrace::encode_frame(frame, params, cfg, 5);
  EXPECT_EQ(fm.x.shape(), (std::vector<std::size_t>{32, 6, 6}));
  EXPECT_EQ(fm.frame_index, 5u);
}

TEST(Encoder, ZeroParamsGiveZeroFeatureMap) {
  Rng rng(3);
  const auto cfg = EncoderConfig::test();
  EncoderParams<float> params;
  for (const auto& l : cfg.layers) {
    params.weights.emplace_back(Tensor<float>(
        {l.conv.out_channels, l.conv.in_channels, l.conv.kernel_h,
         l.conv.kernel_w}));
    params.biases.emplace_back(Tensor<float>({l.conv.out_channels}));
  }
  auto frame = pttest::random_tensor<float>({1, 64, 64}, rng, 0.0, 1.0);
  auto fm = pulsetrace::encode_frame(frame, params, cfg);
  for (std::size_t i = 0; i < fm.x.size(); ++i) EXPECT_EQ(fm.x[i], 0.0f);
}

TEST(Encoder, WrongFrameExtentRejected) {
  Rng rng(4);
  const auto cfg = EncoderConfig::test();
  auto params = EncoderParams<float>::init(cfg, rng);
  Tensor<float> frame({1, 32, 32});
  EXPECT_THROW(pulsetrace::encode_frame(frame, params, cfg), ShapeError);
}

TEST(Encoder, DeterministicForward) {
  Rng rng(5);
  const auto cfg = EncoderConfig::test();
  auto params = EncoderParams<float>::init(cfg, rng);
  auto frame = pttest::random_tensor<float>({1, 64, 64}, rng, 0.0, 1.0);
  auto a = pulsetrace::encode_frame(frame, params, cfg);
  auto b = pulsetrace::encode_frame(frame, params, cfg);
  ASSERT_EQ(a.x.size(), b.x.size());
  EXPECT_EQ(std::memcmp(a.x.data(), b.x.data(), a.x.size() * sizeof(float)),
            0);
}

// First-layer translation response: shifting the input one stride unit
// shifts interior activations exactly.
TEST(Encoder, TranslationResponseSingleLayer) {
  Rng rng(6);
  EncoderConfig cfg;
  cfg.input_extent = 8;
  cfg.layers = {{ConvSpec::make(1, 4, 3, 1, 0), Activation::Relu, 0, 0}};
  cfg.out_channels = 4;
  cfg.out_h = cfg.out_w = 6;
  cfg.validate();
  auto params = EncoderParams<float>::init(cfg, rng);

  auto frame = pttest::random_tensor<float>({1, 8, 8}, rng, 0.0, 1.0);
  Tensor<float> shifted({1, 8, 8});
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 1; x < 8; ++x) {
      shifted.at3(0, y, x) = frame.at3(0, y, x - 1);
    }
  }
  auto base = pulsetrace::encode_frame(frame, params, cfg);
  auto moved = pulsetrace::encode_frame(shifted, params, cfg);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t y = 0; y < 6; ++y) {
      for (std::size_t x = 1; x < 6; ++x) {
        EXPECT_EQ(moved.x.at3(c, y, x), base.x.at3(c, y, x - 1));
      }
    }
  }
}

TEST(Encoder, BackwardWithoutTraceThrows) {
  Rng rng(7);
  const auto cfg = toy_config();
  auto params = EncoderParams<double>::init(cfg, rng);
  Tensor<double> up({4, 2, 2});
  EncoderTrace<double> empty;
  EXPECT_THROW(pulsetrace::encode_backward(up, params, cfg, empty),
               std::logic_error);
}

TEST(Encoder, ZeroUpstreamGivesZeroGrads) {
  Rng rng(8);
  const auto cfg = toy_config();
  auto params = EncoderParams<double>::init(cfg, rng);
  auto frame = pttest::random_tensor<double>({1, 16, 16}, rng, 0.0, 1.0);
  EncoderTrace<double> trace;
  pulsetrace::encode_frame(frame, params, cfg, 0, &trace);
  Tensor<double> up({4, 2, 2});
  auto gin = pulsetrace::encode_backward(up, params, cfg, trace);
  for (std::size_t i = 0; i < gin.size(); ++i) EXPECT_EQ(gin[i], 0.0);
  for (const auto& w : params.weights) {
    for (std::size_t i = 0; i < w.grad.size(); ++i) EXPECT_EQ(w.grad[i], 0.0);
  }
}

TEST(Encoder, ConsecutiveBackwardsDoubleGrads) {
  Rng rng(9);
  const auto cfg = toy_config();
  auto params = EncoderParams<double>::init(cfg, rng);
  auto frame = pttest::random_tensor<double>({1, 16, 16}, rng, 0.0, 1.0);
  EncoderTrace<double> trace;
  pulsetrace::encode_frame(frame, params, cfg, 0, &trace);
  auto up = pttest::random_tensor<double>({4, 2, 2}, rng);
  pulsetrace::encode_backward(up, params, cfg, trace);
  auto snapshot = params.weights[0].grad;
  pulsetrace::encode_backward(up, params, cfg, trace);
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    EXPECT_DOUBLE_EQ(params.weights[0].grad[i], 2.0 * snapshot[i]);
  }
}

// Sum-of-outputs objective against central differences, 64-bit.
TEST(Encoder, GradientMatchesFiniteDifferencesOnToyConfig) {
  Rng rng(10);
  const auto cfg = toy_config();
  auto params = EncoderParams<double>::init(cfg, rng);
  auto frame = pttest::random_tensor<double>({1, 16, 16}, rng, 0.1, 0.9);

  auto forward = [&] {
    return pttest::sum_all(pulsetrace::encode_frame(frame, params, cfg).x);
  };

  EncoderTrace<double> trace;
  auto fm = pulsetrace::encode_frame(frame, params, cfg, 0, &trace);
  auto ones = Tensor<double>::full(fm.x.shape(), 1.0);
  auto grad_frame = pulsetrace::encode_backward(ones, params, cfg, trace);

  const double step = 1e-5;
  auto fd_frame = pttest::finite_difference(frame, forward, step);
  EXPECT_LT(pttest::compare_grads(grad_frame, fd_frame).max_rel, 1e-4);
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    auto fd_w =
        pttest::finite_difference(params.weights[l].value, forward, step);
    auto fd_b =
        pttest::finite_difference(params.biases[l].value, forward, step);
    EXPECT_LT(pttest::compare_grads(params.weights[l].grad, fd_w).max_rel,
              1e-4)
        << "layer " << l;
    EXPECT_LT(pttest::compare_grads(params.biases[l].grad, fd_b).max_rel,
              1e-4)
        << "layer " << l;
  }
}
