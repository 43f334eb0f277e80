#include "pulsetrace/ops.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "support/grad_check.hpp"

using pulsetrace::Activation;
using pulsetrace::ConvSpec;
using pulsetrace::Elementwise;
using pulsetrace::Param;
using pulsetrace::ShapeError;
using pulsetrace::Tensor;
using pulsetrace::detail::Rng;

namespace {

template <typename T>
Param<T> random_param(std::vector<std::size_t> shape, Rng& rng) {
  return Param<T>(pttest::random_tensor<T>(std::move(shape), rng));
}

}  // namespace

// --- conv2d -----------------------------------------------------------------

TEST(Conv2d, SumOfOnesKernel) {
  Tensor<float> in = Tensor<float>::full({1, 3, 3}, 1.0f);
  Param<float> w(Tensor<float>::full({1, 1, 3, 3}, 1.0f));
  Param<float> b(Tensor<float>({1}));
  auto out = pulsetrace::conv2d(in, w, b, ConvSpec::make(1, 1, 3, 1, 0));
  ASSERT_EQ(out.shape(), (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_FLOAT_EQ(out[0], 9.0f);
}

TEST(Conv2d, IdentityKernelPassesInputThrough) {
  Rng rng(7);
  auto in = pttest::random_tensor<float>({2, 4, 5}, rng);
  Param<float> w(Tensor<float>({2, 2, 1, 1}));
  // per-channel identity: w[c][c][0][0] = 1
  w.value[0 * 2 + 0] = 1.0f;
  w.value[1 * 2 + 1] = 1.0f;
  Param<float> b(Tensor<float>({2}));
  auto out = pulsetrace::conv2d(in, w, b, ConvSpec::make(2, 2, 1, 1, 0));
  ASSERT_TRUE(out.same_shape(in));
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_FLOAT_EQ(out[i], in[i]);
}

TEST(Conv2d, StridedOutputExtent128To32) {
  Rng rng(3);
  auto in = pttest::random_tensor<float>({3, 128, 128}, rng);
  ConvSpec spec = ConvSpec::make(3, 2, 11, 4, 5);
  Param<float> w = random_param<float>({2, 3, 11, 11}, rng);
  Param<float> b(Tensor<float>({2}));
  auto out = pulsetrace::conv2d(in, w, b, spec);
  EXPECT_EQ(out.shape(), (std::vector<std::size_t>{2, 32, 32}));
}

TEST(Conv2d, ShapeMismatchNamesAxis) {
  Tensor<float> in({3, 8, 8});
  Param<float> w(Tensor<float>({2, 4, 3, 3}));  // wrong in_channels
  Param<float> b(Tensor<float>({2}));
  try {
    pulsetrace::conv2d(in, w, b, ConvSpec::make(3, 2, 3, 1, 1));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos);
  }
}

TEST(Conv2d, DegenerateOutputRejected) {
  Tensor<float> in({1, 2, 2});
  Param<float> w(Tensor<float>({1, 1, 5, 5}));
  Param<float> b(Tensor<float>({1}));
  EXPECT_THROW(pulsetrace::conv2d(in, w, b, ConvSpec::make(1, 1, 5, 1, 0)),
               ShapeError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  const ConvSpec spec{2, 3, 3, 3, 2, 2, 1, 1};
  auto in = pttest::random_tensor<double>({2, 5, 5}, rng);
  auto w = random_param<double>({3, 2, 3, 3}, rng);
  auto b = random_param<double>({3}, rng);

  auto out = pulsetrace::conv2d(in, w, b, spec);
  const auto coeff = pttest::random_tensor<double>(out.shape(), rng);

  auto forward = [&] {
    return pttest::weighted_sum(pulsetrace::conv2d(in, w, b, spec), coeff);
  };

  auto grad_in = pulsetrace::conv2d_backward(in, w, b, spec, coeff);

  const double step = 1e-5;
  auto fd_in = pttest::finite_difference(in, forward, step);
  auto fd_w = pttest::finite_difference(w.value, forward, step);
  auto fd_b = pttest::finite_difference(b.value, forward, step);

  EXPECT_LT(pttest::compare_grads(grad_in, fd_in).max_rel, 1e-4);
  EXPECT_LT(pttest::compare_grads(w.grad, fd_w).max_rel, 1e-4);
  EXPECT_LT(pttest::compare_grads(b.grad, fd_b).max_rel, 1e-4);
}

TEST(Conv2d, BackwardAccumulatesAcrossCalls) {
  Rng rng(13);
  const ConvSpec spec = ConvSpec::make(1, 2, 3, 1, 1);
  auto in = pttest::random_tensor<double>({1, 4, 4}, rng);
  auto w = random_param<double>({2, 1, 3, 3}, rng);
  auto b = random_param<double>({2}, rng);
  Tensor<double> up = Tensor<double>::full({2, 4, 4}, 0.5);

  pulsetrace::conv2d_backward(in, w, b, spec, up);
  auto once = w.grad;
  pulsetrace::conv2d_backward(in, w, b, spec, up);
  for (std::size_t i = 0; i < once.size(); ++i) {
    EXPECT_DOUBLE_EQ(w.grad[i], 2.0 * once[i]);
  }
}

TEST(Conv2d, LinearityInInput) {
  Rng rng(17);
  const ConvSpec spec = ConvSpec::make(2, 3, 3, 1, 1);
  auto x = pttest::random_tensor<double>({2, 6, 6}, rng);
  auto y = pttest::random_tensor<double>({2, 6, 6}, rng);
  auto w = random_param<double>({3, 2, 3, 3}, rng);
  Param<double> zero_b(Tensor<double>({3}));
  const double a = 1.7, c = -0.4;

  Tensor<double> mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + c * y[i];

  auto lhs = pulsetrace::conv2d(mix, w, zero_b, spec);
  auto cx = pulsetrace::conv2d(x, w, zero_b, spec);
  auto cy = pulsetrace::conv2d(y, w, zero_b, spec);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const double rhs = a * cx[i] + c * cy[i];
    EXPECT_NEAR(lhs[i], rhs, 1e-5 * std::max(1.0, std::fabs(rhs)));
  }
}

// Output extents equal the count of valid window anchors, enumerated
// directly rather than through the closed-form expression.
TEST(Conv2d, ShapeAlgebraMatchesAnchorEnumeration) {
  Rng rng(23);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t in_h = 1 + rng.index(24);
    const std::size_t in_w = 1 + rng.index(24);
    const std::size_t k = 1 + rng.index(5);
    const std::size_t s = 1 + rng.index(3);
    const std::size_t p = rng.index(3);
    if (in_h + 2 * p < k || in_w + 2 * p < k) continue;

    auto anchors = [&](std::size_t in) {
      std::size_t count = 0;
      for (std::size_t a = 0; a * s + k <= in + 2 * p; ++a) ++count;
      return count;
    };

    Tensor<float> in({1, in_h, in_w});
    ConvSpec spec = ConvSpec::make(1, 1, k, s, p);
    Param<float> w(Tensor<float>({1, 1, k, k}));
    Param<float> b(Tensor<float>({1}));
    auto out = pulsetrace::conv2d(in, w, b, spec);
    EXPECT_EQ(out.extent(1), anchors(in_h));
    EXPECT_EQ(out.extent(2), anchors(in_w));
  }
}

// --- max_pool2d ---------------------------------------------------------------

TEST(MaxPool, MaxOfFour) {
  Tensor<float> in({1, 2, 2}, {1, 2, 3, 4});
  auto out = pulsetrace::max_pool2d(in, 2, 2);
  ASSERT_EQ(out.shape(), (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_FLOAT_EQ(out[0], 4.0f);
}

TEST(MaxPool, ConstantInputIsIdempotent) {
  auto in = Tensor<float>::full({2, 6, 6}, 0.75f);
  auto out = pulsetrace::max_pool2d(in, 3, 2);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_FLOAT_EQ(out[i], 0.75f);
}

TEST(MaxPool, OutputExtent32To15) {
  Tensor<float> in({1, 32, 32});
  auto out = pulsetrace::max_pool2d(in, 3, 2);
  EXPECT_EQ(out.shape(), (std::vector<std::size_t>{1, 15, 15}));
}

TEST(MaxPool, WindowLargerThanInputRejected) {
  Tensor<float> in({1, 2, 2});
  EXPECT_THROW(pulsetrace::max_pool2d(in, 3, 1), ShapeError);
}

TEST(MaxPool, TiesRouteGradientToFirstRowMajorIndex) {
  auto in = Tensor<float>::full({1, 2, 2}, 1.0f);  // all tied
  std::vector<std::uint32_t> argmax;
  pulsetrace::max_pool2d(in, 2, 2, &argmax);
  ASSERT_EQ(argmax.size(), 1u);
  EXPECT_EQ(argmax[0], 0u);
  Tensor<float> up({1, 1, 1}, {3.0f});
  auto grad = pulsetrace::max_pool2d_backward(argmax, in.shape(), up);
  EXPECT_FLOAT_EQ(grad[0], 3.0f);
  EXPECT_FLOAT_EQ(grad[1], 0.0f);
}

TEST(MaxPool, DominanceProperty) {
  Rng rng(29);
  auto in = pttest::random_tensor<float>({3, 9, 9}, rng);
  const std::size_t window = 3, stride = 2;
  auto out = pulsetrace::max_pool2d(in, window, stride);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t oh = 0; oh < out.extent(1); ++oh) {
      for (std::size_t ow = 0; ow < out.extent(2); ++ow) {
        const float v = out.at3(c, oh, ow);
        bool found = false;
        for (std::size_t ki = 0; ki < window; ++ki) {
          for (std::size_t kj = 0; kj < window; ++kj) {
            const float e = in.at3(c, oh * stride + ki, ow * stride + kj);
            EXPECT_GE(v, e);
            found |= v == e;
          }
        }
        EXPECT_TRUE(found);
      }
    }
  }
}

TEST(MaxPool, GradientMatchesFiniteDifferences) {
  Rng rng(31);
  auto in = pttest::random_tensor<double>({2, 5, 5}, rng);
  std::vector<std::uint32_t> argmax;
  auto out = pulsetrace::max_pool2d(in, 2, 2, &argmax);
  const auto coeff = pttest::random_tensor<double>(out.shape(), rng);

  auto grad = pulsetrace::max_pool2d_backward(argmax, in.shape(), coeff);
  auto forward = [&] {
    return pttest::weighted_sum(pulsetrace::max_pool2d(in, 2, 2), coeff);
  };
  auto fd = pttest::finite_difference(in, forward, 1e-5);
  EXPECT_LT(pttest::compare_grads(grad, fd).max_rel, 1e-4);
}

// --- dense ---------------------------------------------------------------------

TEST(Dense, IdentityWeights) {
  Rng rng(37);
  auto in = pttest::random_tensor<float>({4}, rng);
  Param<float> w(Tensor<float>({4, 4}));
  for (std::size_t i = 0; i < 4; ++i) w.value.at2(i, i) = 1.0f;
  Param<float> b(Tensor<float>({4}));
  auto out = pulsetrace::dense(in, w, b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(out[i], in[i]);
}

TEST(Dense, ZeroWeightsGiveBias) {
  Tensor<float> in({3}, {5, 6, 7});
  Param<float> w(Tensor<float>({2, 3}));
  Param<float> b(Tensor<float>({2}, {1.5f, -2.5f}));
  auto out = pulsetrace::dense(in, w, b);
  EXPECT_FLOAT_EQ(out[0], 1.5f);
  EXPECT_FLOAT_EQ(out[1], -2.5f);
}

TEST(Dense, HandComputedProduct) {
  Tensor<float> in({2}, {1, 2});
  Param<float> w(Tensor<float>({2, 2}, {1, 1, 0, 1}));
  Param<float> b(Tensor<float>({2}));
  auto out = pulsetrace::dense(in, w, b);
  EXPECT_FLOAT_EQ(out[0], 3.0f);
  EXPECT_FLOAT_EQ(out[1], 2.0f);
}

TEST(Dense, LengthMismatchRejected) {
  Tensor<float> in({3});
  Param<float> w(Tensor<float>({2, 4}));
  Param<float> b(Tensor<float>({2}));
  EXPECT_THROW(pulsetrace::dense(in, w, b), ShapeError);
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  Rng rng(41);
  auto in = pttest::random_tensor<double>({5}, rng);
  auto w = random_param<double>({3, 5}, rng);
  auto b = random_param<double>({3}, rng);
  Tensor<double> coeff = pttest::random_tensor<double>({3}, rng);

  auto grad_in = pulsetrace::dense_backward(in, w, b, coeff);
  auto forward = [&] {
    return pttest::weighted_sum(pulsetrace::dense(in, w, b), coeff);
  };
  const double step = 1e-5;
  EXPECT_LT(pttest::compare_grads(grad_in,
                                  pttest::finite_difference(in, forward, step))
                .max_rel,
            1e-4);
  EXPECT_LT(
      pttest::compare_grads(
          w.grad, pttest::finite_difference(w.value, forward, step))
          .max_rel,
      1e-4);
  EXPECT_LT(
      pttest::compare_grads(
          b.grad, pttest::finite_difference(b.value, forward, step))
          .max_rel,
      1e-4);
}

// --- activations ------------------------------------------------------------------

TEST(ActivationOp, KnownValues) {
  Tensor<double> in({4}, {0.0, std::log(3.0), -1.0, 0.0});
  auto sig = pulsetrace::activation(in, Activation::Sigmoid);
  EXPECT_NEAR(sig[0], 0.5, 1e-12);
  EXPECT_NEAR(sig[1], 0.75, 1e-12);  // 1/(1+e^-ln3) = 3/4
  auto th = pulsetrace::activation(in, Activation::Tanh);
  EXPECT_NEAR(th[0], 0.0, 1e-12);
  auto re = pulsetrace::activation(in, Activation::Relu);
  EXPECT_EQ(re[2], 0.0);
}

TEST(ActivationOp, GradientsMatchFiniteDifferences) {
  Rng rng(43);
  for (auto kind :
       {Activation::Sigmoid, Activation::Tanh, Activation::Relu}) {
    auto in = pttest::random_tensor<double>({3, 4}, rng);
    const auto coeff = pttest::random_tensor<double>({3, 4}, rng);
    auto out = pulsetrace::activation(in, kind);
    auto grad = pulsetrace::activation_backward(out, kind, coeff);
    auto forward = [&] {
      return pttest::weighted_sum(pulsetrace::activation(in, kind), coeff);
    };
    auto fd = pttest::finite_difference(in, forward, 1e-6);
    EXPECT_LT(pttest::compare_grads(grad, fd).max_rel, 1e-4)
        << "kind " << static_cast<int>(kind);
  }
}

// --- elementwise -------------------------------------------------------------------

TEST(ElementwiseOp, HandProduct) {
  Tensor<float> a({2}, {1, 2});
  Tensor<float> b({2}, {3, 4});
  auto out = pulsetrace::elementwise(a, b, Elementwise::Mul);
  EXPECT_FLOAT_EQ(out[0], 3.0f);
  EXPECT_FLOAT_EQ(out[1], 8.0f);
}

TEST(ElementwiseOp, IdentityElements) {
  Rng rng(47);
  auto x = pttest::random_tensor<float>({3, 3}, rng);
  auto ones = Tensor<float>::full({3, 3}, 1.0f);
  auto zeros = Tensor<float>({3, 3});
  auto m = pulsetrace::elementwise(x, ones, Elementwise::Mul);
  auto s = pulsetrace::elementwise(x, zeros, Elementwise::Add);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_FLOAT_EQ(m[i], x[i]);
    EXPECT_FLOAT_EQ(s[i], x[i]);
  }
}

TEST(ElementwiseOp, ShapeMismatchRejected) {
  Tensor<float> a({2, 3});
  Tensor<float> b({3, 2});
  EXPECT_THROW(pulsetrace::elementwise(a, b, Elementwise::Add), ShapeError);
}

TEST(ElementwiseOp, MulBackward) {
  Tensor<double> a({2}, {2, -3});
  Tensor<double> b({2}, {5, 7});
  Tensor<double> up({2}, {1, 2});
  auto [ga, gb] = pulsetrace::elementwise_backward(a, b, Elementwise::Mul, up);
  EXPECT_DOUBLE_EQ(ga[0], 5.0);   // up * b
  EXPECT_DOUBLE_EQ(ga[1], 14.0);
  EXPECT_DOUBLE_EQ(gb[0], 2.0);   // up * a
  EXPECT_DOUBLE_EQ(gb[1], -6.0);
}

TEST(GruBlend, MatchesDefinitionAndGradient) {
  Rng rng(53);
  auto z = pttest::random_tensor<double>({2, 3}, rng, 0.05, 0.95);
  auto keep = pttest::random_tensor<double>({2, 3}, rng);
  auto cand = pttest::random_tensor<double>({2, 3}, rng);
  auto out = pulsetrace::gru_blend(z, keep, cand);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_NEAR(out[i], (1 - z[i]) * keep[i] + z[i] * cand[i], 1e-15);
  }
  const auto coeff = pttest::random_tensor<double>({2, 3}, rng);
  auto g = pulsetrace::gru_blend_backward(z, keep, cand, coeff);
  auto forward = [&] {
    return pttest::weighted_sum(pulsetrace::gru_blend(z, keep, cand), coeff);
  };
  EXPECT_LT(pttest::compare_grads(
                g.z, pttest::finite_difference(z, forward, 1e-6))
                .max_rel,
            1e-4);
  EXPECT_LT(pttest::compare_grads(
                g.keep, pttest::finite_difference(keep, forward, 1e-6))
                .max_rel,
            1e-4);
  EXPECT_LT(pttest::compare_grads(
                g.cand, pttest::finite_difference(cand, forward, 1e-6))
                .max_rel,
            1e-4);
}

// --- flatten --------------------------------------------------------------------

TEST(Flatten, FullFeatureMapLength) {
  Tensor<float> t({256, 13, 13});
  auto flat = pulsetrace::flatten(t);
  EXPECT_EQ(flat.shape(), (std::vector<std::size_t>{43264}));
}

TEST(Flatten, SingleElement) {
  Tensor<float> t({1, 1, 1}, {2.5f});
  auto flat = pulsetrace::flatten(t);
  EXPECT_EQ(flat.shape(), (std::vector<std::size_t>{1}));
  EXPECT_FLOAT_EQ(flat[0], 2.5f);
}

TEST(Flatten, RoundTripIsIdentity) {
  Rng rng(59);
  auto t = pttest::random_tensor<float>({3, 4, 5}, rng);
  auto back = pulsetrace::flatten_backward(pulsetrace::flatten(t), t.shape());
  ASSERT_TRUE(back.same_shape(t));
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(back[i], t[i]);
}
