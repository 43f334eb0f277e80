#include "pulsetrace/tensor.hpp"

#include <gtest/gtest.h>

#include <sstream>

using pulsetrace::FormatError;
using pulsetrace::Param;
using pulsetrace::ShapeError;
using pulsetrace::Tensor;

TEST(Tensor, ElementCountMatchesShape) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.extent(1), 3u);
}

TEST(Tensor, ZeroExtentRejected) {
  EXPECT_THROW(Tensor<float>({2, 0, 4}), ShapeError);
}

TEST(Tensor, DataSizeMismatchRejected) {
  EXPECT_THROW(Tensor<float>({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
}

TEST(Tensor, ReshapePreservesElements) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (std::vector<std::size_t>{3, 2}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r[i], t[i]);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, ParamGradSameShapeAndZero) {
  Param<float> p(Tensor<float>::full({3, 2}, 1.5f));
  EXPECT_TRUE(p.value.same_shape(p.grad));
  for (std::size_t i = 0; i < p.grad.size(); ++i) EXPECT_EQ(p.grad[i], 0.0f);
  p.grad[0] = 2.0f;
  p.zero_grad();
  EXPECT_EQ(p.grad[0], 0.0f);
}

TEST(TensorIo, RoundTripBitIdentical) {
  Tensor<float> t({2, 3}, {0.5f, -1.25f, 3.75f, 0.0f, 1e-20f, 4096.5f});
  std::stringstream buf;
  pulsetrace::write_tensor(buf, t);
  auto r = pulsetrace::read_tensor<float>(buf);
  ASSERT_TRUE(r.same_shape(t));
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(r[i], t[i]);
}

TEST(TensorIo, BlobLayout) {
  // [u32 rank][u64 extents][f32 payload]
  Tensor<float> t({2, 2}, {1, 2, 3, 4});
  std::stringstream buf;
  pulsetrace::write_tensor(buf, t);
  const std::string s = buf.str();
  EXPECT_EQ(s.size(), 4u + 2u * 8u + 4u * 4u);
  EXPECT_EQ(static_cast<unsigned char>(s[0]), 2u);  // rank, little-endian
}

TEST(TensorIo, TruncatedPayloadRejected) {
  Tensor<float> t({4}, {1, 2, 3, 4});
  std::stringstream buf;
  pulsetrace::write_tensor(buf, t);
  std::string s = buf.str();
  s.resize(s.size() - 5);
  std::stringstream cut(s);
  EXPECT_THROW(pulsetrace::read_tensor<float>(cut), FormatError);
}

TEST(TensorIo, DoubleTensorsSerializeAsF32) {
  Tensor<double> t({2}, {1.0, 0.5});
  std::stringstream buf;
  pulsetrace::write_tensor(buf, t);
  EXPECT_EQ(buf.str().size(), 4u + 8u + 2u * 4u);
  auto r = pulsetrace::read_tensor<double>(buf);
  EXPECT_EQ(r[0], 1.0);
  EXPECT_EQ(r[1], 0.5);
}
