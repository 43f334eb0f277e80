#ifndef PULSETRACE_TENSOR_HPP
#define PULSETRACE_TENSOR_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pulsetrace/errors.hpp"

namespace pulsetrace {

// Dense row-major n-d array with value semantics. The shape of a given
// value never changes; reshaped() returns a new value with the same
// elements. float carries production paths, double the gradient-check
// builds.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_)) {
      throw ShapeError("Tensor: " + std::to_string(data_.size()) +
                       " elements for shape " + shape_string(shape_));
    }
  }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-specific indexing; extents are the caller's contract.
  T& at3(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& at3(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  T& at2(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at2(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  Tensor reshaped(std::vector<std::size_t> new_shape) const {
    if (checked_size(new_shape) != data_.size()) {
      throw ShapeError("reshape: element count " +
                       std::to_string(data_.size()) + " != product of " +
                       shape_string(new_shape));
    }
    return Tensor(std::move(new_shape), data_);
  }

  bool all_finite() const {
    for (const T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  static std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] == 0) {
        throw ShapeError("Tensor: zero extent on axis " + std::to_string(i));
      }
      n *= shape[i];
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

// Learnable tensor with its gradient accumulator. Gradients add across
// backward calls until zero_grad(); one logical writer during backward.
template <typename T>
struct Param {
  Param() = default;
  explicit Param(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { std::fill(grad.data(), grad.data() + grad.size(), T(0)); }

  Tensor<T> value;
  Tensor<T> grad;
};

// --- binary tensor blobs -------------------------------------------------
// [u32 rank][u64 extents...][f32 payload row-major], little-endian. Shared
// by the sequence and checkpoint containers.

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace io {

template <typename U>
void write_pod(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& in, const char* what) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) {
    throw TruncatedError(std::string("truncated input reading ") + what);
  }
  return v;
}

}  // namespace io

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) {
    io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(e));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    io::write_pod<float>(out, static_cast<float>(t[i]));
  }
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
  const auto rank = io::read_pod<std::uint32_t>(in, "tensor rank");
  if (rank > 8) {
    throw FormatError("tensor rank " + std::to_string(rank) + " implausible");
  }
  std::vector<std::size_t> shape(rank);
  for (auto& e : shape) {
    const auto v = io::read_pod<std::uint64_t>(in, "tensor extent");
    if (v == 0) throw FormatError("tensor extent 0 in blob header");
    e = static_cast<std::size_t>(v);
  }
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<T>(io::read_pod<float>(in, "tensor payload"));
  }
  return t;
}

}  // namespace pulsetrace

#endif  // PULSETRACE_TENSOR_HPP
