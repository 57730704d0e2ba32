#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "error.hpp"

namespace dygl {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

// Calls f with a value-initialized float or double tag matching dt.
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::f32) return f(float{});
  return f(double{});
}

/// Dense row-major array of rank 1..4 holding f32 or f64 scalars.
///
/// Extents are all >= 1. Factories that take caller data reject non-finite
/// values; kernels write into zero-initialized tensors directly.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, DType dtype);

  static Tensor zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }
  static Tensor full(Shape shape, double value, DType dtype);
  static Tensor from(Shape shape, const std::vector<double>& values, DType dtype = DType::f64);
  static Tensor from_f32(Shape shape, std::vector<float> values);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const;
  std::size_t numel() const noexcept { return numel_; }
  DType dtype() const noexcept { return dtype_; }
  bool empty() const noexcept { return shape_.empty(); }

  template <class T>
  std::span<T> span() {
    check_type<T>();
    if constexpr (std::is_same_v<T, float>) return {f32_.data(), f32_.size()};
    else return {f64_.data(), f64_.size()};
  }
  template <class T>
  std::span<const T> span() const {
    check_type<T>();
    if constexpr (std::is_same_v<T, float>) return {f32_.data(), f32_.size()};
    else return {f64_.data(), f64_.size()};
  }
  template <class T>
  T* data() { return span<T>().data(); }
  template <class T>
  const T* data() const { return span<T>().data(); }

  double item(std::size_t i) const { return dtype_ == DType::f32 ? f32_[i] : f64_[i]; }
  double item() const;
  void set(std::size_t i, double v) {
    if (dtype_ == DType::f32) f32_[i] = static_cast<float>(v);
    else f64_[i] = v;
  }
  std::vector<double> to_vector() const;

  Tensor reshape(Shape shape) const;
  Tensor astype(DType dtype) const;

  bool all_finite() const;
  /// Throws a numeric error naming `what` if any scalar is NaN or infinite.
  void validate(const std::string& what = "tensor") const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  /// Same shape, dtype and byte-identical payload.
  bool bit_equal(const Tensor& other) const;

  const void* raw_bytes() const;
  void* raw_bytes();
  std::size_t byte_size() const { return numel_ * (dtype_ == DType::f32 ? 4 : 8); }

 private:
  template <class T>
  void check_type() const {
    if (dtype_of<T>() != dtype_) fail(ErrorCode::contract, "tensor dtype mismatch");
  }

  Shape shape_;
  DType dtype_ = DType::f32;
  std::size_t numel_ = 0;
  std::vector<float> f32_;
  std::vector<double> f64_;
};

}  // namespace dygl
