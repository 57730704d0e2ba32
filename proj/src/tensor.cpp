#include "tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace dygl {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::configuration: return "configuration";
    case ErrorCode::contract: return "contract";
    case ErrorCode::state: return "state";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::format: return "format";
    case ErrorCode::version: return "version";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4)
    fail(ErrorCode::dimension, "tensor rank must be 1..4, got shape " + shape_str(shape));
  for (auto e : shape)
    if (e < 1) fail(ErrorCode::dimension, "tensor extents must be >= 1, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  check_shape(shape_);
  numel_ = shape_numel(shape_);
  if (dtype_ == DType::f32) f32_.assign(numel_, 0.0f);
  else f64_.assign(numel_, 0.0);
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  if (dtype == DType::f32) std::fill(t.f32_.begin(), t.f32_.end(), static_cast<float>(value));
  else std::fill(t.f64_.begin(), t.f64_.end(), value);
  t.validate("full");
  return t;
}

Tensor Tensor::from(Shape shape, const std::vector<double>& values, DType dtype) {
  Tensor t(std::move(shape), dtype);
  if (values.size() != t.numel_)
    fail(ErrorCode::dimension, "value count " + std::to_string(values.size()) + " does not match shape " +
                                   shape_str(t.shape_));
  for (std::size_t i = 0; i < values.size(); ++i) t.set(i, values[i]);
  t.validate("constructed tensor");
  return t;
}

Tensor Tensor::from_f32(Shape shape, std::vector<float> values) {
  Tensor t;
  check_shape(shape);
  t.shape_ = std::move(shape);
  t.numel_ = shape_numel(t.shape_);
  t.dtype_ = DType::f32;
  if (values.size() != t.numel_)
    fail(ErrorCode::dimension, "value count does not match shape " + shape_str(t.shape_));
  t.f32_ = std::move(values);
  t.validate("constructed tensor");
  return t;
}

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank())
    fail(ErrorCode::dimension, "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (numel_ != 1) fail(ErrorCode::contract, "item() requires a single-element tensor, got " + shape_str(shape_));
  return item(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(numel_);
  for (std::size_t i = 0; i < numel_; ++i) out[i] = item(i);
  return out;
}

Tensor Tensor::reshape(Shape shape) const {
  check_shape(shape);
  if (shape_numel(shape) != numel_)
    fail(ErrorCode::dimension, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::astype(DType dtype) const {
  if (dtype == dtype_) return *this;
  Tensor t(shape_, dtype);
  if (dtype == DType::f32)
    for (std::size_t i = 0; i < numel_; ++i) t.f32_[i] = static_cast<float>(f64_[i]);
  else
    for (std::size_t i = 0; i < numel_; ++i) t.f64_[i] = f32_[i];
  return t;
}

bool Tensor::all_finite() const {
  if (dtype_ == DType::f32) {
    for (float v : f32_)
      if (!std::isfinite(v)) return false;
  } else {
    for (double v : f64_)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::validate(const std::string& what) const {
  if (!all_finite()) fail(ErrorCode::numeric, what + " contains NaN or Inf");
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ && dtype_ == other.dtype_ &&
         std::memcmp(raw_bytes(), other.raw_bytes(), byte_size()) == 0;
}

const void* Tensor::raw_bytes() const {
  return dtype_ == DType::f32 ? static_cast<const void*>(f32_.data()) : static_cast<const void*>(f64_.data());
}

void* Tensor::raw_bytes() {
  return dtype_ == DType::f32 ? static_cast<void*>(f32_.data()) : static_cast<void*>(f64_.data());
}

}  // namespace dygl
