#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "swgrid/error.hpp"

namespace swgrid {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor of rank 1..4 with an optional gradient buffer.
///
/// Copies share storage (handle semantics); use clone() for a deep copy.
/// The gradient buffer is allocated lazily the first time backward routes
/// a contribution into it.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : impl_(std::make_shared<Impl>()) {
    validate(shape);
    impl_->values.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
    validate(shape);
    if (values.size() != shape_numel(shape)) {
      throw InvalidInputError("tensor: " + std::to_string(values.size()) +
                              " values do not fill shape " + shape_to_string(shape));
    }
    impl_->values = std::move(values);
    impl_->shape = std::move(shape);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T{1}); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const noexcept { return impl_ != nullptr; }
  explicit operator bool() const noexcept { return defined(); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->values.size(); }

  std::span<T> data() { return impl_->values; }
  std::span<const T> data() const { return impl_->values; }
  T* ptr() { return impl_->values.data(); }
  const T* ptr() const { return impl_->values.data(); }
  T& operator[](std::size_t i) { return impl_->values[i]; }
  const T& operator[](std::size_t i) const { return impl_->values[i]; }
  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_to_string(shape()));
    return impl_->values[0];
  }
  std::vector<T> to_vector() const { return impl_->values; }

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
  /// Allocates a zero gradient buffer when absent.
  std::span<T> grad() {
    if (impl_->grad.empty()) impl_->grad.assign(numel(), T{0});
    return impl_->grad;
  }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
  }
  void clear_grad() { impl_->grad.clear(); }

  /// Deep copy of the values; the copy does not require grad.
  Tensor clone() const {
    Tensor out;
    out.impl_ = std::make_shared<Impl>();
    out.impl_->shape = impl_->shape;
    out.impl_->values = impl_->values;
    return out;
  }

  /// Same values viewed under a new shape (deep copy, no grad link).
  Tensor reshaped(Shape shape) const {
    Tensor out = clone();
    validate(shape);
    if (shape_numel(shape) != numel()) {
      throw ConfigError("reshape " + shape_to_string(impl_->shape) + " -> " + shape_to_string(shape));
    }
    out.impl_->shape = std::move(shape);
    return out;
  }

  bool is_same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  static void validate(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw ConfigError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
    }
    for (std::size_t extent : shape) {
      if (extent == 0) throw ConfigError("tensor extents must be positive: " + shape_to_string(shape));
    }
  }

  std::shared_ptr<Impl> impl_;
};

/// Converts element type; the result carries no gradient state.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  std::vector<To> values(src.numel());
  std::transform(src.data().begin(), src.data().end(), values.begin(),
                 [](From v) { return static_cast<To>(v); });
  return Tensor<To>(src.shape(), std::move(values));
}

}  // namespace swgrid
