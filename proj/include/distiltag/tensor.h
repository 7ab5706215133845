#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "distiltag/error.h"

namespace distiltag {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

// Storage is 64-byte aligned so vectorized kernels see the same alignment on
// every run; with malloc's 16-byte alignment Eigen's peeling, and therefore
// summation order, varied between otherwise identical runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Dense row-major array with an optional gradient buffer. Copies are shallow:
// two Tensor handles may refer to the same storage, which is how graph nodes
// and parameter tables share data. Use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    impl_->values.assign(shape_size(shape), T{0});
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    if (shape_size(shape) != values.size()) {
      fail(ErrorKind::kDimension, "shape " + shape_string(shape) + " does not match " +
                                      std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->values.assign(values.begin(), values.end());
    impl_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->values.size(); }
  // Trailing dimension; rows() flattens everything before it.
  std::size_t cols() const { return impl_->shape.empty() ? 1 : impl_->shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<T> values() { return impl_->values; }
  std::span<const T> values() const { return impl_->values; }
  T* data() { return impl_->values.data(); }
  const T* data() const { return impl_->values.data(); }

  T& at(std::size_t r, std::size_t c) { return impl_->values[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return impl_->values[r * cols() + c]; }
  T item() const {
    if (size() != 1) fail(ErrorKind::kDimension, "item() on tensor of shape " + shape_string(shape()));
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Allocates a zeroed gradient buffer on first use. The gradient belongs to
  // the shared storage, so it stays writable through const handles.
  std::span<T> grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), T{0});
    return impl_->grad;
  }
  void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), T{0}); }

  Tensor clone() const {
    Tensor copy(impl_->shape, impl_->requires_grad);
    copy.impl_->values = impl_->values;
    return copy;
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    AlignedVector<T> values;
    AlignedVector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

template <typename To, typename From>
Tensor<To> convert(const Tensor<From>& src) {
  std::vector<To> values(src.values().begin(), src.values().end());
  return Tensor<To>(src.shape(), std::move(values), src.requires_grad());
}

}  // namespace distiltag
