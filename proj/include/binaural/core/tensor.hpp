#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "binaural/core/error.hpp"

namespace binaural {

using Shape = std::vector<std::int64_t>;

/// 64-byte aligned storage. Vectorised kernels peel loops by address, so
/// aligned buffers keep results independent of where the heap puts them.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t n) { ::operator delete(p, n * sizeof(T), kAlign); }

  // default-insert leaves the element uninitialised; Tensor fills explicitly
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < s.size(); ++i) oss << (i ? "x" : "") << s[i];
  oss << ']';
  return oss.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

/// Dense row-major tensor with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)) {
    for (auto d : shape_)
      if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape_));
    data_.resize(static_cast<std::size_t>(shape_numel(shape_)));
    std::fill(data_.begin(), data_.end(), fill);
  }

  Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end())) {}

  Tensor(Shape shape, Buffer<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
      throw ShapeError("data size " + std::to_string(data_.size()) + " does not match shape " +
                       shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  Buffer<T>& vec() { return data_; }
  const Buffer<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  const T& at(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  T& at(std::int64_t c, std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>((c * shape_[1] + i) * shape_[2] + j)];
  }
  const T& at(std::int64_t c, std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>((c * shape_[1] + i) * shape_[2] + j)];
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    Buffer<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_)
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(shape_) + " vs " +
                       shape_str(o.shape_));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Buffer<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same_shape(b, "max_abs_diff");
  T m{};
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace binaural
