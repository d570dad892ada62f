#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mtb {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor with positive extents.
///
/// A default-constructed tensor is empty (rank 0, no values) and is the only
/// state in which the value count differs from the extent product.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor from_vector(std::vector<T> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  T& operator[](std::size_t i) noexcept { return values_[i]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  // Contiguous slice along the leading axis.
  std::span<T> row(std::size_t i);
  std::span<const T> row(std::size_t i) const;

  BasicTensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> values_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Equality of shapes and raw value bytes (distinguishes -0/+0, equal NaNs).
bool bitwise_equal(const Tensor& a, const Tensor& b);

// Stacks equally-shaped tensors along a new leading axis.
template <typename T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> parts);

template <typename T>
std::vector<BasicTensor<T>> unstack(const BasicTensor<T>& stacked);

}  // namespace mtb
