#include "mtb/numerics/tensor.hpp"

#include <cmath>
#include <cstring>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mtb/errors.hpp"

namespace mtb {

std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

namespace {
void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError(fmt::format("tensor extent must be positive, got {}", shape_to_string(shape)));
  }
}
}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(shape_size(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (values_.size() != shape_size(shape_)) {
    throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_to_string(shape_), shape_size(shape_),
                                 values_.size()));
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_vector(std::vector<T> values) {
  Shape s{values.size()};
  return BasicTensor(std::move(s), std::move(values));
}

template <typename T>
std::span<T> BasicTensor<T>::row(std::size_t i) {
  const std::size_t stride = values_.size() / shape_.at(0);
  return std::span<T>(values_).subspan(i * stride, stride);
}

template <typename T>
std::span<const T> BasicTensor<T>::row(std::size_t i) const {
  const std::size_t stride = values_.size() / shape_.at(0);
  return std::span<const T>(values_).subspan(i * stride, stride);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw ShapeError(fmt::format("cannot reshape {} to {}", shape_to_string(shape_), shape_to_string(shape)));
  }
  return BasicTensor(std::move(shape), values_);
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  for (T v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

template <typename T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) throw ShapeError("cannot stack zero tensors");
  Shape shape{parts.size()};
  shape.insert(shape.end(), parts.front().shape().begin(), parts.front().shape().end());
  std::vector<T> values;
  values.reserve(shape_size(shape));
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) {
      throw ShapeError(fmt::format("stack: mismatched shapes {} and {}", shape_to_string(parts.front().shape()),
                                   shape_to_string(p.shape())));
    }
    values.insert(values.end(), p.begin(), p.end());
  }
  return BasicTensor<T>(std::move(shape), std::move(values));
}

template <typename T>
std::vector<BasicTensor<T>> unstack(const BasicTensor<T>& stacked) {
  if (stacked.rank() < 2) throw ShapeError("unstack needs rank >= 2");
  Shape inner(stacked.shape().begin() + 1, stacked.shape().end());
  std::vector<BasicTensor<T>> out;
  out.reserve(stacked.extent(0));
  for (std::size_t i = 0; i < stacked.extent(0); ++i) {
    auto r = stacked.row(i);
    out.emplace_back(inner, std::vector<T>(r.begin(), r.end()));
  }
  return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<float> stack(std::span<const BasicTensor<float>>);
template BasicTensor<double> stack(std::span<const BasicTensor<double>>);
template std::vector<BasicTensor<float>> unstack(const BasicTensor<float>&);
template std::vector<BasicTensor<double>> unstack(const BasicTensor<double>&);

}  // namespace mtb
