#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "mtb/numerics/tensor.hpp"

namespace mtb {

enum class TransformKind { blur, crop_resize, quantize };

/// Input degradation used both as a deployment-time defense and as
/// differentiable augmentation during trigger optimization.
///
/// blur: separable Gaussian (sigma pixels, radius ceil(3 sigma)) with reflect
///       padding.
/// crop_resize: crop of round(fraction * side) pixels at a seeded offset,
///       bilinearly resized back (corner-aligned).
/// quantize: q(x) = r(x * L) / L with L = 2^bits - 1 and r rounding to the
///       nearest integer, ties toward the lower one. Straight-through gradient.
struct TransformSpec {
  TransformKind kind = TransformKind::blur;
  double sigma = 1.0;
  double crop_fraction = 0.9;
  int bits = 8;
  std::uint64_t seed = 0;

  void validate() const;
  // "blur:1", "crop:0.9", "quantize:5" (seed is not part of the text form).
  std::string to_string() const;
  static TransformSpec parse(std::string_view text);

  bool operator==(const TransformSpec&) const = default;
};

TransformSpec blur_spec(double sigma);
TransformSpec crop_spec(double fraction, std::uint64_t seed = 0);
TransformSpec quantize_spec(int bits);

// Same spec with a seed derived from (spec.seed, stream); used to give each
// image its own crop offset.
TransformSpec reseeded(const TransformSpec& spec, std::uint64_t stream);

template <typename T>
BasicTensor<T> transform_apply(const BasicTensor<T>& image, const TransformSpec& spec);

// Vector-Jacobian product for transform_apply at an image of `shape`
// (quantize passes the gradient straight through).
template <typename T>
BasicTensor<T> transform_vjp(const Shape& shape, const TransformSpec& spec, const BasicTensor<T>& grad_out);

}  // namespace mtb
