#pragma once

#include <cstddef>
#include <functional>

#include "mtb/numerics/tensor.hpp"

namespace mtb {

template <typename T>
using ScalarFunction = std::function<double(const BasicTensor<T>&)>;

/// Central-difference gradient of f at x, one coordinate at a time.
///
/// Differences are formed in double. For float inputs the actually
/// representable step x±h is used as the denominator, so input rounding does
/// not bias the estimate. Throws NumericError naming the coordinate if f is
/// not finite at a probe.
template <typename T>
BasicTensor<T> finite_diff_grad(const ScalarFunction<T>& f, const BasicTensor<T>& x, double h);

struct GradientComparison {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t compared = 0;  // elements above the magnitude floor
};

// Element-wise |a-n| / max(|a|,|n|) over elements whose larger magnitude
// exceeds `magnitude_floor`.
template <typename T>
GradientComparison compare_gradients(const BasicTensor<T>& analytic, const BasicTensor<T>& numeric,
                                     double magnitude_floor = 1e-6);

}  // namespace mtb
