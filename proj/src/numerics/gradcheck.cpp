#include "mtb/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mtb/errors.hpp"

namespace mtb {

template <typename T>
BasicTensor<T> finite_diff_grad(const ScalarFunction<T>& f, const BasicTensor<T>& x, double h) {
  if (!(h > 0.0)) throw ConfigError(fmt::format("finite_diff_grad: step must be positive, got {}", h));
  BasicTensor<T> grad(x.shape());
  BasicTensor<T> probe = x;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const T original = x[j];
    const T up = static_cast<T>(static_cast<double>(original) + h);
    const T down = static_cast<T>(static_cast<double>(original) - h);
    probe[j] = up;
    const double f_up = f(probe);
    probe[j] = down;
    const double f_down = f(probe);
    probe[j] = original;
    if (!std::isfinite(f_up) || !std::isfinite(f_down)) {
      throw NumericError(fmt::format("finite_diff_grad: non-finite value at coordinate {} (f+={}, f-={})", j, f_up,
                                     f_down));
    }
    const double step = static_cast<double>(up) - static_cast<double>(down);
    grad[j] = static_cast<T>((f_up - f_down) / step);
  }
  return grad;
}

template <typename T>
GradientComparison compare_gradients(const BasicTensor<T>& analytic, const BasicTensor<T>& numeric,
                                     double magnitude_floor) {
  if (analytic.shape() != numeric.shape()) {
    throw ShapeError(fmt::format("compare_gradients: shapes {} and {}", shape_to_string(analytic.shape()),
                                 shape_to_string(numeric.shape())));
  }
  GradientComparison out;
  for (std::size_t j = 0; j < analytic.size(); ++j) {
    const double a = analytic[j], n = numeric[j];
    const double scale = std::max(std::abs(a), std::abs(n));
    if (scale <= magnitude_floor) continue;
    ++out.compared;
    const double rel = std::abs(a - n) / scale;
    if (rel > out.max_relative_error) {
      out.max_relative_error = rel;
      out.worst_index = j;
    }
  }
  return out;
}

template TensorD finite_diff_grad(const ScalarFunction<double>&, const TensorD&, double);
template Tensor finite_diff_grad(const ScalarFunction<float>&, const Tensor&, double);
template GradientComparison compare_gradients(const TensorD&, const TensorD&, double);
template GradientComparison compare_gradients(const Tensor&, const Tensor&, double);

}  // namespace mtb
