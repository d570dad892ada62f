#include "mtb/trigger/baselines.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/rng.hpp"
#include "mtb/poison/synth.hpp"

namespace mtb {

namespace {

void check_args(std::size_t n, double epsilon, const Shape& image_shape) {
  if (n < 1) throw ConfigError("baseline needs at least one trigger");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError(fmt::format("epsilon must be in (0, 1), got {}", epsilon));
  if (image_shape.size() != 3) throw ShapeError("baseline triggers need a C x H x W shape");
}

// Scales values so the largest magnitude lands exactly on the float budget.
Tensor scale_to_budget(const std::vector<double>& values, const Shape& shape, double epsilon) {
  const float bound = budget_bound(epsilon);
  double peak = 0.0;
  std::size_t peak_at = 0;
  for (std::size_t p = 0; p < values.size(); ++p) {
    if (std::abs(values[p]) > peak) {
      peak = std::abs(values[p]);
      peak_at = p;
    }
  }
  if (peak == 0.0) throw NumericError("baseline pattern is identically zero");
  Tensor out(shape);
  for (std::size_t p = 0; p < values.size(); ++p) out[p] = static_cast<float>(values[p] / peak * bound);
  project_linf_inplace(out, epsilon);
  out[peak_at] = values[peak_at] > 0.0 ? bound : -bound;
  return out;
}

}  // namespace

TriggerBank baseline_blended(std::size_t n, double epsilon, std::uint64_t pattern_seed, const Shape& image_shape) {
  check_args(n, epsilon, image_shape);
  TriggerBank bank;
  bank.epsilon = epsilon;
  for (std::size_t i = 1; i <= n; ++i) {
    Rng rng(mix_seed(pattern_seed, i));
    const Tensor field = smooth_field(rng, image_shape, 5, -1.0, 1.0);
    bank.deltas.push_back(scale_to_budget(std::vector<double>(field.begin(), field.end()), image_shape, epsilon));
  }
  return bank;
}

TriggerBank baseline_sig(std::size_t n, double epsilon, double frequency, const Shape& image_shape) {
  check_args(n, epsilon, image_shape);
  if (!(frequency > 0.0)) throw ConfigError("SIG frequency must be positive");
  const std::size_t c = image_shape[0], h = image_shape[1], w = image_shape[2];
  TriggerBank bank;
  bank.epsilon = epsilon;
  for (std::size_t k = 0; k < n; ++k) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    std::vector<double> values(c * h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          values[(ch * h + y) * w + x] =
              std::sin(2.0 * std::numbers::pi * frequency * static_cast<double>(x) / static_cast<double>(w) + phase);
        }
      }
    }
    bank.deltas.push_back(scale_to_budget(values, image_shape, epsilon));
  }
  return bank;
}

}  // namespace mtb
