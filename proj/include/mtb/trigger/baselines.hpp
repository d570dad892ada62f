#pragma once

#include <cstdint>

#include "mtb/trigger/bank.hpp"

namespace mtb {

/// N smooth random overlays, each rescaled so its largest magnitude is the
/// budget.
TriggerBank baseline_blended(std::size_t n, double epsilon, std::uint64_t pattern_seed, const Shape& image_shape);

/// N copies of a horizontal sine, eps * sin(2 pi f col / width + 2 pi k / n)
/// for trigger k+1, constant over rows and channels. Each wave is rescaled by
/// its largest sampled magnitude so the peak equals the budget.
TriggerBank baseline_sig(std::size_t n, double epsilon, double frequency, const Shape& image_shape);

}  // namespace mtb
