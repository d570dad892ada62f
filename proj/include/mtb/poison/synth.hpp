#pragma once

#include <cstdint>

#include "mtb/encoder/encoder.hpp"
#include "mtb/numerics/rng.hpp"
#include "mtb/poison/dataset.hpp"

namespace mtb {

struct SynthOptions {
  std::size_t grid = 4;        // control points per side of the class fields
  double pixel_noise = 0.04;   // per-pixel Gaussian sigma
  double field_noise = 0.08;   // amplitude of the per-image smooth variation
  std::size_t offset = 0;      // first per-tag image index (for disjoint extras)
};

/// Low-frequency random field: a grid x grid lattice of uniform [lo, hi]
/// values per channel, bilinearly upsampled to the image size.
Tensor smooth_field(Rng& rng, const Shape& image_shape, std::size_t grid, double lo, double hi);

/// Seeded synthetic image classes.
///
/// The seed fixes the class prototypes, so datasets with the same seed and
/// different tags share classes while drawing disjoint images; the tag and
/// image index pick each image's noise and provenance id. Image j belongs to
/// class j mod k.
CleanDataset synth_dataset(int k_classes, int per_class, const Shape& image_shape, std::uint64_t seed,
                           DatasetTag tag, const SynthOptions& options = {});

// Nearest-class-mean accuracy in embedding space, fitted on every other image
// of each class and scored on the rest.
double nearest_mean_probe(const CleanDataset& data, const EncoderParams& encoder);

}  // namespace mtb
