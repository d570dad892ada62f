#include "mtb/poison/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mtb/errors.hpp"

namespace mtb {

Tensor smooth_field(Rng& rng, const Shape& image_shape, std::size_t grid, double lo, double hi) {
  if (image_shape.size() != 3) throw ShapeError("smooth_field expects a CxHxW shape");
  if (grid < 2) throw ConfigError("smooth_field grid must be >= 2");
  const std::size_t c = image_shape[0], h = image_shape[1], w = image_shape[2];
  std::vector<double> lattice(c * grid * grid);
  for (double& v : lattice) v = rng.uniform(lo, hi);
  Tensor out(image_shape);
  auto coord = [&](std::size_t i, std::size_t n) {
    return n == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(grid - 1) / static_cast<double>(n - 1);
  };
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* g = lattice.data() + ch * grid * grid;
    for (std::size_t y = 0; y < h; ++y) {
      const double sy = coord(y, h);
      const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(sy), grid - 2);
      const double ty = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < w; ++x) {
        const double sx = coord(x, w);
        const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(sx), grid - 2);
        const double tx = sx - static_cast<double>(x0);
        const double v = (1 - ty) * ((1 - tx) * g[y0 * grid + x0] + tx * g[y0 * grid + x0 + 1]) +
                         ty * ((1 - tx) * g[(y0 + 1) * grid + x0] + tx * g[(y0 + 1) * grid + x0 + 1]);
        out[ch * h * w + y * w + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

CleanDataset synth_dataset(int k_classes, int per_class, const Shape& image_shape, std::uint64_t seed,
                           DatasetTag tag, const SynthOptions& options) {
  if (k_classes < 2) throw ConfigError(fmt::format("synth_dataset needs k_classes >= 2, got {}", k_classes));
  if (per_class < 1) throw ConfigError(fmt::format("synth_dataset needs per_class >= 1, got {}", per_class));

  Rng class_rng(mix_seed(seed, 0));
  std::vector<Tensor> prototypes;
  for (int k = 0; k < k_classes; ++k) prototypes.push_back(smooth_field(class_rng, image_shape, options.grid, 0.15, 0.85));

  const std::uint64_t tag_stream = mix_seed(seed, 1 + static_cast<std::uint64_t>(tag));
  CleanDataset out;
  out.tag = tag;
  out.num_classes = k_classes;
  out.source = fmt::format("synthetic:seed={}:grid={}", seed, options.grid);
  const std::size_t n = static_cast<std::size_t>(k_classes) * static_cast<std::size_t>(per_class);
  out.images.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t index = options.offset + j;
    const int label = static_cast<int>(index % static_cast<std::size_t>(k_classes));
    const std::uint64_t image_seed = mix_seed(tag_stream, index);
    Rng rng(image_seed);
    Tensor img = prototypes[label];
    const Tensor field = smooth_field(rng, image_shape, 3, -options.field_noise, options.field_noise);
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double v = img[i] + field[i] + options.pixel_noise * rng.normal();
      img[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    out.images.push_back(std::move(img));
    out.content_labels.push_back(label);
    out.provenance.push_back(image_seed);
  }
  return out;
}

double nearest_mean_probe(const CleanDataset& data, const EncoderParams& encoder) {
  const Tensor emb = encode_batch(encoder, data.images);
  const std::size_t d = encoder.config.embed_dim, k = static_cast<std::size_t>(data.num_classes);
  std::vector<double> means(k * d, 0.0);
  std::vector<std::size_t> counts(k, 0), seen(k, 0);
  // Alternate images of each class between the fit and held-out halves.
  std::vector<bool> held_out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto label = static_cast<std::size_t>(data.content_labels[i]);
    held_out[i] = seen[label]++ % 2 == 1;
    if (held_out[i]) continue;
    for (std::size_t j = 0; j < d; ++j) means[label * d + j] += emb.row(i)[j];
    ++counts[label];
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) means[c * d + j] /= std::max<std::size_t>(1, counts[c]);
  }
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!held_out[i]) continue;
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) dist += std::pow(emb.row(i)[j] - means[c * d + j], 2);
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    correct += best == static_cast<std::size_t>(data.content_labels[i]);
    ++total;
  }
  const double acc = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  spdlog::debug("nearest-mean probe on {} ({} held out): accuracy {:.4f}", data.source, total, acc);
  return acc;
}

}  // namespace mtb
