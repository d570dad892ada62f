#include "mtb/trigger/geometry.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/kernels.hpp"
#include "mtb/numerics/parallel.hpp"
#include "mtb/poison/poison_set.hpp"

namespace mtb {

Tensor triggered_embeddings(const EncoderParams& encoder, const TriggerBank& bank, const std::vector<Tensor>& images) {
  if (images.empty()) throw DataError("triggered_embeddings needs images");
  const std::size_t n = bank.size(), b = images.size(), d = encoder.config.embed_dim;
  Tensor out({n, b, d});
  parallel_for(n * b, [&](std::size_t s) {
    const Tensor e = encode(encoder, apply_trigger(images[s % b], bank, s / b + 1));
    std::copy(e.begin(), e.end(), out.begin() + static_cast<std::ptrdiff_t>(s * d));
  });
  return out;
}

Tensor class_means(const Tensor& embeds) {
  if (embeds.rank() != 3) throw ShapeError("class_means expects N x B x d embeddings");
  const std::size_t n = embeds.extent(0), b = embeds.extent(1), d = embeds.extent(2);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b; ++k) s += embeds[(i * b + k) * d + j];
      out[i * d + j] = static_cast<float>(s / static_cast<double>(b));
    }
  }
  return out;
}

double min_pairwise_angle(const Tensor& means) {
  if (means.rank() != 2 || means.extent(0) < 2) throw ConfigError("min_pairwise_angle needs at least two classes");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < means.extent(0); ++i) {
    for (std::size_t j = i + 1; j < means.extent(0); ++j) {
      const double c = cosine_similarity<float>(means.row(i), means.row(j)).value;
      best = std::min(best, std::acos(c));
    }
  }
  return best;
}

double mean_distance_to_prototype(const Tensor& embeds, const PrototypeBank& protos) {
  if (embeds.rank() != 3) throw ShapeError("mean_distance_to_prototype expects N x B x d embeddings");
  const std::size_t n = embeds.extent(0), b = embeds.extent(1), d = embeds.extent(2);
  if (protos.count() != n + 1 || protos.dim() != d) throw ShapeError("prototype bank does not match the embeddings");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < b; ++k) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(embeds[(i * b + k) * d + j]) - protos.protos[(i + 1) * d + j];
        sq += diff * diff;
      }
      total += std::sqrt(sq);
    }
  }
  return total / static_cast<double>(n * b);
}

}  // namespace mtb
