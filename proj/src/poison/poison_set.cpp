#include "mtb/poison/poison_set.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/rng.hpp"

namespace mtb {

Tensor apply_trigger(const Tensor& image, const TriggerBank& bank, std::size_t index) {
  const Tensor& delta = bank.delta(index);
  if (delta.shape() != image.shape()) {
    throw ShapeError(fmt::format("trigger shape {} does not match image shape {}", shape_to_string(delta.shape()),
                                 shape_to_string(image.shape())));
  }
  Tensor out = image;
  for (std::size_t p = 0; p < out.size(); ++p) {
    float v = std::clamp(image[p] + delta[p], 0.0f, 1.0f);
    // float rounding of the sum can land one ulp outside the budget
    while (std::abs(static_cast<double>(v) - image[p]) > bank.epsilon) v = std::nextafter(v, image[p]);
    out[p] = v;
  }
  return out;
}

namespace {

// First m entries of a seeded partial Fisher-Yates shuffle of `pool`.
std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t m, Rng& rng) {
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  return pool;
}

}  // namespace

PoisonedDataset build_poison_set(const TriggerBank& bank, const CleanDataset& clean,
                                 const std::vector<ConceptId>& concepts, std::size_t m_per_trigger,
                                 std::uint64_t seed, bool shared_sources) {
  require_tag(clean, DatasetTag::implant, "build_poison_set");
  validate_binding(concepts, bank.size());
  if (m_per_trigger < 1) throw ConfigError("m_per_trigger must be at least 1");
  const std::size_t n = bank.size();
  const std::size_t needed = shared_sources ? m_per_trigger : n * m_per_trigger;
  if (clean.size() < needed) {
    throw DataError(fmt::format("poison set needs {} clean images ({} triggers x {} per trigger, {} sources) but "
                                "the implant set has {}",
                                needed, n, m_per_trigger, shared_sources ? "shared" : "disjoint", clean.size()));
  }

  PoisonedDataset out;
  out.m_per_trigger = m_per_trigger;
  out.shared_sources = shared_sources;
  out.entries.reserve(n * m_per_trigger);

  std::vector<std::size_t> all(clean.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> disjoint_order;
  if (!shared_sources) {
    Rng rng(mix_seed(seed, 0));
    disjoint_order = sample_without_replacement(all, needed, rng);
  }
  for (std::size_t i = 1; i <= n; ++i) {
    std::vector<std::size_t> picks;
    if (shared_sources) {
      Rng rng(mix_seed(seed, i));
      picks = sample_without_replacement(all, m_per_trigger, rng);
    } else {
      picks.assign(disjoint_order.begin() + static_cast<std::ptrdiff_t>((i - 1) * m_per_trigger),
                   disjoint_order.begin() + static_cast<std::ptrdiff_t>(i * m_per_trigger));
    }
    for (std::size_t src : picks) {
      out.entries.push_back({apply_trigger(clean.images[src], bank, i), i, concepts[i - 1], src, clean.content_labels[src],
                             clean.provenance[src]});
    }
  }
  return out;
}

}  // namespace mtb
