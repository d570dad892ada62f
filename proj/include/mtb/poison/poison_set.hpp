#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mtb/poison/dataset.hpp"
#include "mtb/trigger/bank.hpp"

namespace mtb {

// clamp_[0,1](image + delta_i), i in 1..N.
Tensor apply_trigger(const Tensor& image, const TriggerBank& bank, std::size_t index);

struct PoisonedEntry {
  Tensor image;
  std::size_t trigger_index = 1;
  ConceptId target;
  std::size_t source_index = 0;
  int content_label = 0;
  std::uint64_t source_provenance = 0;
};

struct PoisonedDataset {
  std::vector<PoisonedEntry> entries;
  std::size_t m_per_trigger = 0;
  bool shared_sources = true;

  std::size_t size() const { return entries.size(); }
};

/// Draws m clean images per trigger (without replacement within a trigger),
/// applies the trigger and binds concept i to trigger i. With shared sources
/// each trigger samples the whole set independently; otherwise sources are
/// disjoint across triggers, which needs N*m clean images.
PoisonedDataset build_poison_set(const TriggerBank& bank, const CleanDataset& clean,
                                 const std::vector<ConceptId>& concepts, std::size_t m_per_trigger,
                                 std::uint64_t seed, bool shared_sources = true);

// Persistence: stacked MTT1 images plus a CSV manifest.
void save_dataset(const CleanDataset& data, const std::filesystem::path& images_path,
                  const std::filesystem::path& manifest_path);
CleanDataset load_dataset(const std::filesystem::path& images_path, const std::filesystem::path& manifest_path);
void save_poisoned(const PoisonedDataset& data, const std::filesystem::path& images_path,
                   const std::filesystem::path& manifest_path);

}  // namespace mtb
