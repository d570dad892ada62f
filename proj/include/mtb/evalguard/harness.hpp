#pragma once

#include <optional>
#include <vector>

#include "mtb/evalguard/metrics.hpp"
#include "mtb/victim/victim.hpp"

namespace mtb {

// Everything needed to turn a trigger bank into an implanted victim.
struct AttackSetup {
  EncoderParams encoder;
  int k_benign = 4;
  std::size_t m_per_trigger = 200;
  std::uint64_t poison_seed = 23;
  bool shared_sources = true;
  ImplantOptions implant;
};

struct AttackRun {
  PoisonedDataset poison;
  TrainingMix mix;
  SurrogateVictim victim;
  std::vector<double> epoch_loss;
  MetricsReport report;
};

// Builds the poison set under `binding`, implants a fresh victim on the mix
// with `implant_clean` and evaluates it on `test`.
AttackRun implant_and_evaluate(const AttackSetup& setup, const TriggerBank& bank, const std::vector<ConceptId>& binding,
                               const CleanDataset& implant_clean, const CleanDataset& test,
                               const std::optional<TransformSpec>& transform = std::nullopt);

inline constexpr int kCutoffPercents[] = {0, 5, 10, 20};

struct FilterResult {
  SurrogateVictim victim;
  MetricsReport report;
  std::size_t removed = 0;
  std::size_t removed_poison = 0;
};

/// Drops the cutoff_percent highest-scoring samples of the mix (ties keep the
/// earlier sample), implants a fresh victim on the rest and evaluates it.
FilterResult filter_and_reimplant(const AttackSetup& setup, const TrainingMix& mix, const std::vector<double>& scores,
                                  int cutoff_percent, const TriggerBank& bank, const std::vector<ConceptId>& binding,
                                  const CleanDataset& test);

// Reuses `bank` unchanged under a new concept binding.
MetricsReport rebind_and_evaluate(const AttackSetup& setup, const TriggerBank& bank,
                                  const std::vector<ConceptId>& new_concepts, const CleanDataset& implant_clean,
                                  const CleanDataset& test);

struct FinetunePoint {
  std::size_t amount = 0;
  MetricsReport report;
};

std::vector<FinetunePoint> finetune_sweep(const AttackSetup& setup, const SurrogateVictim& victim,
                                          const CleanDataset& extra, const std::vector<std::size_t>& amounts,
                                          const TriggerBank& bank, const std::vector<ConceptId>& binding,
                                          const CleanDataset& test);

}  // namespace mtb
