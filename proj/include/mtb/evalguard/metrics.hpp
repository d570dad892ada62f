#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mtb/evalguard/transforms.hpp"
#include "mtb/victim/victim.hpp"

namespace mtb {

struct OutcomeCounts {
  std::size_t success = 0;    // predicted the concept bound to this trigger
  std::size_t confusion = 0;  // predicted a concept bound to another trigger
  std::size_t failed = 0;     // anything else
  std::size_t total() const { return success + confusion + failed; }
};

struct TriggerMetrics {
  std::size_t trigger_index = 1;
  std::string concept_label;
  OutcomeCounts counts;
  double asr = 0.0;  // percentages
  double tcr = 0.0;
  double failed = 0.0;
};

struct MetricsReport {
  std::vector<TriggerMetrics> per_trigger;
  double mean_asr = 0.0;
  double mean_tcr = 0.0;
  double mean_failed = 0.0;
  std::size_t clean_correct = 0;
  std::size_t clean_total = 0;
  double clean_accuracy = 0.0;  // percentage
  std::string transform = "none";
  std::string config_hash;
};

// Classifies each prediction made on trigger i's inputs. Concept classes are
// k_benign .. k_benign + n - 1.
OutcomeCounts tally(const std::vector<int>& predictions, std::size_t trigger_index, int k_benign, int n_concepts);

/// Builds a report from raw predictions: trigger_predictions[i-1] holds the
/// predicted classes of trigger i's inputs.
MetricsReport make_report(const std::vector<std::vector<int>>& trigger_predictions,
                          const std::vector<int>& clean_predictions, const std::vector<int>& clean_labels,
                          const std::vector<ConceptId>& binding, int k_benign);

struct DetailedEvaluation {
  MetricsReport report;
  std::vector<std::vector<int>> trigger_predictions;
  std::vector<int> clean_predictions;
};

/// Scores every test image with every trigger. The optional transform is
/// applied after the trigger (and to the clean images for clean accuracy),
/// reseeded per image index.
DetailedEvaluation evaluate_detailed(const SurrogateVictim& victim, const TriggerBank& bank,
                                     const std::vector<ConceptId>& binding, const CleanDataset& test,
                                     const std::optional<TransformSpec>& transform = std::nullopt);

MetricsReport evaluate(const SurrogateVictim& victim, const TriggerBank& bank, const std::vector<ConceptId>& binding,
                       const CleanDataset& test, const std::optional<TransformSpec>& transform = std::nullopt);

}  // namespace mtb
