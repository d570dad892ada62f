#include "mtb/evalguard/metrics.hpp"

#include <fmt/format.h>

#include "mtb/errors.hpp"

namespace mtb {

OutcomeCounts tally(const std::vector<int>& predictions, std::size_t trigger_index, int k_benign, int n_concepts) {
  OutcomeCounts c;
  const int own = k_benign + static_cast<int>(trigger_index) - 1;
  for (int p : predictions) {
    if (p == own) {
      ++c.success;
    } else if (p >= k_benign && p < k_benign + n_concepts) {
      ++c.confusion;
    } else {
      ++c.failed;
    }
  }
  return c;
}

namespace {

double percent(std::size_t part, std::size_t whole) {
  return whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole);
}

}  // namespace

MetricsReport make_report(const std::vector<std::vector<int>>& trigger_predictions,
                          const std::vector<int>& clean_predictions, const std::vector<int>& clean_labels,
                          const std::vector<ConceptId>& binding, int k_benign) {
  const std::size_t n = trigger_predictions.size();
  validate_binding(binding, n);
  if (clean_predictions.size() != clean_labels.size()) throw ShapeError("clean predictions and labels differ in count");
  MetricsReport r;
  for (std::size_t i = 1; i <= n; ++i) {
    TriggerMetrics t;
    t.trigger_index = i;
    t.concept_label = binding[i - 1].label;
    t.counts = tally(trigger_predictions[i - 1], i, k_benign, static_cast<int>(n));
    t.asr = percent(t.counts.success, t.counts.total());
    t.tcr = percent(t.counts.confusion, t.counts.total());
    t.failed = percent(t.counts.failed, t.counts.total());
    r.mean_asr += t.asr / static_cast<double>(n);
    r.mean_tcr += t.tcr / static_cast<double>(n);
    r.mean_failed += t.failed / static_cast<double>(n);
    r.per_trigger.push_back(std::move(t));
  }
  for (std::size_t j = 0; j < clean_predictions.size(); ++j) r.clean_correct += clean_predictions[j] == clean_labels[j];
  r.clean_total = clean_predictions.size();
  r.clean_accuracy = percent(r.clean_correct, r.clean_total);
  return r;
}

DetailedEvaluation evaluate_detailed(const SurrogateVictim& victim, const TriggerBank& bank,
                                     const std::vector<ConceptId>& binding, const CleanDataset& test,
                                     const std::optional<TransformSpec>& transform) {
  require_tag(test, DatasetTag::test, "evaluation");
  validate_binding(binding, bank.size());
  if (bank.size() != static_cast<std::size_t>(victim.n_concepts)) {
    throw ConfigError(fmt::format("trigger bank has {} triggers but the victim has {} concepts", bank.size(),
                                  victim.n_concepts));
  }
  if (!victim.binding.empty() && victim.binding != binding) {
    throw ConfigError(fmt::format("evaluation binding (hash {}) differs from the victim's (hash {})",
                                  hex64(binding_hash(binding)), hex64(binding_hash(victim.binding))));
  }
  if (transform) transform->validate();
  auto prepare = [&](Tensor image, std::size_t index) {
    return transform ? transform_apply(image, reseeded(*transform, index)) : image;
  };

  DetailedEvaluation out;
  out.trigger_predictions.resize(bank.size());
  for (std::size_t i = 1; i <= bank.size(); ++i) {
    std::vector<Tensor> inputs;
    inputs.reserve(test.size());
    for (std::size_t j = 0; j < test.size(); ++j) inputs.push_back(prepare(apply_trigger(test.images[j], bank, i), j));
    out.trigger_predictions[i - 1] = predict(victim, inputs);
  }
  std::vector<Tensor> clean_inputs;
  clean_inputs.reserve(test.size());
  for (std::size_t j = 0; j < test.size(); ++j) clean_inputs.push_back(prepare(test.images[j], j));
  out.clean_predictions = predict(victim, clean_inputs);
  out.report = make_report(out.trigger_predictions, out.clean_predictions, test.content_labels, binding,
                           victim.k_benign);
  out.report.transform = transform ? transform->to_string() : "none";
  return out;
}

MetricsReport evaluate(const SurrogateVictim& victim, const TriggerBank& bank, const std::vector<ConceptId>& binding,
                       const CleanDataset& test, const std::optional<TransformSpec>& transform) {
  return evaluate_detailed(victim, bank, binding, test, transform).report;
}

}  // namespace mtb
