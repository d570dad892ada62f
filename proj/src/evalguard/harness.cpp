#include "mtb/evalguard/harness.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "mtb/errors.hpp"

namespace mtb {

AttackRun implant_and_evaluate(const AttackSetup& setup, const TriggerBank& bank, const std::vector<ConceptId>& binding,
                               const CleanDataset& implant_clean, const CleanDataset& test,
                               const std::optional<TransformSpec>& transform) {
  AttackRun run;
  run.poison =
      build_poison_set(bank, implant_clean, binding, setup.m_per_trigger, setup.poison_seed, setup.shared_sources);
  SurrogateVictim fresh = make_victim(setup.encoder, setup.k_benign, static_cast<int>(bank.size()));
  fresh.binding = binding;
  run.mix = build_mix(fresh, implant_clean, run.poison);
  auto trained = train_on_mix(fresh, run.mix, setup.implant);
  run.victim = std::move(trained.victim);
  run.epoch_loss = std::move(trained.epoch_loss);
  run.report = evaluate(run.victim, bank, binding, test, transform);
  return run;
}

FilterResult filter_and_reimplant(const AttackSetup& setup, const TrainingMix& mix, const std::vector<double>& scores,
                                  int cutoff_percent, const TriggerBank& bank, const std::vector<ConceptId>& binding,
                                  const CleanDataset& test) {
  if (std::find(std::begin(kCutoffPercents), std::end(kCutoffPercents), cutoff_percent) == std::end(kCutoffPercents)) {
    throw ConfigError(fmt::format("cutoff {}% is not one of 0, 5, 10, 20", cutoff_percent));
  }
  if (scores.size() != mix.size()) {
    throw ShapeError(fmt::format("{} scores for a mix of {} samples", scores.size(), mix.size()));
  }
  const std::size_t drop = mix.size() * static_cast<std::size_t>(cutoff_percent) / 100;
  std::vector<std::size_t> order(mix.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  FilterResult out;
  std::vector<bool> removed(mix.size(), false);
  for (std::size_t r = 0; r < drop; ++r) {
    removed[order[r]] = true;
    out.removed_poison += mix.poisoned[order[r]];
  }
  out.removed = drop;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    if (!removed[i]) keep.push_back(i);
  }
  SurrogateVictim fresh = make_victim(setup.encoder, setup.k_benign, static_cast<int>(bank.size()));
  fresh.binding = binding;
  out.victim = train_on_mix(fresh, mix.subset(keep), setup.implant).victim;
  out.report = evaluate(out.victim, bank, binding, test);
  return out;
}

MetricsReport rebind_and_evaluate(const AttackSetup& setup, const TriggerBank& bank,
                                  const std::vector<ConceptId>& new_concepts, const CleanDataset& implant_clean,
                                  const CleanDataset& test) {
  if (new_concepts.size() != bank.size()) {
    throw ConfigError(fmt::format("rebinding gives {} concepts for {} triggers", new_concepts.size(), bank.size()));
  }
  validate_binding(new_concepts, bank.size());
  return implant_and_evaluate(setup, bank, new_concepts, implant_clean, test).report;
}

std::vector<FinetunePoint> finetune_sweep(const AttackSetup& setup, const SurrogateVictim& victim,
                                          const CleanDataset& extra, const std::vector<std::size_t>& amounts,
                                          const TriggerBank& bank, const std::vector<ConceptId>& binding,
                                          const CleanDataset& test) {
  std::vector<FinetunePoint> out;
  for (std::size_t amount : amounts) {
    const SurrogateVictim tuned = benign_finetune(victim, extra, amount, setup.implant).victim;
    out.push_back({amount, evaluate(tuned, bank, binding, test)});
  }
  return out;
}

}  // namespace mtb
