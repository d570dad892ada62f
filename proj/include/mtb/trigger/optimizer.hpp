#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtb/encoder/encoder.hpp"
#include "mtb/evalguard/transforms.hpp"
#include "mtb/poison/dataset.hpp"
#include "mtb/trigger/bank.hpp"

namespace mtb {

struct OptimConfig {
  std::size_t n_triggers = 4;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double max_lr = 0.6;
  double warmup_frac = 0.03;
  double lambda = 0.001;
  double epsilon = 24.0 / 255.0;
  std::uint64_t trigger_seed = 11;
  std::uint64_t proto_seed = 13;
  std::uint64_t batch_seed = 17;
  // Per-trigger seeds; when empty, trigger i uses mix_seed(trigger_seed, i)
  // and prototype i uses mix_seed(proto_seed, i).
  std::vector<std::uint64_t> trigger_seeds;
  std::vector<std::uint64_t> proto_seeds;
  double proto_lr_factor = 0.01;
  double temperature = 1.0;
  bool clean_anchor_term = true;
  bool use_psp = true;
  bool use_tpa = true;
  // When non-empty, each step applies one of these, picked by a seeded draw,
  // with its seed replaced by mix_seed(spec.seed, step).
  std::vector<TransformSpec> augmentations;
  std::uint64_t augmentation_seed = 19;

  void validate() const;
  std::uint64_t trigger_seed_for(std::size_t index) const;
  std::uint64_t proto_seed_for(std::size_t index) const;
};

// Linear warmup over ceil(warmup_frac * total) steps, then cosine decay.
double lr_at(std::size_t step, std::size_t total, double max_lr, double warmup_frac);

struct TraceRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double psp = 0.0;
  double tpa = 0.0;
  double total = 0.0;
};

struct OptimResult {
  TriggerBank bank;
  PrototypeBank protos;
  TriggerBank initial_bank;
  PrototypeBank initial_protos;
  // One record per step (loss before that step's update) plus a final record
  // at step == steps, evaluated on the step-0 batch.
  std::vector<TraceRecord> trace;
};

// Called after every update with the number of completed steps.
using StepObserver = std::function<void(std::size_t, const TriggerBank&, const PrototypeBank&)>;

/// Joint signed-gradient PGD on the triggers and plain gradient descent on
/// the prototypes under PSP + lambda * TPA.
OptimResult optimize_triggers(const OptimConfig& config, const CleanDataset& opt_set, const EncoderParams& encoder,
                              const StepObserver& observer = {});

/// Same loop with the separation objective: each trigger independently
/// maximizes the distance between triggered and clean embeddings. No
/// prototypes are used or returned.
OptimResult baseline_separation_only(const OptimConfig& config, const CleanDataset& opt_set,
                                     const EncoderParams& encoder, const StepObserver& observer = {});

// Step-0 triggers and prototypes of the loops above without running a step.
// Prototypes are empty when `with_prototypes` is false.
struct InitialState {
  TriggerBank bank;
  PrototypeBank protos;
};
InitialState initial_state(const OptimConfig& config, const CleanDataset& opt_set, const EncoderParams& encoder,
                           bool with_prototypes);

std::string trace_csv(const std::vector<TraceRecord>& trace);

}  // namespace mtb
