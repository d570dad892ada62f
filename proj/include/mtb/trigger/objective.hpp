#pragma once

#include <optional>
#include <vector>

#include "mtb/encoder/encoder.hpp"
#include "mtb/evalguard/transforms.hpp"
#include "mtb/trigger/losses.hpp"

namespace mtb {

enum class ObjectiveKind {
  // PSP + lambda * TPA over all triggers jointly.
  prototype,
  // Each trigger pushes its images away from their clean embeddings.
  separation,
};

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::prototype;
  double lambda = 0.001;
  bool use_psp = true;
  bool use_tpa = true;
  PspOptions psp;
  // Applied to every triggered and clean image before encoding; image b of
  // the batch uses reseeded(*augmentation, b).
  std::optional<TransformSpec> augmentation;
};

template <typename T>
struct ObjectiveResult {
  double total = 0.0;
  double psp = 0.0;
  double tpa = 0.0;
  std::vector<BasicTensor<T>> grad_deltas;
  BasicTensor<T> grad_protos;  // empty for the separation objective
};

/// Builds clamp_[0,1](v_b + delta_i) for every batch image and trigger,
/// encodes them and the clean images, and returns the loss with its gradient
/// with respect to each trigger and the prototypes. Per-trigger gradients are
/// summed over the batch in index order.
template <typename T>
ObjectiveResult<T> trigger_objective(const EncoderParams& encoder, const std::vector<BasicTensor<T>>& batch,
                                     const std::vector<BasicTensor<T>>& deltas, const BasicTensor<T>& protos,
                                     const ObjectiveConfig& config);

}  // namespace mtb
