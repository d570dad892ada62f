#pragma once

#include "mtb/numerics/tensor.hpp"

namespace mtb {

struct PspOptions {
  // Adds the term that classifies clean embeddings to prototype 0.
  bool clean_anchor_term = true;
  double temperature = 1.0;
};

/// Loss value and gradients. grad_embeds is N x B x d, grad_clean B x d
/// (empty when the loss ignores clean embeddings), grad_protos (N+1) x d.
template <typename T>
struct LossGrad {
  double loss = 0.0;
  BasicTensor<T> grad_embeds;
  BasicTensor<T> grad_clean;
  BasicTensor<T> grad_protos;
};

/// Prototype-separation loss. embeds[i-1][b] is the embedding of image b
/// carrying trigger i; each is scored against every prototype by cosine
/// similarity and classified to prototype i with softmax cross-entropy,
/// summed over triggers and averaged over the batch.
///
/// Sums over prototypes and over triggers are formed in an order-independent
/// way, so relabeling triggers together with their prototypes permutes the
/// outputs without changing any bit.
template <typename T>
LossGrad<T> psp_loss(const BasicTensor<T>& embeds, const BasicTensor<T>& clean_embeds, const BasicTensor<T>& protos,
                     const PspOptions& options = {});

// Squared L2 distance of each triggered embedding to its own prototype,
// summed over triggers and averaged over the batch.
template <typename T>
LossGrad<T> tpa_loss(const BasicTensor<T>& embeds, const BasicTensor<T>& protos);

// Negated mean squared distance between each triggered embedding and the
// clean embedding of the same image, summed over triggers.
template <typename T>
LossGrad<T> separation_loss(const BasicTensor<T>& embeds, const BasicTensor<T>& clean_embeds);

}  // namespace mtb
