#pragma once

#include <vector>

#include "mtb/encoder/encoder.hpp"
#include "mtb/trigger/bank.hpp"

namespace mtb {

// Embeddings of clamp(v + delta_i) for every image; result is N x B x d.
Tensor triggered_embeddings(const EncoderParams& encoder, const TriggerBank& bank, const std::vector<Tensor>& images);

// Per-trigger mean embedding (N x d) of a triggered_embeddings tensor.
Tensor class_means(const Tensor& embeds);

// Smallest angle in radians between two distinct class means; needs N >= 2.
double min_pairwise_angle(const Tensor& means);

// Mean over triggers and images of ||g(v + delta_i) - p_i||.
double mean_distance_to_prototype(const Tensor& embeds, const PrototypeBank& protos);

}  // namespace mtb
