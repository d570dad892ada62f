#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "mtb/encoder/encoder.hpp"
#include "mtb/numerics/mtt1.hpp"
#include "mtb/poison/poison_set.hpp"

namespace mtb {

/// Frozen encoder plus a linear head over K benign classes followed by N
/// concept classes; concept i is class K + i - 1.
struct SurrogateVictim {
  EncoderParams encoder;
  // Present only after implanting with tune_encoder; used instead of
  // `encoder` for inference. `encoder` itself is never modified.
  std::optional<EncoderParams> tuned_encoder;
  Tensor head_weights;  // (K+N) x d
  Tensor head_bias;     // K+N
  int k_benign = 0;
  int n_concepts = 0;
  std::vector<ConceptId> binding;
  // Provenance ids of every clean source image the head was trained on.
  std::vector<std::uint64_t> training_provenance;

  std::size_t num_classes() const { return static_cast<std::size_t>(k_benign + n_concepts); }
  const EncoderParams& active_encoder() const { return tuned_encoder ? *tuned_encoder : encoder; }
  int concept_class(std::size_t trigger_index) const { return k_benign + static_cast<int>(trigger_index) - 1; }
};

// Zero head.
SurrogateVictim make_victim(const EncoderParams& encoder, int k_benign, int n_concepts);

struct TrainingMix {
  std::vector<Tensor> images;
  std::vector<int> targets;
  std::vector<bool> poisoned;
  std::vector<std::uint64_t> provenance;

  std::size_t size() const { return images.size(); }
  TrainingMix subset(const std::vector<std::size_t>& keep) const;
};

// Clean images target their content class; poisoned images their concept
// class.
TrainingMix build_mix(const SurrogateVictim& victim, const CleanDataset& clean, const PoisonedDataset& poison);

struct ImplantOptions {
  std::size_t epochs = 30;
  double lr = 0.5;
  std::size_t batch = 64;
  std::uint64_t seed = 5;
  // Also fine-tunes a copy of the encoder.
  bool tune_encoder = false;
  double encoder_lr_factor = 0.05;

  bool operator==(const ImplantOptions&) const = default;
};

struct ImplantResult {
  SurrogateVictim victim;
  // Mean cross-entropy over the full mix after each epoch.
  std::vector<double> epoch_loss;
};

/// Mini-batch gradient descent on mean cross-entropy over the mix, with a
/// seeded shuffle per epoch.
ImplantResult train_on_mix(const SurrogateVictim& victim, const TrainingMix& mix, const ImplantOptions& options);

ImplantResult implant(const SurrogateVictim& victim, const CleanDataset& clean, const PoisonedDataset& poison,
                      const ImplantOptions& options);

/// Continues training on the first `amount` images of `extra` with their
/// benign labels. `extra` must share no source image with the victim's
/// training data.
ImplantResult benign_finetune(const SurrogateVictim& victim, const CleanDataset& extra, std::size_t amount,
                              const ImplantOptions& options);

struct Inference {
  int label = 0;
  std::vector<float> logits;
};

// Argmax of head * encode(image) + bias, ties to the lowest index.
Inference infer(const SurrogateVictim& victim, const Tensor& image);
Inference infer_embedding(const SurrogateVictim& victim, std::span<const float> embedding);
std::vector<int> predict(const SurrogateVictim& victim, const std::vector<Tensor>& images);

// victim.mtt1 holds the head as (K+N) x (d+1) with the bias in the last
// column; a .meta sidecar records K, N and the binding.
void save_victim(const SurrogateVictim& victim, const std::filesystem::path& path, Metadata meta = {});
SurrogateVictim load_victim(const std::filesystem::path& path, const EncoderParams& encoder);
std::uint64_t victim_hash(const SurrogateVictim& victim);

}  // namespace mtb
