#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtb/numerics/tensor.hpp"

namespace mtb {

struct EncoderConfig {
  std::uint64_t seed = 7;
  std::size_t channels = 3;
  std::size_t image_side = 16;
  std::size_t patch_size = 4;
  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 32;

  void validate() const;
  std::size_t patches_per_side() const { return image_side / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_len() const { return channels * patch_size * patch_size; }
  Shape image_shape() const { return {channels, image_side, image_side}; }

  bool operator==(const EncoderConfig&) const = default;
};

/// Frozen visual encoder: patch embedding, tanh, mean pool over patches,
/// linear mix, L2 normalization. Weights are drawn once from the seed and
/// never change.
struct EncoderParams {
  EncoderConfig config;
  Tensor patch_weights;  // hidden_dim x patch_len
  Tensor mix_weights;    // embed_dim x hidden_dim
};

EncoderParams init_encoder(const EncoderConfig& config);
EncoderParams init_encoder(std::uint64_t seed, std::size_t channels, std::size_t image_side, std::size_t patch_size,
                           std::size_t hidden_dim, std::size_t embed_dim);

// Forward activations kept for the backward pass.
template <typename T>
struct EncoderTape {
  BasicTensor<T> image;
  std::vector<T> hidden;  // num_patches x hidden_dim, post-tanh
  std::vector<T> pooled;  // hidden_dim
  std::vector<T> mixed;   // embed_dim, before normalization
  T norm{};
  BasicTensor<T> embedding;
  bool degenerate = false;  // mixed vector was exactly zero
};

template <typename T>
EncoderTape<T> encode_forward(const EncoderParams& params, const BasicTensor<T>& image);

// Gradient of <upstream, embedding> with respect to the image.
template <typename T>
BasicTensor<T> encode_backward(const EncoderParams& params, const EncoderTape<T>& tape,
                               const BasicTensor<T>& upstream);

template <typename T>
struct EncoderWeightGrad {
  BasicTensor<T> patch_weights;
  BasicTensor<T> mix_weights;
};

// Gradient of <upstream, embedding> with respect to the encoder weights.
template <typename T>
EncoderWeightGrad<T> encode_weight_backward(const EncoderParams& params, const EncoderTape<T>& tape,
                                            const BasicTensor<T>& upstream);

template <typename T>
struct Encoding {
  BasicTensor<T> embedding;
  bool degenerate = false;
};

template <typename T>
Encoding<T> encode_ex(const EncoderParams& params, const BasicTensor<T>& image);

// Unit-norm embedding (all zeros in the degenerate case).
template <typename T>
BasicTensor<T> encode(const EncoderParams& params, const BasicTensor<T>& image) {
  return encode_ex(params, image).embedding;
}

template <typename T>
BasicTensor<T> encode_vjp(const EncoderParams& params, const BasicTensor<T>& image, const BasicTensor<T>& upstream);

// Embeds every image; rows of the result are embeddings.
Tensor encode_batch(const EncoderParams& params, const std::vector<Tensor>& images);

// Persistence: <stem>_patch.mtt1, <stem>_mix.mtt1 and <stem>.meta in `dir`.
void save_encoder(const EncoderParams& params, const std::filesystem::path& dir, const std::string& stem = "encoder");
EncoderParams load_encoder(const std::filesystem::path& dir, const std::string& stem = "encoder");

// Largest observed ||encode(v+d)-encode(v)|| / ||d|| over seeded random
// probes; a sanity bound, not a certified constant.
double empirical_lipschitz(const EncoderParams& params, std::uint64_t seed, std::size_t probes, double delta_scale);

}  // namespace mtb
