#include <sstream>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/trigger/bank.hpp"
#include "mtb/victim/victim.hpp"

namespace mtb {

namespace {

Tensor packed_head(const SurrogateVictim& victim) {
  const std::size_t c = victim.num_classes(), d = victim.head_weights.extent(1);
  Tensor out({c, d + 1});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t j = 0; j < d; ++j) out[k * (d + 1) + j] = victim.head_weights[k * d + j];
    out[k * (d + 1) + d] = victim.head_bias[k];
  }
  return out;
}

std::string binding_text(const std::vector<ConceptId>& binding) {
  std::string out;
  for (const auto& c : binding) out += (out.empty() ? "" : ",") + c.label;
  return out;
}

}  // namespace

void save_victim(const SurrogateVictim& victim, const std::filesystem::path& path, Metadata meta) {
  write_mtt1(path, packed_head(victim));
  meta["kind"] = "victim";
  meta["k"] = std::to_string(victim.k_benign);
  meta["n"] = std::to_string(victim.n_concepts);
  meta["encoder_seed"] = std::to_string(victim.encoder.config.seed);
  meta["binding"] = binding_text(victim.binding);
  meta["binding_hash"] = hex64(binding_hash(victim.binding));
  meta["tuned_encoder"] = victim.tuned_encoder ? "1" : "0";
  write_metadata(sidecar_path(path), meta);
  if (victim.tuned_encoder) {
    save_encoder(*victim.tuned_encoder, path.parent_path(), path.stem().string() + "_encoder");
  }
}

SurrogateVictim load_victim(const std::filesystem::path& path, const EncoderParams& encoder) {
  const Tensor packed = read_mtt1(path);
  const auto meta_path = sidecar_path(path);
  const Metadata meta = read_metadata(meta_path);
  const int k = std::stoi(metadata_value(meta, "k", meta_path));
  const int n = std::stoi(metadata_value(meta, "n", meta_path));
  SurrogateVictim v = make_victim(encoder, k, n);
  const std::size_t c = v.num_classes(), d = encoder.config.embed_dim;
  if (packed.rank() != 2 || packed.extent(0) != c || packed.extent(1) != d + 1) {
    throw IoError(fmt::format("{}: head has shape {}, expected [{}, {}]", path.string(),
                              shape_to_string(packed.shape()), c, d + 1));
  }
  for (std::size_t q = 0; q < c; ++q) {
    for (std::size_t j = 0; j < d; ++j) v.head_weights[q * d + j] = packed[q * (d + 1) + j];
    v.head_bias[q] = packed[q * (d + 1) + d];
  }
  std::vector<std::string> labels;
  std::istringstream in(metadata_value(meta, "binding", meta_path));
  for (std::string label; std::getline(in, label, ',');) labels.push_back(label);
  if (!labels.empty()) {
    v.binding = make_binding(labels);
    validate_binding(v.binding, static_cast<std::size_t>(n));
  }
  if (metadata_value(meta, "tuned_encoder", meta_path) == "1") {
    v.tuned_encoder = load_encoder(path.parent_path(), path.stem().string() + "_encoder");
  }
  return v;
}

std::uint64_t victim_hash(const SurrogateVictim& victim) {
  std::string bytes = encode_mtt1(packed_head(victim));
  if (victim.tuned_encoder) {
    bytes += encode_mtt1(victim.tuned_encoder->patch_weights);
    bytes += encode_mtt1(victim.tuned_encoder->mix_weights);
  }
  return fnv1a64(bytes);
}

}  // namespace mtb
