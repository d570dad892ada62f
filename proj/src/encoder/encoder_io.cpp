#include <fmt/format.h>

#include "mtb/encoder/encoder.hpp"
#include "mtb/errors.hpp"
#include "mtb/numerics/mtt1.hpp"

namespace mtb {

void save_encoder(const EncoderParams& params, const std::filesystem::path& dir, const std::string& stem) {
  const EncoderConfig& c = params.config;
  write_mtt1(dir / (stem + "_patch.mtt1"), params.patch_weights);
  write_mtt1(dir / (stem + "_mix.mtt1"), params.mix_weights);
  write_metadata(dir / (stem + ".meta"), {{"seed", std::to_string(c.seed)},
                                          {"channels", std::to_string(c.channels)},
                                          {"image_side", std::to_string(c.image_side)},
                                          {"patch_size", std::to_string(c.patch_size)},
                                          {"hidden_dim", std::to_string(c.hidden_dim)},
                                          {"embed_dim", std::to_string(c.embed_dim)}});
}

EncoderParams load_encoder(const std::filesystem::path& dir, const std::string& stem) {
  const auto meta_path = dir / (stem + ".meta");
  const Metadata meta = read_metadata(meta_path);
  auto num = [&](const char* key) { return std::stoull(metadata_value(meta, key, meta_path)); };
  EncoderParams p;
  p.config = EncoderConfig{num("seed"),       num("channels"),   num("image_side"),
                           num("patch_size"), num("hidden_dim"), num("embed_dim")};
  p.config.validate();
  p.patch_weights = read_mtt1(dir / (stem + "_patch.mtt1"));
  p.mix_weights = read_mtt1(dir / (stem + "_mix.mtt1"));
  const Shape want_patch{p.config.hidden_dim, p.config.patch_len()};
  const Shape want_mix{p.config.embed_dim, p.config.hidden_dim};
  if (p.patch_weights.shape() != want_patch || p.mix_weights.shape() != want_mix) {
    throw IoError(fmt::format("{}: weight shapes do not match metadata", meta_path.string()));
  }
  return p;
}

}  // namespace mtb
