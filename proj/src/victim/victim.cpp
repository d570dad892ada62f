#include "mtb/victim/victim.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/kernels.hpp"
#include "mtb/numerics/parallel.hpp"
#include "mtb/numerics/rng.hpp"

namespace mtb {

SurrogateVictim make_victim(const EncoderParams& encoder, int k_benign, int n_concepts) {
  if (k_benign < 1) throw ConfigError(fmt::format("victim needs at least one benign class, got {}", k_benign));
  if (n_concepts < 1) throw ConfigError(fmt::format("victim needs at least one concept, got {}", n_concepts));
  SurrogateVictim v;
  v.encoder = encoder;
  v.k_benign = k_benign;
  v.n_concepts = n_concepts;
  v.head_weights = Tensor({v.num_classes(), encoder.config.embed_dim});
  v.head_bias = Tensor({v.num_classes()});
  return v;
}

TrainingMix TrainingMix::subset(const std::vector<std::size_t>& keep) const {
  TrainingMix out;
  for (std::size_t i : keep) {
    out.images.push_back(images.at(i));
    out.targets.push_back(targets[i]);
    out.poisoned.push_back(poisoned[i]);
    out.provenance.push_back(provenance[i]);
  }
  return out;
}

TrainingMix build_mix(const SurrogateVictim& victim, const CleanDataset& clean, const PoisonedDataset& poison) {
  require_tag(clean, DatasetTag::implant, "implanting");
  if (clean.num_classes > victim.k_benign) {
    throw ConfigError(fmt::format("clean data has {} classes but the victim has {} benign classes", clean.num_classes,
                                  victim.k_benign));
  }
  TrainingMix mix;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    mix.images.push_back(clean.images[i]);
    mix.targets.push_back(clean.content_labels[i]);
    mix.poisoned.push_back(false);
    mix.provenance.push_back(clean.provenance[i]);
  }
  for (const PoisonedEntry& e : poison.entries) {
    if (e.trigger_index < 1 || e.trigger_index > static_cast<std::size_t>(victim.n_concepts)) {
      throw ConfigError(fmt::format("poisoned entry uses trigger {} but the victim has {} concepts", e.trigger_index,
                                    victim.n_concepts));
    }
    if (e.target.index != static_cast<int>(e.trigger_index)) {
      throw ConfigError(fmt::format("concept '{}' is bound to trigger {}, not {}", e.target.label, e.target.index,
                                    e.trigger_index));
    }
    mix.images.push_back(e.image);
    mix.targets.push_back(victim.concept_class(e.trigger_index));
    mix.poisoned.push_back(true);
    mix.provenance.push_back(e.source_provenance);
  }
  return mix;
}

namespace {

std::vector<double> logits_of(const SurrogateVictim& v, std::span<const float> e) {
  const std::size_t c = v.num_classes(), d = e.size();
  std::vector<double> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    double s = v.head_bias[k];
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(v.head_weights[k * d + j]) * e[j];
    out[k] = s;
  }
  return out;
}

// The head in standardized coordinates x = (e - mean) / scale, where the
// statistics come from the training embeddings. Gradient descent runs on
// (w, b) here; the equivalent raw-coordinate head is exported at the end.
struct StandardizedHead {
  std::size_t c = 0, d = 0;
  std::vector<double> mean, scale, w, b;

  StandardizedHead(const SurrogateVictim& v, const Tensor& embeds) : c(v.num_classes()), d(embeds.extent(1)) {
    const std::size_t n = embeds.extent(0);
    mean.assign(d, 0.0);
    scale.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) mean[j] += embeds[i * d + j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) scale[j] += std::pow(embeds[i * d + j] - mean[j], 2);
    }
    for (double& s : scale) {
      s = std::sqrt(s / static_cast<double>(n));
      if (!(s > 1e-12)) s = 1.0;
    }
    w.resize(c * d);
    b.resize(c);
    for (std::size_t k = 0; k < c; ++k) {
      double shift = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        w[k * d + j] = static_cast<double>(v.head_weights[k * d + j]) * scale[j];
        shift += static_cast<double>(v.head_weights[k * d + j]) * mean[j];
      }
      b[k] = v.head_bias[k] + shift;
    }
  }

  void standardize(std::span<const float> e, std::vector<double>& x) const {
    for (std::size_t j = 0; j < d; ++j) x[j] = (e[j] - mean[j]) / scale[j];
  }

  std::vector<double> logits(const std::vector<double>& x) const {
    std::vector<double> out(c);
    for (std::size_t k = 0; k < c; ++k) {
      double s = b[k];
      for (std::size_t j = 0; j < d; ++j) s += w[k * d + j] * x[j];
      out[k] = s;
    }
    return out;
  }

  double mean_loss(const Tensor& embeds, const std::vector<int>& targets) const {
    std::vector<double> x(d);
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      standardize(embeds.row(i), x);
      total += softmax_neglog<double>(logits(x), static_cast<std::size_t>(targets[i])).loss;
    }
    return total / static_cast<double>(targets.size());
  }

  void export_to(SurrogateVictim& v) const {
    for (std::size_t k = 0; k < c; ++k) {
      double shift = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double raw = w[k * d + j] / scale[j];
        v.head_weights[k * d + j] = static_cast<float>(raw);
        shift += raw * mean[j];
      }
      v.head_bias[k] = static_cast<float>(b[k] - shift);
    }
  }
};

}  // namespace

ImplantResult train_on_mix(const SurrogateVictim& victim, const TrainingMix& mix, const ImplantOptions& options) {
  ImplantResult out{victim, {}};
  if (options.epochs == 0) return out;
  if (mix.size() == 0) throw DataError("training mix is empty");
  if (options.batch < 1) throw ConfigError("implant batch size must be at least 1");
  if (!(options.lr > 0.0)) throw ConfigError("implant learning rate must be positive");
  for (int t : mix.targets) {
    if (t < 0 || t >= static_cast<int>(victim.num_classes())) {
      throw ConfigError(fmt::format("training target {} outside the victim's {} classes", t, victim.num_classes()));
    }
  }
  SurrogateVictim& v = out.victim;
  if (options.tune_encoder && !v.tuned_encoder) v.tuned_encoder = v.encoder;
  const std::size_t n = mix.size(), c = v.num_classes(), d = v.encoder.config.embed_dim;

  Tensor embeds = encode_batch(v.active_encoder(), mix.images);
  StandardizedHead head(v, embeds);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(options.seed);
  std::vector<double> gw(c * d), gb(c), x(d);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += options.batch) {
      const std::size_t stop = std::min(n, start + options.batch);
      const double inv = 1.0 / static_cast<double>(stop - start);
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);

      std::vector<EncoderTape<float>> tapes;
      if (options.tune_encoder) {
        tapes.resize(stop - start);
        parallel_for(stop - start, [&](std::size_t j) {
          tapes[j] = encode_forward(*v.tuned_encoder, mix.images[order[start + j]]);
        });
      }
      EncoderWeightGrad<float> enc_grad;
      for (std::size_t j = start; j < stop; ++j) {
        const std::size_t i = order[j];
        const std::span<const float> e =
            options.tune_encoder ? std::span<const float>(tapes[j - start].embedding.values()) : embeds.row(i);
        head.standardize(e, x);
        const auto nl = softmax_neglog<double>(head.logits(x), static_cast<std::size_t>(mix.targets[i]));
        for (std::size_t k = 0; k < c; ++k) {
          gb[k] += nl.grad[k];
          for (std::size_t q = 0; q < d; ++q) gw[k * d + q] += nl.grad[k] * x[q];
        }
        if (options.tune_encoder) {
          Tensor upstream({d});
          for (std::size_t q = 0; q < d; ++q) {
            double s = 0.0;
            for (std::size_t k = 0; k < c; ++k) s += nl.grad[k] * head.w[k * d + q];
            upstream[q] = static_cast<float>(s * inv / head.scale[q]);
          }
          auto g = encode_weight_backward(*v.tuned_encoder, tapes[j - start], upstream);
          if (enc_grad.patch_weights.empty()) {
            enc_grad = std::move(g);
          } else {
            for (std::size_t p = 0; p < g.patch_weights.size(); ++p) enc_grad.patch_weights[p] += g.patch_weights[p];
            for (std::size_t p = 0; p < g.mix_weights.size(); ++p) enc_grad.mix_weights[p] += g.mix_weights[p];
          }
        }
      }
      for (std::size_t p = 0; p < gw.size(); ++p) head.w[p] -= options.lr * inv * gw[p];
      for (std::size_t k = 0; k < c; ++k) head.b[k] -= options.lr * inv * gb[k];
      if (options.tune_encoder) {
        const auto step = static_cast<float>(options.lr * options.encoder_lr_factor);
        for (std::size_t p = 0; p < enc_grad.patch_weights.size(); ++p) {
          v.tuned_encoder->patch_weights[p] -= step * enc_grad.patch_weights[p];
        }
        for (std::size_t p = 0; p < enc_grad.mix_weights.size(); ++p) {
          v.tuned_encoder->mix_weights[p] -= step * enc_grad.mix_weights[p];
        }
      }
    }
    if (options.tune_encoder) embeds = encode_batch(*v.tuned_encoder, mix.images);
    const double loss = head.mean_loss(embeds, mix.targets);
    if (!std::isfinite(loss)) throw NumericError(fmt::format("non-finite training loss after epoch {}", epoch + 1));
    out.epoch_loss.push_back(loss);
  }
  head.export_to(v);
  std::unordered_set<std::uint64_t> known(v.training_provenance.begin(), v.training_provenance.end());
  for (std::uint64_t p : mix.provenance) {
    if (known.insert(p).second) v.training_provenance.push_back(p);
  }
  return out;
}

ImplantResult implant(const SurrogateVictim& victim, const CleanDataset& clean, const PoisonedDataset& poison,
                      const ImplantOptions& options) {
  for (const PoisonedEntry& e : poison.entries) {
    if (e.trigger_index < 1 || e.trigger_index > static_cast<std::size_t>(victim.n_concepts)) {
      throw ConfigError(fmt::format("poisoned entry uses trigger {} but the victim has {} concepts", e.trigger_index,
                                    victim.n_concepts));
    }
  }
  if (!poison.entries.empty() && !victim.binding.empty()) {
    for (const PoisonedEntry& e : poison.entries) {
      if (e.target != victim.binding.at(e.trigger_index - 1)) {
        throw ConfigError(fmt::format("poison binds trigger {} to '{}' but the victim expects '{}'", e.trigger_index,
                                      e.target.label, victim.binding[e.trigger_index - 1].label));
      }
    }
  }
  SurrogateVictim start = victim;
  if (start.binding.empty() && !poison.entries.empty()) {
    start.binding.resize(static_cast<std::size_t>(start.n_concepts));
    for (const PoisonedEntry& e : poison.entries) start.binding.at(e.trigger_index - 1) = e.target;
  }
  auto result = train_on_mix(start, build_mix(start, clean, poison), options);
  if (options.epochs == 0) result.victim = victim;
  return result;
}

ImplantResult benign_finetune(const SurrogateVictim& victim, const CleanDataset& extra, std::size_t amount,
                              const ImplantOptions& options) {
  if (amount > extra.size()) {
    throw ConfigError(fmt::format("benign fine-tuning amount {} exceeds the {} available clean images", amount,
                                  extra.size()));
  }
  if (amount == 0) return {victim, {}};
  const std::unordered_set<std::uint64_t> seen(victim.training_provenance.begin(), victim.training_provenance.end());
  for (std::size_t i = 0; i < extra.size(); ++i) {
    if (seen.contains(extra.provenance[i])) {
      throw DataError(fmt::format("benign fine-tuning image {} (provenance {}) was part of the implant data", i,
                                  hex64(extra.provenance[i])));
    }
  }
  TrainingMix mix;
  for (std::size_t i = 0; i < amount; ++i) {
    mix.images.push_back(extra.images[i]);
    mix.targets.push_back(extra.content_labels[i]);
    mix.poisoned.push_back(false);
    mix.provenance.push_back(extra.provenance[i]);
  }
  return train_on_mix(victim, mix, options);
}

Inference infer_embedding(const SurrogateVictim& victim, std::span<const float> embedding) {
  const auto logits = logits_of(victim, embedding);
  Inference out;
  out.logits.assign(logits.begin(), logits.end());
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (out.logits[k] > out.logits[static_cast<std::size_t>(out.label)]) out.label = static_cast<int>(k);
  }
  return out;
}

Inference infer(const SurrogateVictim& victim, const Tensor& image) {
  const EncoderParams& enc = victim.active_encoder();
  if (image.shape() != enc.config.image_shape()) {
    throw ShapeError(fmt::format("image shape {} does not match the victim's {}", shape_to_string(image.shape()),
                                 shape_to_string(enc.config.image_shape())));
  }
  const Tensor e = encode(enc, image);
  return infer_embedding(victim, e.values());
}

std::vector<int> predict(const SurrogateVictim& victim, const std::vector<Tensor>& images) {
  std::vector<int> out(images.size());
  parallel_for(images.size(), [&](std::size_t i) { out[i] = infer(victim, images[i]).label; });
  return out;
}

}  // namespace mtb
