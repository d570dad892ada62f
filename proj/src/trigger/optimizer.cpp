#include "mtb/trigger/optimizer.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/rng.hpp"
#include "mtb/trigger/objective.hpp"

namespace mtb {

void OptimConfig::validate() const {
  if (n_triggers < 1) throw ConfigError("n_triggers must be at least 1");
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(max_lr > 0.0)) throw ConfigError(fmt::format("max_lr must be positive, got {}", max_lr));
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) {
    throw ConfigError(fmt::format("warmup_frac must be in [0, 1), got {}", warmup_frac));
  }
  if (!(lambda >= 0.0)) throw ConfigError(fmt::format("lambda must be non-negative, got {}", lambda));
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError(fmt::format("epsilon must be in (0, 1), got {}", epsilon));
  if (!(proto_lr_factor >= 0.0)) throw ConfigError("proto_lr_factor must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!trigger_seeds.empty() && trigger_seeds.size() != n_triggers) {
    throw ConfigError(fmt::format("{} trigger seeds given for {} triggers", trigger_seeds.size(), n_triggers));
  }
  if (!proto_seeds.empty() && proto_seeds.size() != n_triggers) {
    throw ConfigError(fmt::format("{} prototype seeds given for {} triggers", proto_seeds.size(), n_triggers));
  }
  for (const auto& spec : augmentations) spec.validate();
}

std::uint64_t OptimConfig::trigger_seed_for(std::size_t index) const {
  return trigger_seeds.empty() ? mix_seed(trigger_seed, index) : trigger_seeds.at(index - 1);
}

std::uint64_t OptimConfig::proto_seed_for(std::size_t index) const {
  return proto_seeds.empty() ? mix_seed(proto_seed, index) : proto_seeds.at(index - 1);
}

double lr_at(std::size_t step, std::size_t total, double max_lr, double warmup_frac) {
  if (step >= total) throw ConfigError(fmt::format("lr_at: step {} outside 0..{}", step, total == 0 ? 0 : total - 1));
  const auto warm = static_cast<std::size_t>(std::ceil(warmup_frac * static_cast<double>(total)));
  if (step < warm) return max_lr * static_cast<double>(step) / static_cast<double>(warm);
  const double t = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return max_lr * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

namespace {

std::vector<Tensor> draw_batch(const CleanDataset& data, std::size_t size, Rng& rng) {
  std::vector<Tensor> out;
  out.reserve(size);
  for (std::size_t j = 0; j < size; ++j) out.push_back(data.images[rng.below(data.size())]);
  return out;
}

TriggerBank init_triggers(const OptimConfig& config, const Shape& shape) {
  TriggerBank bank;
  bank.epsilon = config.epsilon;
  for (std::size_t i = 1; i <= config.n_triggers; ++i) {
    Rng rng(config.trigger_seed_for(i));
    Tensor delta(shape);
    for (float& v : delta) v = static_cast<float>(rng.uniform(-config.epsilon, config.epsilon));
    project_linf_inplace(delta, config.epsilon);
    bank.deltas.push_back(std::move(delta));
  }
  return bank;
}

PrototypeBank init_prototypes(const OptimConfig& config, const EncoderParams& encoder,
                              const std::vector<Tensor>& first_batch) {
  const std::size_t d = encoder.config.embed_dim;
  Tensor protos({config.n_triggers + 1, d});
  std::vector<double> mean(d, 0.0);
  for (const Tensor& image : first_batch) {
    const Tensor e = encode(encoder, image);
    for (std::size_t j = 0; j < d; ++j) mean[j] += e[j];
  }
  for (std::size_t j = 0; j < d; ++j) protos[j] = static_cast<float>(mean[j] / static_cast<double>(first_batch.size()));
  for (std::size_t i = 1; i <= config.n_triggers; ++i) {
    Rng rng(config.proto_seed_for(i));
    std::vector<double> v(d);
    double sq = 0.0;
    for (double& x : v) {
      x = rng.normal();
      sq += x * x;
    }
    const double norm = std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) protos[i * d + j] = static_cast<float>(v[j] / norm);
  }
  return PrototypeBank{std::move(protos)};
}

OptimResult run_pgd(const OptimConfig& config, const CleanDataset& opt_set, const EncoderParams& encoder,
                    const StepObserver& observer, ObjectiveKind kind) {
  config.validate();
  require_tag(opt_set, DatasetTag::opt, "trigger optimization");
  if (opt_set.size() == 0) throw DataError("trigger optimization set is empty");
  const Shape& shape = opt_set.image_shape();
  if (shape != encoder.config.image_shape()) {
    throw ShapeError(fmt::format("optimization images have shape {}, encoder expects {}", shape_to_string(shape),
                                 shape_to_string(encoder.config.image_shape())));
  }

  ObjectiveConfig objective;
  objective.kind = kind;
  objective.lambda = config.lambda;
  objective.use_psp = config.use_psp;
  objective.use_tpa = config.use_tpa;
  objective.psp = {config.clean_anchor_term, config.temperature};

  Rng batch_rng(config.batch_seed);
  const std::vector<Tensor> first_batch = draw_batch(opt_set, config.batch_size, batch_rng);

  OptimResult out;
  out.bank = init_triggers(config, shape);
  if (kind == ObjectiveKind::prototype) out.protos = init_prototypes(config, encoder, first_batch);
  out.initial_bank = out.bank;
  out.initial_protos = out.protos;
  out.trace.reserve(config.steps + 1);

  auto evaluate = [&](const std::vector<Tensor>& batch, std::size_t step) {
    if (!config.augmentations.empty()) {
      Rng pick(mix_seed(config.augmentation_seed, step));
      TransformSpec spec = config.augmentations[pick.below(config.augmentations.size())];
      spec.seed = mix_seed(spec.seed, step);
      objective.augmentation = spec;
    }
    auto result = trigger_objective(encoder, batch, out.bank.deltas, out.protos.protos, objective);
    if (!std::isfinite(result.total)) {
      throw NumericError(fmt::format("non-finite loss at step {}: psp={} tpa={} total={}", step, result.psp,
                                     result.tpa, result.total));
    }
    return result;
  };

  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::vector<Tensor> batch = step == 0 ? first_batch : draw_batch(opt_set, config.batch_size, batch_rng);
    const double lr = lr_at(step, config.steps, config.max_lr, config.warmup_frac);
    const auto result = evaluate(batch, step);
    out.trace.push_back({step, lr, result.psp, result.tpa, result.total});

    const auto step_size = static_cast<float>(lr);
    for (std::size_t i = 0; i < out.bank.size(); ++i) {
      Tensor& delta = out.bank.deltas[i];
      const Tensor& g = result.grad_deltas[i];
      for (std::size_t p = 0; p < delta.size(); ++p) {
        const float sign = g[p] > 0.0f ? 1.0f : (g[p] < 0.0f ? -1.0f : 0.0f);
        delta[p] -= step_size * sign;
      }
      project_linf_inplace(delta, config.epsilon);
    }
    if (kind == ObjectiveKind::prototype) {
      const auto proto_step = static_cast<float>(lr * config.proto_lr_factor);
      for (std::size_t p = 0; p < out.protos.protos.size(); ++p) {
        out.protos.protos[p] -= proto_step * result.grad_protos[p];
      }
    }
    if (observer) observer(step + 1, out.bank, out.protos);
    if ((step + 1) % 100 == 0) {
      spdlog::debug("step {}/{}: lr={:.4f} psp={:.5f} tpa={:.5f} total={:.5f}", step + 1, config.steps, lr,
                    result.psp, result.tpa, result.total);
    }
  }
  const auto final_result = evaluate(first_batch, config.steps);
  out.trace.push_back({config.steps, 0.0, final_result.psp, final_result.tpa, final_result.total});
  return out;
}

}  // namespace

InitialState initial_state(const OptimConfig& config, const CleanDataset& opt_set, const EncoderParams& encoder,
                           bool with_prototypes) {
  config.validate();
  if (opt_set.size() == 0) throw DataError("trigger optimization set is empty");
  Rng batch_rng(config.batch_seed);
  const std::vector<Tensor> first_batch = draw_batch(opt_set, config.batch_size, batch_rng);
  InitialState out;
  out.bank = init_triggers(config, opt_set.image_shape());
  if (with_prototypes) out.protos = init_prototypes(config, encoder, first_batch);
  return out;
}

OptimResult optimize_triggers(const OptimConfig& config, const CleanDataset& opt_set, const EncoderParams& encoder,
                              const StepObserver& observer) {
  return run_pgd(config, opt_set, encoder, observer, ObjectiveKind::prototype);
}

OptimResult baseline_separation_only(const OptimConfig& config, const CleanDataset& opt_set,
                                     const EncoderParams& encoder, const StepObserver& observer) {
  return run_pgd(config, opt_set, encoder, observer, ObjectiveKind::separation);
}

std::string trace_csv(const std::vector<TraceRecord>& trace) {
  std::string out = "step,lr,psp,tpa,total\n";
  for (const auto& r : trace) out += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g}\n", r.step, r.lr, r.psp, r.tpa, r.total);
  return out;
}

}  // namespace mtb
