#include "mtb/trigger/objective.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/parallel.hpp"

namespace mtb {

template <typename T>
ObjectiveResult<T> trigger_objective(const EncoderParams& encoder, const std::vector<BasicTensor<T>>& batch,
                                     const std::vector<BasicTensor<T>>& deltas, const BasicTensor<T>& protos,
                                     const ObjectiveConfig& config) {
  if (batch.empty()) throw ConfigError("trigger objective needs a non-empty batch");
  if (deltas.empty()) throw ConfigError("trigger objective needs at least one trigger");
  const std::size_t n = deltas.size(), b_count = batch.size(), d = encoder.config.embed_dim;
  const Shape& shape = batch.front().shape();
  for (const auto& t : deltas) {
    if (t.shape() != shape) throw ShapeError("trigger and image shapes differ");
  }

  // Slot s < n*b_count is trigger s / b_count on image s % b_count; the last
  // b_count slots are the clean images.
  const std::size_t slots = (n + 1) * b_count;
  std::vector<EncoderTape<T>> tapes(slots);
  std::vector<std::vector<unsigned char>> pass(n * b_count);
  parallel_for(slots, [&](std::size_t s) {
    const std::size_t b = s % b_count;
    BasicTensor<T> x = batch[b];
    if (s < n * b_count) {
      const BasicTensor<T>& delta = deltas[s / b_count];
      auto& mask = pass[s];
      mask.resize(x.size());
      for (std::size_t p = 0; p < x.size(); ++p) {
        const T raw = x[p] + delta[p];
        mask[p] = raw >= T{0} && raw <= T{1};
        x[p] = std::clamp(raw, T{0}, T{1});
      }
    }
    if (config.augmentation) x = transform_apply(x, reseeded(*config.augmentation, b));
    tapes[s] = encode_forward(encoder, x);
  });

  BasicTensor<T> embeds({n, b_count, d});
  BasicTensor<T> clean({b_count, d});
  for (std::size_t s = 0; s < n * b_count; ++s) {
    std::copy(tapes[s].embedding.begin(), tapes[s].embedding.end(), embeds.begin() + static_cast<std::ptrdiff_t>(s * d));
  }
  for (std::size_t b = 0; b < b_count; ++b) {
    const auto& e = tapes[n * b_count + b].embedding;
    std::copy(e.begin(), e.end(), clean.begin() + static_cast<std::ptrdiff_t>(b * d));
  }

  ObjectiveResult<T> out;
  BasicTensor<T> grad_embeds({n, b_count, d});
  if (config.kind == ObjectiveKind::separation) {
    auto sep = separation_loss(embeds, clean);
    out.total = sep.loss;
    grad_embeds = std::move(sep.grad_embeds);
  } else {
    out.grad_protos = BasicTensor<T>(protos.shape());
    if (config.use_psp) {
      auto psp = psp_loss(embeds, clean, protos, config.psp);
      out.psp = psp.loss;
      for (std::size_t p = 0; p < grad_embeds.size(); ++p) grad_embeds[p] += psp.grad_embeds[p];
      for (std::size_t p = 0; p < protos.size(); ++p) out.grad_protos[p] += psp.grad_protos[p];
    }
    if (config.use_tpa) {
      auto tpa = tpa_loss(embeds, protos);
      out.tpa = tpa.loss;
      const T lambda = static_cast<T>(config.lambda);
      for (std::size_t p = 0; p < grad_embeds.size(); ++p) grad_embeds[p] += lambda * tpa.grad_embeds[p];
      for (std::size_t p = 0; p < protos.size(); ++p) out.grad_protos[p] += lambda * tpa.grad_protos[p];
    }
    out.total = out.psp + config.lambda * out.tpa;
  }

  std::vector<BasicTensor<T>> image_grads(n * b_count);
  parallel_for(n * b_count, [&](std::size_t s) {
    BasicTensor<T> upstream({d});
    std::copy_n(grad_embeds.begin() + static_cast<std::ptrdiff_t>(s * d), d, upstream.begin());
    BasicTensor<T> g = encode_backward(encoder, tapes[s], upstream);
    if (config.augmentation) g = transform_vjp(shape, reseeded(*config.augmentation, s % b_count), g);
    for (std::size_t p = 0; p < g.size(); ++p) {
      if (!pass[s][p]) g[p] = T{0};
    }
    image_grads[s] = std::move(g);
  });

  out.grad_deltas.assign(n, BasicTensor<T>(shape));
  for (std::size_t i = 0; i < n; ++i) {
    BasicTensor<T>& acc = out.grad_deltas[i];
    for (std::size_t b = 0; b < b_count; ++b) {
      const BasicTensor<T>& g = image_grads[i * b_count + b];
      for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += g[p];
    }
  }
  return out;
}

template ObjectiveResult<float> trigger_objective(const EncoderParams&, const std::vector<Tensor>&,
                                                  const std::vector<Tensor>&, const Tensor&, const ObjectiveConfig&);
template ObjectiveResult<double> trigger_objective(const EncoderParams&, const std::vector<TensorD>&,
                                                   const std::vector<TensorD>&, const TensorD&,
                                                   const ObjectiveConfig&);

}  // namespace mtb
