#include "mtb/trigger/losses.hpp"

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/kernels.hpp"

namespace mtb {

namespace {

struct Dims {
  std::size_t n, b, d;
};

template <typename T>
Dims check_embeds(const BasicTensor<T>& embeds, const BasicTensor<T>& protos, const char* what) {
  if (embeds.rank() != 3) throw ShapeError(fmt::format("{}: embeddings must be N x B x d", what));
  const Dims dims{embeds.extent(0), embeds.extent(1), embeds.extent(2)};
  if (dims.n == 0) throw ConfigError(fmt::format("{}: needs at least one trigger", what));
  if (!protos.empty()) {
    if (protos.rank() != 2 || protos.extent(0) != dims.n + 1 || protos.extent(1) != dims.d) {
      throw ShapeError(fmt::format("{}: prototypes have shape {}, expected [{}, {}]", what,
                                   shape_to_string(protos.shape()), dims.n + 1, dims.d));
    }
  }
  return dims;
}

template <typename T>
std::span<const T> vec(const BasicTensor<T>& t, std::size_t offset, std::size_t d) {
  return std::span<const T>(t.data() + offset, d);
}

// Scores one embedding against all prototypes and accumulates the softmax
// cross-entropy gradient. grad_embed receives the order-independent sum over
// prototypes; proto_rows[k] receives the contribution to prototype k.
template <typename T>
double classify(std::span<const T> e, const BasicTensor<T>& protos, std::size_t target, double temperature,
                std::span<double> grad_embed, std::vector<std::vector<double>>& proto_rows) {
  const std::size_t k_count = protos.extent(0), d = protos.extent(1);
  std::vector<T> scores(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    scores[k] = static_cast<T>(cosine_similarity(e, vec(protos, k * d, d)).value / temperature);
  }
  const auto nl = softmax_neglog<T>(scores, target);
  std::vector<double> per_proto(k_count * d);
  std::vector<T> ga(d), gp(d);
  for (std::size_t k = 0; k < k_count; ++k) {
    std::fill(ga.begin(), ga.end(), T{0});
    std::fill(gp.begin(), gp.end(), T{0});
    cosine_similarity_grad<T>(e, vec(protos, k * d, d), static_cast<double>(nl.grad[k]) / temperature, ga, gp);
    for (std::size_t j = 0; j < d; ++j) {
      per_proto[k * d + j] = ga[j];
      proto_rows[k][j] = gp[j];
    }
  }
  order_invariant_column_sum(per_proto, k_count, d, grad_embed);
  return static_cast<double>(nl.loss);
}

}  // namespace

template <typename T>
LossGrad<T> psp_loss(const BasicTensor<T>& embeds, const BasicTensor<T>& clean_embeds, const BasicTensor<T>& protos,
                     const PspOptions& options) {
  if (protos.empty()) throw ShapeError("psp_loss: prototypes are required");
  const Dims dims = check_embeds(embeds, protos, "psp_loss");
  const auto [n, b_count, d] = dims;
  if (options.clean_anchor_term &&
      (clean_embeds.rank() != 2 || clean_embeds.extent(0) != b_count || clean_embeds.extent(1) != d)) {
    throw ShapeError(fmt::format("psp_loss: clean embeddings have shape {}, expected [{}, {}]",
                                 shape_to_string(clean_embeds.shape()), b_count, d));
  }
  if (!(options.temperature > 0.0)) throw ConfigError("psp_loss: temperature must be positive");

  LossGrad<T> out;
  out.grad_embeds = BasicTensor<T>(embeds.shape());
  if (options.clean_anchor_term) out.grad_clean = BasicTensor<T>(clean_embeds.shape());
  std::vector<double> proto_acc((n + 1) * d, 0.0);
  const double inv_b = 1.0 / static_cast<double>(b_count);

  std::vector<double> grad_embed(d), trigger_losses(n), column(n * d), summed(d);
  // contributions[k][i] is trigger i's gradient on prototype k for this sample.
  std::vector<std::vector<std::vector<double>>> contributions(n + 1, std::vector<std::vector<double>>(n));
  std::vector<std::vector<double>> rows(n + 1, std::vector<double>(d));
  double total = 0.0;
  for (std::size_t b = 0; b < b_count; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * b_count + b) * d;
      trigger_losses[i] = classify(vec(embeds, off, d), protos, i + 1, options.temperature, grad_embed, rows);
      for (std::size_t j = 0; j < d; ++j) out.grad_embeds[off + j] = static_cast<T>(grad_embed[j] * inv_b);
      for (std::size_t k = 0; k <= n; ++k) contributions[k][i] = rows[k];
    }
    for (std::size_t k = 0; k <= n; ++k) {
      for (std::size_t i = 0; i < n; ++i) std::copy(contributions[k][i].begin(), contributions[k][i].end(),
                                                    column.begin() + static_cast<std::ptrdiff_t>(i * d));
      order_invariant_column_sum(column, n, d, summed);
      for (std::size_t j = 0; j < d; ++j) proto_acc[k * d + j] += summed[j];
    }
    double sample_loss = order_invariant_sum(trigger_losses);
    if (options.clean_anchor_term) {
      sample_loss += classify(vec(clean_embeds, b * d, d), protos, 0, options.temperature, grad_embed, rows);
      for (std::size_t j = 0; j < d; ++j) out.grad_clean[b * d + j] = static_cast<T>(grad_embed[j] * inv_b);
      for (std::size_t k = 0; k <= n; ++k) {
        for (std::size_t j = 0; j < d; ++j) proto_acc[k * d + j] += rows[k][j];
      }
    }
    total += sample_loss;
  }
  out.loss = total * inv_b;
  out.grad_protos = BasicTensor<T>(protos.shape());
  for (std::size_t p = 0; p < proto_acc.size(); ++p) out.grad_protos[p] = static_cast<T>(proto_acc[p] * inv_b);
  return out;
}

template <typename T>
LossGrad<T> tpa_loss(const BasicTensor<T>& embeds, const BasicTensor<T>& protos) {
  if (protos.empty()) throw ShapeError("tpa_loss: prototypes are required");
  const auto [n, b_count, d] = check_embeds(embeds, protos, "tpa_loss");
  const double inv_b = 1.0 / static_cast<double>(b_count);
  LossGrad<T> out;
  out.grad_embeds = BasicTensor<T>(embeds.shape());
  out.grad_protos = BasicTensor<T>(protos.shape());
  std::vector<double> per_trigger(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p_off = (i + 1) * d;
    std::vector<double> proto_grad(d, 0.0);
    for (std::size_t b = 0; b < b_count; ++b) {
      const std::size_t off = (i * b_count + b) * d;
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(embeds[off + j]) - protos[p_off + j];
        sq += diff * diff;
        out.grad_embeds[off + j] = static_cast<T>(2.0 * diff * inv_b);
        proto_grad[j] -= 2.0 * diff;
      }
      per_trigger[i] += sq;
    }
    for (std::size_t j = 0; j < d; ++j) out.grad_protos[p_off + j] = static_cast<T>(proto_grad[j] * inv_b);
  }
  out.loss = order_invariant_sum(per_trigger) * inv_b;
  return out;
}

template <typename T>
LossGrad<T> separation_loss(const BasicTensor<T>& embeds, const BasicTensor<T>& clean_embeds) {
  const auto [n, b_count, d] = check_embeds(embeds, BasicTensor<T>{}, "separation_loss");
  if (clean_embeds.rank() != 2 || clean_embeds.extent(0) != b_count || clean_embeds.extent(1) != d) {
    throw ShapeError("separation_loss: clean embeddings must be B x d");
  }
  const double inv_b = 1.0 / static_cast<double>(b_count);
  LossGrad<T> out;
  out.grad_embeds = BasicTensor<T>(embeds.shape());
  out.grad_clean = BasicTensor<T>(clean_embeds.shape());
  std::vector<double> per_trigger(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t b = 0; b < b_count; ++b) {
      const std::size_t off = (i * b_count + b) * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(embeds[off + j]) - clean_embeds[b * d + j];
        per_trigger[i] -= diff * diff;
        out.grad_embeds[off + j] = static_cast<T>(-2.0 * diff * inv_b);
        out.grad_clean[b * d + j] += static_cast<T>(2.0 * diff * inv_b);
      }
    }
  }
  out.loss = order_invariant_sum(per_trigger) * inv_b;
  return out;
}

template LossGrad<float> psp_loss(const Tensor&, const Tensor&, const Tensor&, const PspOptions&);
template LossGrad<double> psp_loss(const TensorD&, const TensorD&, const TensorD&, const PspOptions&);
template LossGrad<float> tpa_loss(const Tensor&, const Tensor&);
template LossGrad<double> tpa_loss(const TensorD&, const TensorD&);
template LossGrad<float> separation_loss(const Tensor&, const Tensor&);
template LossGrad<double> separation_loss(const TensorD&, const TensorD&);

}  // namespace mtb
