#include "mtb/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mtb/errors.hpp"

namespace mtb {

template <typename T>
Similarity<T> cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError(fmt::format("cosine_similarity: lengths {} and {}", a.size(), b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return {T{0}, true};
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return {static_cast<T>(std::clamp(c, -1.0, 1.0)), false};
}

template <typename T>
void cosine_similarity_grad(std::span<const T> a, std::span<const T> b, double upstream, std::span<T> grad_a,
                            std::span<T> grad_b) {
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na2 += static_cast<double>(a[i]) * a[i];
    nb2 += static_cast<double>(b[i]) * b[i];
  }
  if (na2 == 0.0 || nb2 == 0.0) return;
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double inv = 1.0 / (na * nb);
  const double c = dot * inv;
  if (!grad_a.empty()) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      grad_a[i] += static_cast<T>(upstream * (b[i] * inv - c * a[i] / na2));
    }
  }
  if (!grad_b.empty()) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      grad_b[i] += static_cast<T>(upstream * (a[i] * inv - c * b[i] / nb2));
    }
  }
}

template <typename T>
NegLogSoftmax<T> softmax_neglog(std::span<const T> scores, std::size_t target) {
  if (scores.empty() || target >= scores.size()) {
    throw ConfigError(fmt::format("softmax_neglog: target {} out of range for {} scores", target, scores.size()));
  }
  double mx = scores[0];
  for (T s : scores) mx = std::max(mx, static_cast<double>(s));
  std::vector<double> ex(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) ex[k] = std::exp(static_cast<double>(scores[k]) - mx);
  // The largest term is exactly 1; summing the rest separately keeps log1p
  // accurate when the target dominates.
  std::vector<double> terms = ex;
  std::sort(terms.begin(), terms.end());
  terms.pop_back();
  const double rest = order_invariant_sum(terms);
  const double z = 1.0 + rest;
  NegLogSoftmax<T> out;
  out.loss = static_cast<T>(std::log1p(rest) - (static_cast<double>(scores[target]) - mx));
  out.grad.resize(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    out.grad[k] = static_cast<T>(ex[k] / z - (k == target ? 1.0 : 0.0));
  }
  return out;
}

double order_invariant_sum(std::span<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

void order_invariant_column_sum(std::span<double> buffer, std::size_t rows, std::size_t cols,
                                std::span<double> out) {
  std::vector<double> column(rows);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t r = 0; r < rows; ++r) column[r] = buffer[r * cols + j];
    out[j] = order_invariant_sum(column);
  }
}

template Similarity<float> cosine_similarity(std::span<const float>, std::span<const float>);
template Similarity<double> cosine_similarity(std::span<const double>, std::span<const double>);
template void cosine_similarity_grad(std::span<const float>, std::span<const float>, double, std::span<float>,
                                     std::span<float>);
template void cosine_similarity_grad(std::span<const double>, std::span<const double>, double, std::span<double>,
                                     std::span<double>);
template NegLogSoftmax<float> softmax_neglog(std::span<const float>, std::size_t);
template NegLogSoftmax<double> softmax_neglog(std::span<const double>, std::size_t);

}  // namespace mtb
