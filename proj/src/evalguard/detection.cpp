#include "mtb/evalguard/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mtb/errors.hpp"

namespace mtb {

namespace {

std::vector<double> column_mean(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t d = x.extent(1);
  std::vector<double> mean(d, 0.0);
  for (std::size_t r : rows) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += x[r * d + j];
  }
  for (double& m : mean) m /= static_cast<double>(rows.size());
  return mean;
}

}  // namespace

std::vector<double> outlier_scores(const Tensor& embeddings) {
  if (embeddings.rank() != 2) throw ShapeError("outlier_scores expects an n x d matrix");
  const std::size_t n = embeddings.extent(0), d = embeddings.extent(1);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});

  const std::vector<double> mean = column_mean(embeddings, all);
  std::vector<double> plain(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) plain[r] += std::pow(embeddings[r * d + j] - mean[j], 2);
  }
  std::vector<std::size_t> order = all;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return plain[a] < plain[b]; });
  order.resize(std::max<std::size_t>(1, n / 2));

  const std::vector<double> center = column_mean(embeddings, order);
  std::vector<double> var(d, 0.0);
  for (std::size_t r : order) {
    for (std::size_t j = 0; j < d; ++j) var[j] += std::pow(embeddings[r * d + j] - center[j], 2);
  }
  for (double& v : var) v = v / static_cast<double>(order.size()) + 1e-9;

  std::vector<double> scores(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) scores[r] += std::pow(embeddings[r * d + j] - center[j], 2) / var[j];
  }
  return scores;
}

double rank_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("scores and labels differ in count");
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("AUC needs both poisoned and clean samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based) midranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo;
    while (hi + 1 < n && scores[order[hi + 1]] == scores[order[lo]]) ++hi;
    const double midrank = (static_cast<double>(lo) + static_cast<double>(hi)) / 2.0 + 1.0;
    for (std::size_t k = lo; k <= hi; ++k) {
      if (positive[order[k]]) rank_sum += midrank;
    }
    lo = hi + 1;
  }
  const double u = rank_sum - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

DetectionResult detect_scores_from_embeddings(const Tensor& embeddings, const std::vector<bool>& poisoned) {
  if (embeddings.rank() != 2 || embeddings.extent(0) != poisoned.size()) {
    throw ShapeError("embeddings and labels differ in count");
  }
  if (poisoned.size() < 10) {
    throw DataError(fmt::format("detection needs at least 10 samples, got {}", poisoned.size()));
  }
  DetectionResult out;
  out.scores = outlier_scores(embeddings);
  out.auc = rank_auc(out.scores, poisoned);
  return out;
}

DetectionResult detect_scores(const std::vector<Tensor>& images, const std::vector<bool>& poisoned,
                              const EncoderParams& encoder) {
  if (images.size() < 10) throw DataError(fmt::format("detection needs at least 10 samples, got {}", images.size()));
  return detect_scores_from_embeddings(encode_batch(encoder, images), poisoned);
}

}  // namespace mtb
