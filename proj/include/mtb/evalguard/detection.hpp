#pragma once

#include <vector>

#include "mtb/encoder/encoder.hpp"

namespace mtb {

/// Outlier scores for the rows of an n x d embedding matrix: squared distance
/// to a clean-estimate center, whitened per dimension. The center and
/// variances come from the half of the rows closest to the overall mean.
std::vector<double> outlier_scores(const Tensor& embeddings);

// Rank-sum AUC with midranks for ties; positives are the poisoned samples.
double rank_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

struct DetectionResult {
  std::vector<double> scores;
  double auc = 0.5;
};

// Needs at least 10 samples with both labels present.
DetectionResult detect_scores(const std::vector<Tensor>& images, const std::vector<bool>& poisoned,
                              const EncoderParams& encoder);
DetectionResult detect_scores_from_embeddings(const Tensor& embeddings, const std::vector<bool>& poisoned);

}  // namespace mtb
