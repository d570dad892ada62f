#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mtb {

template <typename T>
struct Similarity {
  T value{};
  // Set when either input has zero norm; value is then 0 and gradients vanish.
  bool degenerate = false;
};

template <typename T>
Similarity<T> cosine_similarity(std::span<const T> a, std::span<const T> b);

// Adds upstream * d cos(a,b)/da to grad_a and upstream * d cos(a,b)/db to
// grad_b. Either output span may be empty to skip it.
template <typename T>
void cosine_similarity_grad(std::span<const T> a, std::span<const T> b, double upstream, std::span<T> grad_a,
                            std::span<T> grad_b);

template <typename T>
struct NegLogSoftmax {
  T loss{};
  std::vector<T> grad;  // softmax(scores) - onehot(target)
};

// -log softmax(scores)[target], max-subtracted. The normalizer is summed in a
// permutation-invariant order, so permuting the non-target scores leaves the
// result bit-identical.
template <typename T>
NegLogSoftmax<T> softmax_neglog(std::span<const T> scores, std::size_t target);

// Sums the terms after sorting them; the result does not depend on the input
// order. Reorders `terms`.
double order_invariant_sum(std::span<double> terms);

// Column-wise order_invariant_sum of a rows x cols row-major buffer.
void order_invariant_column_sum(std::span<double> buffer, std::size_t rows, std::size_t cols,
                                std::span<double> out);

}  // namespace mtb
