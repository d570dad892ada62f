#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mtb/numerics/tensor.hpp"

namespace mtb {

// opt: trigger optimization only. implant: victim fine-tuning (and any
// benign-data extras). test: evaluation.
enum class DatasetTag { opt, implant, test };

std::string_view tag_name(DatasetTag tag);
DatasetTag parse_tag(std::string_view name);

struct CleanDataset {
  std::vector<Tensor> images;         // C x H x W, pixels in [0, 1]
  std::vector<int> content_labels;    // 0..num_classes-1
  std::vector<std::uint64_t> provenance;  // unique per source image
  DatasetTag tag = DatasetTag::opt;
  std::string source;
  int num_classes = 0;

  std::size_t size() const { return images.size(); }
  const Shape& image_shape() const;
  // Throws DataError on shape, range, label or bookkeeping violations.
  void validate() const;
};

void require_tag(const CleanDataset& data, DatasetTag tag, std::string_view context);

// Throws DataError naming the first shared provenance id.
void check_disjoint(const CleanDataset& a, const CleanDataset& b);

/// Attack target concept. `index` is the 1-based trigger index the concept is
/// bound to; the binding list is ordered by trigger index.
struct ConceptId {
  int index = 1;
  std::string label;

  bool operator==(const ConceptId&) const = default;
};

// Checks that concepts[i].index == i + 1 and labels are non-empty and unique.
void validate_binding(const std::vector<ConceptId>& concepts, std::size_t num_triggers);
std::vector<ConceptId> make_binding(const std::vector<std::string>& labels);
std::uint64_t binding_hash(const std::vector<ConceptId>& concepts);

}  // namespace mtb
