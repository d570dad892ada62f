#include "mtb/poison/dataset.hpp"

#include <set>
#include <unordered_set>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/mtt1.hpp"

namespace mtb {

std::string_view tag_name(DatasetTag tag) {
  switch (tag) {
    case DatasetTag::opt: return "opt";
    case DatasetTag::implant: return "implant";
    case DatasetTag::test: return "test";
  }
  return "?";
}

DatasetTag parse_tag(std::string_view name) {
  if (name == "opt") return DatasetTag::opt;
  if (name == "implant") return DatasetTag::implant;
  if (name == "test") return DatasetTag::test;
  throw DataError(fmt::format("unknown dataset tag '{}'", name));
}

const Shape& CleanDataset::image_shape() const {
  if (images.empty()) throw DataError("dataset is empty");
  return images.front().shape();
}

void CleanDataset::validate() const {
  if (images.empty()) throw DataError(fmt::format("{} dataset '{}' is empty", tag_name(tag), source));
  if (content_labels.size() != images.size() || provenance.size() != images.size()) {
    throw DataError("dataset label/provenance counts do not match image count");
  }
  const Shape& shape = images.front().shape();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != shape) {
      throw DataError(fmt::format("image {} has shape {}, expected {}", i, shape_to_string(images[i].shape()),
                                  shape_to_string(shape)));
    }
    for (float v : images[i]) {
      if (!(v >= 0.0f && v <= 1.0f)) throw DataError(fmt::format("image {} has a pixel outside [0,1]", i));
    }
    if (content_labels[i] < 0 || content_labels[i] >= num_classes) {
      throw DataError(fmt::format("image {} has label {} outside 0..{}", i, content_labels[i], num_classes - 1));
    }
  }
  std::unordered_set<std::uint64_t> seen;
  for (std::uint64_t p : provenance) {
    if (!seen.insert(p).second) throw DataError(fmt::format("duplicate provenance id {}", hex64(p)));
  }
}

void require_tag(const CleanDataset& data, DatasetTag tag, std::string_view context) {
  if (data.tag != tag) {
    throw DataError(fmt::format("{} requires a '{}' dataset, got '{}'", context, tag_name(tag), tag_name(data.tag)));
  }
}

void check_disjoint(const CleanDataset& a, const CleanDataset& b) {
  std::unordered_set<std::uint64_t> ids(a.provenance.begin(), a.provenance.end());
  for (std::size_t i = 0; i < b.provenance.size(); ++i) {
    if (ids.contains(b.provenance[i])) {
      throw DataError(fmt::format("{} set and {} set share image {} (provenance {})", tag_name(a.tag),
                                  tag_name(b.tag), i, hex64(b.provenance[i])));
    }
  }
}

void validate_binding(const std::vector<ConceptId>& concepts, std::size_t num_triggers) {
  if (concepts.size() != num_triggers) {
    throw ConfigError(fmt::format("binding has {} concepts for {} triggers", concepts.size(), num_triggers));
  }
  std::set<std::string> labels;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    if (concepts[i].index != static_cast<int>(i) + 1) {
      throw ConfigError(fmt::format("concept '{}' at position {} has index {}, expected {}", concepts[i].label, i,
                                    concepts[i].index, i + 1));
    }
    if (concepts[i].label.empty()) throw ConfigError(fmt::format("concept {} has an empty label", i + 1));
    if (!labels.insert(concepts[i].label).second) {
      throw ConfigError(fmt::format("duplicate concept '{}' in binding", concepts[i].label));
    }
  }
}

std::vector<ConceptId> make_binding(const std::vector<std::string>& labels) {
  std::vector<ConceptId> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out.push_back({static_cast<int>(i) + 1, labels[i]});
  return out;
}

std::uint64_t binding_hash(const std::vector<ConceptId>& concepts) {
  std::string text;
  for (const auto& c : concepts) text += fmt::format("{}:{}\n", c.index, c.label);
  return fnv1a64(text);
}

}  // namespace mtb
