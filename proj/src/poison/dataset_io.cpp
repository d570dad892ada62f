#include <charconv>
#include <sstream>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/mtt1.hpp"
#include "mtb/poison/poison_set.hpp"

namespace mtb {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename Int>
Int parse_int(const std::string& text, const std::filesystem::path& origin, std::size_t line, int base = 10) {
  Int value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, base);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw IoError(fmt::format("{}:{}: invalid integer '{}'", origin.string(), line, text));
  }
  return value;
}

}  // namespace

void save_dataset(const CleanDataset& data, const std::filesystem::path& images_path,
                  const std::filesystem::path& manifest_path) {
  data.validate();
  write_mtt1(images_path, stack<float>(data.images));
  std::string csv = "index,content_label,tag,provenance_id\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    csv += fmt::format("{},{},{},{}\n", i, data.content_labels[i], tag_name(data.tag), hex64(data.provenance[i]));
  }
  write_file(manifest_path, csv);
}

CleanDataset load_dataset(const std::filesystem::path& images_path, const std::filesystem::path& manifest_path) {
  CleanDataset out;
  out.images = unstack(read_mtt1(images_path));
  out.source = images_path.string();
  std::istringstream in(read_file(manifest_path));
  std::string line;
  std::getline(in, line);
  if (line != "index,content_label,tag,provenance_id") {
    throw IoError(fmt::format("{}:1: unexpected manifest header", manifest_path.string()));
  }
  std::size_t lineno = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 4) throw IoError(fmt::format("{}:{}: expected 4 fields", manifest_path.string(), lineno));
    if (parse_int<std::size_t>(fields[0], manifest_path, lineno) != out.content_labels.size()) {
      throw IoError(fmt::format("{}:{}: rows out of order", manifest_path.string(), lineno));
    }
    const int label = parse_int<int>(fields[1], manifest_path, lineno);
    out.content_labels.push_back(label);
    max_label = std::max(max_label, label);
    const DatasetTag tag = parse_tag(fields[2]);
    if (out.content_labels.size() == 1) out.tag = tag;
    if (tag != out.tag) throw IoError(fmt::format("{}:{}: mixed dataset tags", manifest_path.string(), lineno));
    out.provenance.push_back(parse_int<std::uint64_t>(fields[3], manifest_path, lineno, 16));
  }
  if (out.content_labels.size() != out.images.size()) {
    throw IoError(fmt::format("{}: manifest lists {} images, tensor holds {}", manifest_path.string(),
                              out.content_labels.size(), out.images.size()));
  }
  out.num_classes = max_label + 1;
  out.validate();
  return out;
}

void save_poisoned(const PoisonedDataset& data, const std::filesystem::path& images_path,
                   const std::filesystem::path& manifest_path) {
  if (data.entries.empty()) throw DataError("poisoned dataset is empty");
  std::vector<Tensor> images;
  images.reserve(data.size());
  std::string csv = "index,content_label,tag,provenance_id,trigger_index,concept,source_index\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const PoisonedEntry& e = data.entries[i];
    images.push_back(e.image);
    csv += fmt::format("{},{},poisoned,{},{},{},{}\n", i, e.content_label, hex64(e.source_provenance),
                       e.trigger_index, e.target.label, e.source_index);
  }
  write_mtt1(images_path, stack<float>(images));
  write_file(manifest_path, csv);
}

}  // namespace mtb
