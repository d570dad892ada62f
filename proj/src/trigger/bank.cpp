#include "mtb/trigger/bank.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mtb/errors.hpp"

namespace mtb {

float budget_bound(double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError(fmt::format("epsilon must be positive, got {}", epsilon));
  float bound = static_cast<float>(epsilon);
  if (static_cast<double>(bound) > epsilon) bound = std::nextafter(bound, 0.0f);
  return bound;
}

void project_linf_inplace(Tensor& delta, double epsilon) {
  const float bound = budget_bound(epsilon);
  for (float& v : delta) v = std::clamp(v, -bound, bound);
}

Tensor project_linf(const Tensor& delta, double epsilon) {
  Tensor out = delta;
  project_linf_inplace(out, epsilon);
  return out;
}

const Tensor& TriggerBank::delta(std::size_t index) const {
  if (index < 1 || index > deltas.size()) {
    throw ConfigError(fmt::format("trigger index {} outside 1..{}", index, deltas.size()));
  }
  return deltas[index - 1];
}

double TriggerBank::max_abs() const {
  double m = 0.0;
  for (const Tensor& d : deltas) {
    for (float v : d) m = std::max(m, std::abs(static_cast<double>(v)));
  }
  return m;
}

void TriggerBank::validate() const {
  if (deltas.empty()) throw ConfigError("trigger bank is empty");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (deltas[i].shape() != deltas.front().shape()) {
      throw ShapeError(fmt::format("trigger {} has shape {}, expected {}", i + 1, shape_to_string(deltas[i].shape()),
                                   shape_to_string(deltas.front().shape())));
    }
    if (!deltas[i].all_finite()) throw NumericError(fmt::format("trigger {} has non-finite values", i + 1));
  }
  if (max_abs() > epsilon) {
    throw NumericError(fmt::format("trigger bank exceeds its budget: {} > {}", max_abs(), epsilon));
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path out = path;
  out += ".meta";
  return out;
}

void save_trigger_bank(const TriggerBank& bank, const std::filesystem::path& path, Metadata meta) {
  bank.validate();
  write_mtt1(path, stack<float>(bank.deltas));
  meta["kind"] = "trigger_bank";
  meta["epsilon"] = fmt::format("{:.17g}", bank.epsilon);
  meta["n"] = std::to_string(bank.size());
  write_metadata(sidecar_path(path), meta);
}

TriggerBank load_trigger_bank(const std::filesystem::path& path) {
  const Tensor stacked = read_mtt1(path);
  const Metadata meta = read_metadata(sidecar_path(path));
  TriggerBank bank;
  bank.epsilon = std::stod(metadata_value(meta, "epsilon", sidecar_path(path)));
  if (stacked.rank() < 2) throw IoError(fmt::format("{}: trigger tensor must have a leading trigger axis", path.string()));
  bank.deltas = unstack(stacked);
  if (std::to_string(bank.size()) != metadata_value(meta, "n", sidecar_path(path))) {
    throw IoError(fmt::format("{}: trigger count does not match its metadata", path.string()));
  }
  bank.validate();
  return bank;
}

void save_prototypes(const PrototypeBank& protos, const std::filesystem::path& path, Metadata meta) {
  if (protos.protos.rank() != 2 || protos.count() < 2) throw ShapeError("prototype bank must be (N+1) x d with N >= 1");
  write_mtt1(path, protos.protos);
  meta["kind"] = "prototype_bank";
  meta["n"] = std::to_string(protos.count() - 1);
  write_metadata(sidecar_path(path), meta);
}

PrototypeBank load_prototypes(const std::filesystem::path& path) {
  PrototypeBank out{read_mtt1(path)};
  if (out.protos.rank() != 2 || out.count() < 2) {
    throw IoError(fmt::format("{}: prototype tensor must be (N+1) x d", path.string()));
  }
  return out;
}

}  // namespace mtb
