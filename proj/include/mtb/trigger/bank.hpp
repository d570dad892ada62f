#pragma once

#include <filesystem>
#include <vector>

#include "mtb/numerics/mtt1.hpp"
#include "mtb/numerics/tensor.hpp"

namespace mtb {

/// Largest float not above epsilon. Clamping in float to this bound keeps
/// |delta| <= epsilon exactly when compared in double.
float budget_bound(double epsilon);

// Element-wise clamp to [-budget_bound(eps), budget_bound(eps)].
Tensor project_linf(const Tensor& delta, double epsilon);
void project_linf_inplace(Tensor& delta, double epsilon);

/// N additive triggers sharing one image shape, each within the L-inf budget.
/// Triggers are addressed 1..N.
struct TriggerBank {
  std::vector<Tensor> deltas;
  double epsilon = 24.0 / 255.0;

  std::size_t size() const { return deltas.size(); }
  const Tensor& delta(std::size_t index) const;
  // max over triggers and pixels of |delta|, in double.
  double max_abs() const;
  // Throws if empty, shapes differ or a pixel exceeds the budget.
  void validate() const;
  bool operator==(const TriggerBank&) const = default;
};

/// Prototype vectors p_0..p_N as the rows of one (N+1) x d tensor; row 0 is the
/// clean class.
struct PrototypeBank {
  Tensor protos;

  std::size_t count() const { return protos.empty() ? 0 : protos.extent(0); }
  std::size_t dim() const { return protos.empty() ? 0 : protos.extent(1); }
  bool operator==(const PrototypeBank&) const = default;
};

void save_trigger_bank(const TriggerBank& bank, const std::filesystem::path& path, Metadata meta = {});
TriggerBank load_trigger_bank(const std::filesystem::path& path);
void save_prototypes(const PrototypeBank& protos, const std::filesystem::path& path, Metadata meta = {});
PrototypeBank load_prototypes(const std::filesystem::path& path);

// "<path>.meta"
std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace mtb
