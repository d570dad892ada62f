#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mtb/encoder/encoder.hpp"
#include "mtb/evalguard/transforms.hpp"
#include "mtb/trigger/optimizer.hpp"
#include "mtb/victim/victim.hpp"

namespace mtb {

enum class Method { mtattack, blended, sig, separation_only };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);

struct RunSection {
  Method method = Method::mtattack;
  std::string output_dir = "runs/out";
  bool operator==(const RunSection&) const = default;
};

struct DataSection {
  std::string source = "synthetic";  // or "ppm"
  int k_classes = 4;
  std::size_t opt_per_class = 300;
  std::size_t implant_per_class = 500;
  std::size_t test_per_class = 250;
  std::size_t extra_per_class = 400;
  std::uint64_t seed = 101;
  std::size_t grid = 4;
  double pixel_noise = 0.04;
  double field_noise = 0.08;
  bool cross_dataset = true;
  std::uint64_t cross_seed = 202;
  std::size_t cross_grid = 6;
  std::string ppm_opt_dir;
  std::string ppm_implant_dir;
  std::string ppm_test_dir;
  std::string ppm_extra_dir;
  bool operator==(const DataSection&) const = default;
};

struct OptimSection {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double max_lr = 0.6;
  double warmup_frac = 0.03;
  double lambda = 0.001;
  double epsilon = 24.0 / 255.0;
  std::uint64_t trigger_seed = 11;
  std::uint64_t proto_seed = 13;
  std::uint64_t batch_seed = 17;
  std::uint64_t augmentation_seed = 19;
  double proto_lr_factor = 0.01;
  double temperature = 1.0;
  bool clean_anchor_term = true;
  bool use_psp = true;
  bool use_tpa = true;
  std::vector<TransformSpec> augmentation;
  bool operator==(const OptimSection&) const = default;
};

struct BaselineSection {
  std::uint64_t blended_seed = 29;
  double sig_frequency = 6.0;
  bool operator==(const BaselineSection&) const = default;
};

struct PoisonSection {
  std::size_t n_triggers = 0;
  std::size_t m_per_trigger = 0;
  std::uint64_t seed = 23;
  bool shared_sources = true;
  // Defaults to concept1..conceptN when empty.
  std::vector<std::string> concepts;
  bool operator==(const PoisonSection&) const = default;
};

struct EvalSection {
  std::vector<TransformSpec> transforms;
  std::size_t plot_samples = 100;
  bool operator==(const EvalSection&) const = default;
};

struct DefenseSection {
  bool detection = true;
  std::vector<int> cutoffs = {0, 5, 10, 20};
  std::vector<double> finetune_multipliers = {0.5, 1.0, 2.0};
  bool rebind = true;
  std::vector<std::string> rebind_concepts;
  bool operator==(const DefenseSection&) const = default;
};

struct ExperimentConfig {
  RunSection run;
  DataSection data;
  EncoderConfig encoder;
  OptimSection optim;
  BaselineSection baseline;
  PoisonSection poison;
  ImplantOptions implant;
  EvalSection eval;
  DefenseSection defense;

  bool operator==(const ExperimentConfig&) const = default;

  std::vector<ConceptId> binding() const;
  std::vector<ConceptId> rebinding() const;
};

/// Parses the sectioned key = value format. Errors name the origin, line,
/// section and key. run.method, poison.n_triggers and poison.m_per_trigger
/// are required.
ExperimentConfig parse_config(std::string_view text, std::string_view origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Cross-field checks; errors name the offending field.
void validate_config(const ExperimentConfig& config);

// Canonical text form listing every field.
std::string serialize_config(const ExperimentConfig& config, bool include_output_dir = true);

// Hash of the canonical form without run.output_dir.
std::string config_hash(const ExperimentConfig& config);

OptimConfig optim_config(const ExperimentConfig& config);

// Replaces every attack-side seed with a stream derived from `seed`; the data
// and encoder seeds are kept.
void apply_seed_override(ExperimentConfig& config, std::uint64_t seed);

}  // namespace mtb
