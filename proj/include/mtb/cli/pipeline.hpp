#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtb/cli/config.hpp"
#include "mtb/errors.hpp"
#include "mtb/evalguard/metrics.hpp"

namespace mtb {

// A pipeline stage failed; what() carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::uint64_t> seed_override;
  // Reuse triggers and victim from a previous run of the same config.
  bool resume = false;
};

struct RunSummary {
  std::filesystem::path dir;
  std::string config_hash;
  MetricsReport report;
  bool reused_triggers = false;
  bool reused_victim = false;
};

// Applies the options, validates and runs every stage. Invalid configs throw
// ConfigError; stage failures throw StageError.
RunSummary run_experiment(ExperimentConfig config, const RunOptions& options = {});

// Stages in execution order.
inline constexpr const char* kStages[] = {"prepare", "data", "encoder", "optimize", "implant", "evaluate", "defense", "report"};

// Files every completed run directory holds.
inline constexpr const char* kRunFiles[] = {"config.lock", "triggers.mtt1", "victim.mtt1", "metrics.json",
                                            "metrics.csv", "trace.csv",     "plotdata.csv", "summary.txt"};

struct Comparison {
  std::string markdown;
  std::string csv;
};

// Side-by-side table of the headline metrics of >= 2 run directories.
Comparison compare_runs(const std::vector<std::filesystem::path>& dirs);

}  // namespace mtb
