#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mtb/cli/config.hpp"
#include "mtb/cli/pipeline.hpp"
#include "mtb/numerics/mtt1.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kBadConfig = 2, kStageFailed = 3, kBadInput = 4 };

int report_error(const std::string& message, int code) {
  fmt::print(stderr, "mtb: {}\n", message);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("mtb"));
  spdlog::set_pattern("[%H:%M:%S] %v");

  CLI::App app{"Multi-target backdoor trigger optimization and evaluation"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");
  app.fallthrough();

  std::string run_config;
  std::optional<std::string> run_out;
  std::optional<std::uint64_t> seed_override;
  bool resume = false;
  auto* run = app.add_subcommand("run", "Run the full pipeline for a config");
  run->add_option("config", run_config, "Config file")->required();
  run->add_option("--out", run_out, "Run directory (overrides run.output_dir)");
  run->add_option("--seed-override", seed_override, "Derive every attack-side seed from this value");
  run->add_flag("--resume", resume, "Reuse persisted triggers and victim when the config hash matches");

  std::vector<std::string> compare_dirs;
  std::optional<std::string> compare_out;
  auto* compare = app.add_subcommand("compare", "Side-by-side table of completed runs");
  compare->add_option("dirs", compare_dirs, "Run directories")->required();
  compare->add_option("--out", compare_out, "Write <out>.md and <out>.csv");

  std::string validate_config_path;
  auto* validate = app.add_subcommand("validate", "Parse and check a config");
  validate->add_option("config", validate_config_path, "Config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*validate) {
      const auto config = mtb::load_config(validate_config_path);
      fmt::print("{}: ok (method {}, N={}, M={}, hash {})\n", validate_config_path, mtb::method_name(config.run.method),
                 config.poison.n_triggers, config.poison.m_per_trigger, mtb::config_hash(config));
      return kOk;
    }
    if (*run) {
      const auto config = mtb::load_config(run_config);
      mtb::RunOptions options;
      if (run_out) options.output_dir = *run_out;
      options.seed_override = seed_override;
      options.resume = resume;
      const auto summary = mtb::run_experiment(config, options);
      const auto& r = summary.report;
      fmt::print("{}: ASR {:.2f} TCR {:.2f} failed {:.2f} clean acc {:.2f}\n", summary.dir.string(), r.mean_asr,
                 r.mean_tcr, r.mean_failed, r.clean_accuracy);
      return kOk;
    }
    if (*compare) {
      std::vector<std::filesystem::path> dirs(compare_dirs.begin(), compare_dirs.end());
      const auto table = mtb::compare_runs(dirs);
      if (compare_out) {
        mtb::write_file(*compare_out + ".md", table.markdown);
        mtb::write_file(*compare_out + ".csv", table.csv);
      }
      fmt::print("{}", table.markdown);
      return kOk;
    }
  } catch (const mtb::ConfigError& e) {
    return report_error(e.what(), kBadConfig);
  } catch (const mtb::StageError& e) {
    return report_error(e.what(), kStageFailed);
  } catch (const std::exception& e) {
    return report_error(e.what(), kBadInput);
  }
  return kUsage;
}
