#include "mtb/cli/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <sstream>
#include <unordered_set>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mtb/evalguard/detection.hpp"
#include "mtb/evalguard/harness.hpp"
#include "mtb/evalguard/report_io.hpp"
#include "mtb/numerics/mtt1.hpp"
#include "mtb/poison/ppm.hpp"
#include "mtb/poison/synth.hpp"
#include "mtb/trigger/baselines.hpp"
#include "mtb/trigger/geometry.hpp"

namespace mtb {

namespace fs = std::filesystem;
using nlohmann::json;

StageError::StageError(std::string stage, const std::string& message)
    : Error(fmt::format("stage '{}' failed: {}", stage, message)), stage_(std::move(stage)) {}

namespace {

constexpr const char* kHashComment = "# content_hash ";

template <typename F>
auto stage(const char* name, F&& body) {
  spdlog::info("stage {}", name);
  const auto start = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      spdlog::info("stage {} done in {:.1f}s", name,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    } else {
      auto out = body();
      spdlog::info("stage {} done in {:.1f}s", name,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      return out;
    }
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

struct Datasets {
  CleanDataset opt, implant, test, extra;
  std::optional<CleanDataset> cross_implant, cross_test;
};

Datasets load_datasets(const ExperimentConfig& c) {
  Datasets d;
  const Shape shape = c.encoder.image_shape();
  if (c.data.source == "ppm") {
    d.opt = ingest_ppm(c.data.ppm_opt_dir, DatasetTag::opt);
    d.implant = ingest_ppm(c.data.ppm_implant_dir, DatasetTag::implant);
    d.test = ingest_ppm(c.data.ppm_test_dir, DatasetTag::test);
    if (!c.data.ppm_extra_dir.empty()) d.extra = ingest_ppm(c.data.ppm_extra_dir, DatasetTag::implant);
    for (const CleanDataset* set : {&d.opt, &d.implant, &d.test}) {
      if (set->image_shape() != shape) {
        throw ShapeError(fmt::format("{} images have shape {}, encoder expects {}", set->source,
                                     shape_to_string(set->image_shape()), shape_to_string(shape)));
      }
    }
  } else {
    SynthOptions options{c.data.grid, c.data.pixel_noise, c.data.field_noise, 0};
    const int k = c.data.k_classes;
    auto synth = [&](std::size_t per_class, DatasetTag tag, std::uint64_t seed, const SynthOptions& o) {
      return synth_dataset(k, static_cast<int>(per_class), shape, seed, tag, o);
    };
    d.opt = synth(c.data.opt_per_class, DatasetTag::opt, c.data.seed, options);
    d.implant = synth(c.data.implant_per_class, DatasetTag::implant, c.data.seed, options);
    d.test = synth(c.data.test_per_class, DatasetTag::test, c.data.seed, options);
    if (c.data.extra_per_class > 0) {
      SynthOptions extra = options;
      extra.offset = c.data.implant_per_class * static_cast<std::size_t>(k);
      d.extra = synth(c.data.extra_per_class, DatasetTag::implant, c.data.seed, extra);
    }
    if (c.data.cross_dataset) {
      SynthOptions cross = options;
      cross.grid = c.data.cross_grid;
      d.cross_implant = synth(c.data.implant_per_class, DatasetTag::implant, c.data.cross_seed, cross);
      d.cross_test = synth(c.data.test_per_class, DatasetTag::test, c.data.cross_seed, cross);
    }
  }
  check_disjoint(d.opt, d.implant);
  check_disjoint(d.opt, d.test);
  check_disjoint(d.implant, d.test);
  if (d.extra.size() > 0) {
    check_disjoint(d.extra, d.implant);
    check_disjoint(d.extra, d.test);
  }
  if (d.implant.num_classes > c.data.k_classes) {
    throw DataError(fmt::format("implant data has {} classes, config declares k_classes = {}", d.implant.num_classes,
                                c.data.k_classes));
  }
  return d;
}

bool is_pgd(Method m) { return m == Method::mtattack || m == Method::separation_only; }

std::optional<std::string> sidecar_hash(const fs::path& artifact) {
  const fs::path meta = sidecar_path(artifact);
  if (!fs::exists(artifact) || !fs::exists(meta)) return std::nullopt;
  const Metadata m = read_metadata(meta);
  const auto it = m.find("config_hash");
  if (it == m.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> lock_hash(const fs::path& lock) {
  if (!fs::exists(lock)) return std::nullopt;
  std::istringstream in(read_file(lock));
  std::string first;
  std::getline(in, first);
  if (!first.starts_with(kHashComment)) return std::nullopt;
  return first.substr(std::string_view(kHashComment).size());
}

std::string with_hash_comment(const std::string& hash, const std::string& body) {
  return fmt::format("{}{}\n{}", kHashComment, hash, body);
}

// Total loss of the first and last data rows of a trace file.
std::pair<double, double> trace_endpoints(const std::string& text) {
  std::vector<double> totals;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#' || line.starts_with("step")) continue;
    const auto comma = line.rfind(',');
    totals.push_back(std::stod(line.substr(comma + 1)));
  }
  if (totals.empty()) throw DataError("trace has no rows");
  return {totals.front(), totals.back()};
}

std::string join_doubles(const std::vector<double>& values) {
  std::vector<std::string> parts;
  for (double v : values) parts.push_back(fmt::format("{}", v));
  return fmt::format("{}", fmt::join(parts, ","));
}

std::vector<double> split_doubles(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) out.push_back(std::stod(item));
  return out;
}

json tagged(MetricsReport report, const std::string& hash) {
  report.config_hash = hash;
  return report_to_json(report);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(now));
}

std::string report_line(const MetricsReport& r) {
  return fmt::format("ASR {:.2f}  TCR {:.2f}  failed {:.2f}  clean acc {:.2f}", r.mean_asr, r.mean_tcr, r.mean_failed,
                     r.clean_accuracy);
}

}  // namespace

RunSummary run_experiment(ExperimentConfig config, const RunOptions& options) {
  if (options.output_dir) config.run.output_dir = options.output_dir->string();
  if (options.seed_override) apply_seed_override(config, *options.seed_override);
  validate_config(config);

  RunSummary summary;
  summary.dir = config.run.output_dir;
  summary.config_hash = config_hash(config);
  const std::string& hash = summary.config_hash;
  const fs::path dir = summary.dir;
  const Method method = config.run.method;
  const std::size_t n = config.poison.n_triggers;
  const auto binding = config.binding();
  const OptimConfig oc = optim_config(config);
  const Metadata artifact_meta = {{"config_hash", hash}, {"method", std::string(method_name(method))}};
  spdlog::info("run {} ({}), config hash {}", dir.string(), method_name(method), hash);

  const bool lock_matches = lock_hash(dir / "config.lock") == hash;
  if (options.resume && !lock_matches) spdlog::warn("no matching config.lock in {}; running from scratch", dir.string());
  stage("prepare", [&] {
    fs::create_directories(dir);
    write_file(dir / "config.lock", with_hash_comment(hash, serialize_config(config)));
  });

  const Datasets data = stage("data", [&] { return load_datasets(config); });

  const EncoderParams encoder = stage("encoder", [&] {
    EncoderParams e = init_encoder(config.encoder);
    save_encoder(e, dir, "encoder");
    return e;
  });

  TriggerBank bank;
  PrototypeBank protos;
  std::string trace_text;
  stage("optimize", [&] {
    const bool reuse = options.resume && lock_matches && sidecar_hash(dir / "triggers.mtt1") == hash &&
                       fs::exists(dir / "trace.csv") &&
                       (method != Method::mtattack || sidecar_hash(dir / "protos.mtt1") == hash);
    if (reuse) {
      spdlog::info("reusing triggers from {}", (dir / "triggers.mtt1").string());
      bank = load_trigger_bank(dir / "triggers.mtt1");
      if (method == Method::mtattack) protos = load_prototypes(dir / "protos.mtt1");
      trace_text = read_file(dir / "trace.csv");
      summary.reused_triggers = true;
      return;
    }
    const Shape shape = encoder.config.image_shape();
    std::string body = "step,lr,psp,tpa,total\n";
    switch (method) {
      case Method::mtattack: {
        auto r = optimize_triggers(oc, data.opt, encoder);
        bank = std::move(r.bank);
        protos = std::move(r.protos);
        body = trace_csv(r.trace);
        break;
      }
      case Method::separation_only: {
        auto r = baseline_separation_only(oc, data.opt, encoder);
        bank = std::move(r.bank);
        body = trace_csv(r.trace);
        break;
      }
      case Method::blended:
        bank = baseline_blended(n, config.optim.epsilon, config.baseline.blended_seed, shape);
        break;
      case Method::sig:
        bank = baseline_sig(n, config.optim.epsilon, config.baseline.sig_frequency, shape);
        break;
    }
    bank.validate();
    Metadata meta = artifact_meta;
    if (is_pgd(method)) {
      meta["trigger_seed"] = std::to_string(oc.trigger_seed);
      meta["proto_seed"] = std::to_string(oc.proto_seed);
      meta["batch_seed"] = std::to_string(oc.batch_seed);
    } else if (method == Method::blended) {
      meta["pattern_seed"] = std::to_string(config.baseline.blended_seed);
    }
    save_trigger_bank(bank, dir / "triggers.mtt1", meta);
    if (method == Method::mtattack) save_prototypes(protos, dir / "protos.mtt1", artifact_meta);
    trace_text = with_hash_comment(hash, body);
    write_file(dir / "trace.csv", trace_text);
  });

  AttackSetup setup;
  setup.encoder = encoder;
  setup.k_benign = config.data.k_classes;
  setup.m_per_trigger = config.poison.m_per_trigger;
  setup.poison_seed = config.poison.seed;
  setup.shared_sources = config.poison.shared_sources;
  setup.implant = config.implant;

  SurrogateVictim victim;
  TrainingMix mix;
  std::vector<double> implant_loss;
  SurrogateVictim clean_victim;
  stage("implant", [&] {
    const PoisonedDataset poison = build_poison_set(bank, data.implant, binding, setup.m_per_trigger,
                                                    setup.poison_seed, setup.shared_sources);
    SurrogateVictim fresh = make_victim(encoder, setup.k_benign, static_cast<int>(n));
    fresh.binding = binding;
    mix = build_mix(fresh, data.implant, poison);

    const fs::path victim_path = dir / "victim.mtt1";
    const bool reuse = summary.reused_triggers && sidecar_hash(victim_path) == hash;
    if (reuse) {
      spdlog::info("reusing victim from {}", victim_path.string());
      victim = load_victim(victim_path, encoder);
      implant_loss = split_doubles(metadata_value(read_metadata(sidecar_path(victim_path)), "epoch_loss",
                                                  sidecar_path(victim_path)));
      std::unordered_set<std::uint64_t> known;
      for (std::uint64_t p : mix.provenance) {
        if (known.insert(p).second) victim.training_provenance.push_back(p);
      }
      summary.reused_victim = true;
    } else {
      auto trained = train_on_mix(fresh, mix, setup.implant);
      victim = std::move(trained.victim);
      implant_loss = std::move(trained.epoch_loss);
      Metadata meta = artifact_meta;
      meta["epoch_loss"] = join_doubles(implant_loss);
      meta["epochs"] = std::to_string(setup.implant.epochs);
      meta["implant_seed"] = std::to_string(setup.implant.seed);
      meta["poison_seed"] = std::to_string(setup.poison_seed);
      save_victim(victim, victim_path, meta);
    }
    SurrogateVictim clean_fresh = make_victim(encoder, setup.k_benign, static_cast<int>(n));
    clean_fresh.binding = binding;
    clean_victim = train_on_mix(clean_fresh, build_mix(clean_fresh, data.implant, PoisonedDataset{}), setup.implant)
                       .victim;
  });

  json metrics;
  std::string csv_rows;
  const ReportContext context{std::string(method_name(method)), n, config.poison.m_per_trigger, config.optim.epsilon};
  std::string plotdata;
  stage("evaluate", [&] {
    summary.report = evaluate(victim, bank, binding, data.test);
    summary.report.config_hash = hash;
    const MetricsReport clean_report = evaluate(clean_victim, bank, binding, data.test);
    metrics["report"] = tagged(summary.report, hash);
    metrics["clean_baseline"] = {{"clean_correct", clean_report.clean_correct},
                                 {"clean_total", clean_report.clean_total},
                                 {"clean_accuracy", clean_report.clean_accuracy},
                                 {"accuracy_drop", clean_report.clean_accuracy - summary.report.clean_accuracy}};
    metrics["implant_loss"] = implant_loss;
    csv_rows += metrics_csv_rows(summary.report, context);

    json transforms = json::array();
    for (const TransformSpec& spec : config.eval.transforms) {
      MetricsReport r = evaluate(victim, bank, binding, data.test, spec);
      r.config_hash = hash;
      csv_rows += metrics_csv_rows(r, context);
      transforms.push_back(report_to_json(r));
    }
    metrics["transforms"] = transforms;

    if (data.cross_implant) {
      const AttackRun cross = implant_and_evaluate(setup, bank, binding, *data.cross_implant, *data.cross_test);
      metrics["cross_dataset"] = tagged(cross.report, hash);
    } else {
      metrics["cross_dataset"] = nullptr;
    }

    const std::size_t samples = std::min(config.eval.plot_samples, data.test.size());
    const std::vector<Tensor> images(data.test.images.begin(), data.test.images.begin() + samples);
    const Tensor clean_embeds = encode_batch(encoder, images);
    const Tensor embeds = triggered_embeddings(encoder, bank, images);
    plotdata = with_hash_comment(hash, plotdata_csv(clean_embeds, embeds));

    json geometry;
    if (n >= 2) geometry["min_angle"] = min_pairwise_angle(class_means(embeds));
    if (is_pgd(method)) {
      const auto [first, last] = trace_endpoints(trace_text);
      geometry["initial_loss"] = first;
      geometry["final_loss"] = last;
      const InitialState init = initial_state(oc, data.opt, encoder, method == Method::mtattack);
      const Tensor init_embeds = triggered_embeddings(encoder, init.bank, images);
      if (n >= 2) geometry["initial_min_angle"] = min_pairwise_angle(class_means(init_embeds));
      if (method == Method::mtattack) {
        geometry["initial_proto_distance"] = mean_distance_to_prototype(init_embeds, init.protos);
        geometry["proto_distance"] = mean_distance_to_prototype(embeds, protos);
      }
    }
    geometry["max_abs_delta"] = bank.max_abs();
    metrics["optimization"] = geometry;
  });

  stage("defense", [&] {
    json defense;
    if (config.defense.detection) {
      const DetectionResult det = detect_scores(mix.images, mix.poisoned, encoder);
      json cutoffs = json::array();
      for (int cut : config.defense.cutoffs) {
        const FilterResult f = filter_and_reimplant(setup, mix, det.scores, cut, bank, binding, data.test);
        cutoffs.push_back({{"percent", cut},
                           {"removed", f.removed},
                           {"removed_poison", f.removed_poison},
                           {"report", tagged(f.report, hash)}});
      }
      defense["detection"] = {{"auc", det.auc}, {"cutoffs", cutoffs}};
    }
    if (!config.defense.finetune_multipliers.empty() && data.extra.size() > 0) {
      std::vector<std::size_t> amounts;
      for (double m : config.defense.finetune_multipliers) {
        amounts.push_back(static_cast<std::size_t>(std::llround(m * static_cast<double>(n * setup.m_per_trigger))));
      }
      const auto points = finetune_sweep(setup, victim, data.extra, amounts, bank, binding, data.test);
      json sweep = json::array();
      for (std::size_t i = 0; i < points.size(); ++i) {
        sweep.push_back({{"multiplier", config.defense.finetune_multipliers[i]},
                         {"amount", points[i].amount},
                         {"report", tagged(points[i].report, hash)}});
      }
      defense["finetune"] = sweep;
    } else if (!config.defense.finetune_multipliers.empty()) {
      spdlog::warn("no extra benign data; skipping fine-tuning sweep");
    }
    if (config.defense.rebind) {
      const auto fresh = config.rebinding();
      std::vector<std::string> labels;
      for (const auto& c : fresh) labels.push_back(c.label);
      defense["rebind"] = {{"concepts", labels},
                           {"report", tagged(rebind_and_evaluate(setup, bank, fresh, data.implant, data.test), hash)}};
    }
    metrics["defense"] = defense;
  });

  stage("report", [&] {
    metrics["timestamp"] = utc_timestamp();
    metrics["config_hash"] = hash;
    metrics["run"] = {{"method", method_name(method)},
                      {"n_triggers", n},
                      {"m_per_trigger", config.poison.m_per_trigger},
                      {"epsilon", config.optim.epsilon},
                      {"k_classes", config.data.k_classes},
                      {"steps", is_pgd(method) ? config.optim.steps : 0},
                      {"test_images", data.test.size()},
                      {"concepts", [&] {
                         std::vector<std::string> labels;
                         for (const auto& c : binding) labels.push_back(c.label);
                         return labels;
                       }()}};
    write_file(dir / "metrics.json", metrics.dump(2) + "\n");
    write_file(dir / "metrics.csv", with_hash_comment(hash, fmt::format("{}\n{}", kMetricsCsvHeader, csv_rows)));
    write_file(dir / "plotdata.csv", plotdata);

    std::string text = fmt::format("method      {}\nconfig hash {}\ntriggers    {} x {} poisons, epsilon {:.6f}\n\n",
                                   method_name(method), hash, n, config.poison.m_per_trigger, config.optim.epsilon);
    text += fmt::format("main        {}\n", report_line(summary.report));
    for (const auto& t : summary.report.per_trigger) {
      text += fmt::format("  trigger {} -> {:<12} ASR {:6.2f}  TCR {:6.2f}  failed {:6.2f}\n", t.trigger_index,
                          t.concept_label, t.asr, t.tcr, t.failed);
    }
    text += fmt::format("clean-only  clean acc {:.2f}\n",
                        metrics["clean_baseline"]["clean_accuracy"].get<double>());
    for (const auto& r : metrics["transforms"]) {
      text += fmt::format("{:<11} {}\n", r["transform"].get<std::string>(), report_line(report_from_json(r)));
    }
    if (!metrics["cross_dataset"].is_null()) {
      text += fmt::format("cross data  {}\n", report_line(report_from_json(metrics["cross_dataset"])));
    }
    const json& defense = metrics["defense"];
    if (defense.contains("detection")) {
      text += fmt::format("detection   AUC {:.4f}\n", defense["detection"]["auc"].get<double>());
      for (const auto& c : defense["detection"]["cutoffs"]) {
        text += fmt::format("  cutoff {:>2}% {}\n", c["percent"].get<int>(), report_line(report_from_json(c["report"])));
      }
    }
    if (defense.contains("finetune")) {
      for (const auto& p : defense["finetune"]) {
        text += fmt::format("fine-tune {:>5} {}\n", p["amount"].get<std::size_t>(),
                            report_line(report_from_json(p["report"])));
      }
    }
    if (defense.contains("rebind")) {
      text += fmt::format("rebind      {}\n", report_line(report_from_json(defense["rebind"]["report"])));
    }
    write_file(dir / "summary.txt", with_hash_comment(hash, text));
  });
  return summary;
}

Comparison compare_runs(const std::vector<fs::path>& dirs) {
  if (dirs.size() < 2) throw ConfigError(fmt::format("compare needs at least 2 run directories, got {}", dirs.size()));
  struct Row {
    std::string run, method;
    std::size_t n, m;
    double epsilon;
    MetricsReport report;
  };
  std::vector<Row> rows;
  for (const fs::path& dir : dirs) {
    const fs::path file = dir / "metrics.json";
    if (!fs::exists(file)) {
      throw IoError(fmt::format("run directory '{}' is incomplete: metrics.json is missing", dir.string()));
    }
    json j;
    try {
      j = json::parse(read_file(file));
      rows.push_back({dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string(),
                      j.at("run").at("method").get<std::string>(), j.at("run").at("n_triggers").get<std::size_t>(),
                      j.at("run").at("m_per_trigger").get<std::size_t>(), j.at("run").at("epsilon").get<double>(),
                      report_from_json(j.at("report"))});
    } catch (const json::exception& e) {
      throw IoError(fmt::format("{}: malformed metrics: {}", file.string(), e.what()));
    }
  }
  Comparison out;
  out.csv = "run,method,N,M,epsilon,asr,tcr,failed,clean_acc\n";
  out.markdown = "| run | method | N | M | epsilon | ASR | TCR | failed | clean acc |\n"
                 "|---|---|---|---|---|---|---|---|---|\n";
  for (const Row& r : rows) {
    const MetricsReport& m = r.report;
    out.csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.run, r.method, r.n, r.m, r.epsilon, m.mean_asr, m.mean_tcr,
                           m.mean_failed, m.clean_accuracy);
    out.markdown += fmt::format("| {} | {} | {} | {} | {:.4f} | {:.2f} | {:.2f} | {:.2f} | {:.2f} |\n", r.run, r.method,
                                r.n, r.m, r.epsilon, m.mean_asr, m.mean_tcr, m.mean_failed, m.clean_accuracy);
  }
  return out;
}

}  // namespace mtb
