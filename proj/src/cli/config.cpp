#include "mtb/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>
#include <variant>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/evalguard/harness.hpp"
#include "mtb/numerics/mtt1.hpp"
#include "mtb/numerics/rng.hpp"

namespace mtb {

std::string_view method_name(Method method) {
  switch (method) {
    case Method::mtattack: return "mtattack";
    case Method::blended: return "blended";
    case Method::sig: return "sig";
    case Method::separation_only: return "separation_only";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::mtattack, Method::blended, Method::sig, Method::separation_only}) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError(fmt::format("unknown method '{}' (expected mtattack, blended, sig or separation_only)", name));
}

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed and count fields share one parser");

using FieldPtr = std::variant<int*, std::size_t*, double*, bool*, std::string*, Method*,
                              std::vector<TransformSpec>*, std::vector<std::string>*, std::vector<int>*,
                              std::vector<double>*>;

struct Field {
  const char* section;
  const char* key;
  FieldPtr ptr;
};

std::vector<Field> fields(ExperimentConfig& c) {
  return {
      {"run", "method", &c.run.method},
      {"run", "output_dir", &c.run.output_dir},
      {"data", "source", &c.data.source},
      {"data", "k_classes", &c.data.k_classes},
      {"data", "opt_per_class", &c.data.opt_per_class},
      {"data", "implant_per_class", &c.data.implant_per_class},
      {"data", "test_per_class", &c.data.test_per_class},
      {"data", "extra_per_class", &c.data.extra_per_class},
      {"data", "seed", &c.data.seed},
      {"data", "grid", &c.data.grid},
      {"data", "pixel_noise", &c.data.pixel_noise},
      {"data", "field_noise", &c.data.field_noise},
      {"data", "cross_dataset", &c.data.cross_dataset},
      {"data", "cross_seed", &c.data.cross_seed},
      {"data", "cross_grid", &c.data.cross_grid},
      {"data", "ppm_opt_dir", &c.data.ppm_opt_dir},
      {"data", "ppm_implant_dir", &c.data.ppm_implant_dir},
      {"data", "ppm_test_dir", &c.data.ppm_test_dir},
      {"data", "ppm_extra_dir", &c.data.ppm_extra_dir},
      {"encoder", "seed", &c.encoder.seed},
      {"encoder", "channels", &c.encoder.channels},
      {"encoder", "image_side", &c.encoder.image_side},
      {"encoder", "patch_size", &c.encoder.patch_size},
      {"encoder", "hidden_dim", &c.encoder.hidden_dim},
      {"encoder", "embed_dim", &c.encoder.embed_dim},
      {"optim", "steps", &c.optim.steps},
      {"optim", "batch_size", &c.optim.batch_size},
      {"optim", "max_lr", &c.optim.max_lr},
      {"optim", "warmup_frac", &c.optim.warmup_frac},
      {"optim", "lambda", &c.optim.lambda},
      {"optim", "epsilon", &c.optim.epsilon},
      {"optim", "trigger_seed", &c.optim.trigger_seed},
      {"optim", "proto_seed", &c.optim.proto_seed},
      {"optim", "batch_seed", &c.optim.batch_seed},
      {"optim", "augmentation_seed", &c.optim.augmentation_seed},
      {"optim", "proto_lr_factor", &c.optim.proto_lr_factor},
      {"optim", "temperature", &c.optim.temperature},
      {"optim", "clean_anchor_term", &c.optim.clean_anchor_term},
      {"optim", "use_psp", &c.optim.use_psp},
      {"optim", "use_tpa", &c.optim.use_tpa},
      {"optim", "augmentation", &c.optim.augmentation},
      {"baseline", "blended_seed", &c.baseline.blended_seed},
      {"baseline", "sig_frequency", &c.baseline.sig_frequency},
      {"poison", "n_triggers", &c.poison.n_triggers},
      {"poison", "m_per_trigger", &c.poison.m_per_trigger},
      {"poison", "seed", &c.poison.seed},
      {"poison", "shared_sources", &c.poison.shared_sources},
      {"poison", "concepts", &c.poison.concepts},
      {"implant", "epochs", &c.implant.epochs},
      {"implant", "lr", &c.implant.lr},
      {"implant", "batch", &c.implant.batch},
      {"implant", "seed", &c.implant.seed},
      {"implant", "tune_encoder", &c.implant.tune_encoder},
      {"implant", "encoder_lr_factor", &c.implant.encoder_lr_factor},
      {"eval", "transforms", &c.eval.transforms},
      {"eval", "plot_samples", &c.eval.plot_samples},
      {"defense", "detection", &c.defense.detection},
      {"defense", "cutoffs", &c.defense.cutoffs},
      {"defense", "finetune_multipliers", &c.defense.finetune_multipliers},
      {"defense", "rebind", &c.defense.rebind},
      {"defense", "rebind_concepts", &c.defense.rebind_concepts},
  };
}

constexpr const char* kRequired[][2] = {{"run", "method"}, {"poison", "n_triggers"}, {"poison", "m_per_trigger"}};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::istringstream in(value);
  for (std::string item; std::getline(in, item, ',');) out.push_back(trim(item));
  return out;
}

template <typename Num>
Num parse_number(const std::string& text, const char* expected) {
  Num value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("expected {}, got '{}'", expected, text));
  }
  return value;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(fmt::format("expected true or false, got '{}'", text));
}

struct Assign {
  const std::string& value;
  void operator()(int* p) const { *p = parse_number<int>(value, "an integer"); }
  void operator()(std::size_t* p) const { *p = parse_number<std::size_t>(value, "a non-negative integer"); }
  void operator()(double* p) const { *p = parse_number<double>(value, "a number"); }
  void operator()(bool* p) const { *p = parse_bool(value); }
  void operator()(std::string* p) const { *p = value; }
  void operator()(Method* p) const { *p = parse_method(value); }
  void operator()(std::vector<TransformSpec>* p) const {
    p->clear();
    if (value == "none") return;
    for (const auto& item : split_list(value)) p->push_back(TransformSpec::parse(item));
  }
  void operator()(std::vector<std::string>* p) const { *p = split_list(value); }
  void operator()(std::vector<int>* p) const {
    p->clear();
    for (const auto& item : split_list(value)) p->push_back(parse_number<int>(item, "an integer list"));
  }
  void operator()(std::vector<double>* p) const {
    p->clear();
    for (const auto& item : split_list(value)) p->push_back(parse_number<double>(item, "a number list"));
  }
};

struct Render {
  std::string operator()(const int* p) const { return std::to_string(*p); }
  std::string operator()(const std::size_t* p) const { return std::to_string(*p); }
  std::string operator()(const double* p) const { return fmt::format("{}", *p); }
  std::string operator()(const bool* p) const { return *p ? "true" : "false"; }
  std::string operator()(const std::string* p) const { return *p; }
  std::string operator()(const Method* p) const { return std::string(method_name(*p)); }
  std::string operator()(const std::vector<TransformSpec>* p) const {
    if (p->empty()) return "none";
    std::vector<std::string> parts;
    for (const auto& t : *p) parts.push_back(t.to_string());
    return fmt::format("{}", fmt::join(parts, ","));
  }
  std::string operator()(const std::vector<std::string>* p) const { return fmt::format("{}", fmt::join(*p, ",")); }
  std::string operator()(const std::vector<int>* p) const { return fmt::format("{}", fmt::join(*p, ",")); }
  std::string operator()(const std::vector<double>* p) const {
    std::vector<std::string> parts;
    for (double v : *p) parts.push_back(fmt::format("{}", v));
    return fmt::format("{}", fmt::join(parts, ","));
  }
};

[[noreturn]] void field_error(const char* section, const char* key, const std::string& what) {
  throw ConfigError(fmt::format("[{}] {}: {}", section, key, what));
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, std::string_view origin) {
  ExperimentConfig config;
  auto table = fields(config);
  std::set<std::string> sections;
  for (const auto& f : table) sections.insert(f.section);
  std::set<std::string> seen;

  std::istringstream in{std::string(text)};
  std::string line, section;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#' || body[0] == ';') continue;
    const std::string where = fmt::format("{}:{}", origin, lineno);
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(fmt::format("{}: malformed section header '{}'", where, body));
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      if (!sections.contains(section)) throw ConfigError(fmt::format("{}: unknown section [{}]", where, section));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}: expected 'key = value', got '{}'", where, body));
    if (section.empty()) throw ConfigError(fmt::format("{}: key outside of any section", where));
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const Field& f) { return f.section == section && f.key == key; });
    if (it == table.end()) throw ConfigError(fmt::format("{}: [{}] unknown key '{}'", where, section, key));
    if (!seen.insert(section + "." + key).second) {
      throw ConfigError(fmt::format("{}: [{}] {}: duplicate key", where, section, key));
    }
    try {
      std::visit(Assign{value}, it->ptr);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}: [{}] {}: {}", where, section, key, e.what()));
    }
  }
  for (const auto& req : kRequired) {
    if (!seen.contains(fmt::format("{}.{}", req[0], req[1]))) {
      throw ConfigError(fmt::format("{}: missing required field [{}] {}", origin, req[0], req[1]));
    }
  }
  try {
    validate_config(config);
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", origin, e.what()));
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path.string());
}

void validate_config(const ExperimentConfig& c) {
  if (c.poison.n_triggers < 1) field_error("poison", "n_triggers", "must be at least 1");
  if (c.poison.m_per_trigger < 1) field_error("poison", "m_per_trigger", "must be at least 1");
  try {
    c.binding();
  } catch (const ConfigError& e) {
    field_error("poison", "concepts", e.what());
  }
  try {
    c.rebinding();
  } catch (const ConfigError& e) {
    field_error("defense", "rebind_concepts", e.what());
  }
  if (c.data.source != "synthetic" && c.data.source != "ppm") field_error("data", "source", "must be synthetic or ppm");
  if (c.data.k_classes < 2) field_error("data", "k_classes", "must be at least 2");
  if (c.data.source == "synthetic") {
    if (c.data.opt_per_class < 1) field_error("data", "opt_per_class", "must be at least 1");
    if (c.data.implant_per_class < 1) field_error("data", "implant_per_class", "must be at least 1");
    if (c.data.test_per_class < 1) field_error("data", "test_per_class", "must be at least 1");
    const std::size_t extra = c.data.extra_per_class * static_cast<std::size_t>(c.data.k_classes);
    for (double m : c.defense.finetune_multipliers) {
      const auto amount = std::llround(m * static_cast<double>(c.poison.n_triggers * c.poison.m_per_trigger));
      if (amount > static_cast<long long>(extra)) {
        field_error("data", "extra_per_class",
                    fmt::format("{} extra images cannot cover a fine-tuning amount of {}", extra, amount));
      }
    }
    if (c.data.grid < 2) field_error("data", "grid", "must be at least 2");
    if (c.data.cross_grid < 2) field_error("data", "cross_grid", "must be at least 2");
  } else {
    if (c.data.ppm_opt_dir.empty()) field_error("data", "ppm_opt_dir", "required when source = ppm");
    if (c.data.ppm_implant_dir.empty()) field_error("data", "ppm_implant_dir", "required when source = ppm");
    if (c.data.ppm_test_dir.empty()) field_error("data", "ppm_test_dir", "required when source = ppm");
  }
  if (c.data.pixel_noise < 0) field_error("data", "pixel_noise", "must be non-negative");
  if (c.data.field_noise < 0) field_error("data", "field_noise", "must be non-negative");
  try {
    c.encoder.validate();
  } catch (const ConfigError& e) {
    field_error("encoder", "patch_size", e.what());
  }
  const OptimConfig oc = optim_config(c);
  try {
    oc.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("[optim] {}", e.what()));
  }
  if (!(c.baseline.sig_frequency > 0)) field_error("baseline", "sig_frequency", "must be positive");
  if (c.implant.batch < 1) field_error("implant", "batch", "must be at least 1");
  if (!(c.implant.lr > 0)) field_error("implant", "lr", "must be positive");
  if (!(c.implant.encoder_lr_factor >= 0)) field_error("implant", "encoder_lr_factor", "must be non-negative");
  for (const auto& t : c.eval.transforms) {
    try {
      t.validate();
    } catch (const ConfigError& e) {
      field_error("eval", "transforms", e.what());
    }
  }
  for (int cut : c.defense.cutoffs) {
    if (std::find(std::begin(kCutoffPercents), std::end(kCutoffPercents), cut) == std::end(kCutoffPercents)) {
      field_error("defense", "cutoffs", fmt::format("{} is not one of 0, 5, 10, 20", cut));
    }
  }
  for (double m : c.defense.finetune_multipliers) {
    if (!(m >= 0)) field_error("defense", "finetune_multipliers", "multipliers must be non-negative");
  }
}

std::vector<ConceptId> ExperimentConfig::binding() const {
  std::vector<std::string> labels = poison.concepts;
  if (labels.empty()) {
    for (std::size_t i = 1; i <= poison.n_triggers; ++i) labels.push_back(fmt::format("concept{}", i));
  }
  auto out = make_binding(labels);
  validate_binding(out, poison.n_triggers);
  return out;
}

std::vector<ConceptId> ExperimentConfig::rebinding() const {
  std::vector<std::string> labels = defense.rebind_concepts;
  if (labels.empty()) {
    for (std::size_t i = 1; i <= poison.n_triggers; ++i) labels.push_back(fmt::format("fresh{}", i));
  }
  auto out = make_binding(labels);
  validate_binding(out, poison.n_triggers);
  return out;
}

OptimConfig optim_config(const ExperimentConfig& c) {
  OptimConfig oc;
  oc.n_triggers = c.poison.n_triggers;
  oc.steps = c.optim.steps;
  oc.batch_size = c.optim.batch_size;
  oc.max_lr = c.optim.max_lr;
  oc.warmup_frac = c.optim.warmup_frac;
  oc.lambda = c.optim.lambda;
  oc.epsilon = c.optim.epsilon;
  oc.trigger_seed = c.optim.trigger_seed;
  oc.proto_seed = c.optim.proto_seed;
  oc.batch_seed = c.optim.batch_seed;
  oc.proto_lr_factor = c.optim.proto_lr_factor;
  oc.temperature = c.optim.temperature;
  oc.clean_anchor_term = c.optim.clean_anchor_term;
  oc.use_psp = c.optim.use_psp;
  oc.use_tpa = c.optim.use_tpa;
  oc.augmentations = c.optim.augmentation;
  oc.augmentation_seed = c.optim.augmentation_seed;
  return oc;
}

std::string serialize_config(const ExperimentConfig& config, bool include_output_dir) {
  ExperimentConfig copy = config;
  std::string out;
  std::string section;
  for (const auto& f : fields(copy)) {
    if (!include_output_dir && std::string_view(f.section) == "run" && std::string_view(f.key) == "output_dir") continue;
    if (section != f.section) {
      out += fmt::format("{}[{}]\n", out.empty() ? "" : "\n", f.section);
      section = f.section;
    }
    out += fmt::format("{} = {}\n", f.key, std::visit(Render{}, f.ptr));
  }
  return out;
}

std::string config_hash(const ExperimentConfig& config) {
  return hex64(fnv1a64(serialize_config(config, false)));
}

void apply_seed_override(ExperimentConfig& config, std::uint64_t seed) {
  config.optim.trigger_seed = mix_seed(seed, 1);
  config.optim.proto_seed = mix_seed(seed, 2);
  config.optim.batch_seed = mix_seed(seed, 3);
  config.optim.augmentation_seed = mix_seed(seed, 4);
  config.poison.seed = mix_seed(seed, 5);
  config.implant.seed = mix_seed(seed, 6);
  config.baseline.blended_seed = mix_seed(seed, 7);
}

}  // namespace mtb
