#include <cstdlib>
#include <fstream>

#include <sys/wait.h>

#include <fmt/format.h>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mtb/cli/config.hpp"
#include "mtb/cli/pipeline.hpp"
#include "mtb/errors.hpp"
#include "mtb/numerics/mtt1.hpp"
#include "support.hpp"

namespace mtb {
namespace {

namespace fs = std::filesystem;

// Small enough to run the whole pipeline in a few seconds.
const char* kSmallConfig = R"(
[run]
method = mtattack

[data]
k_classes = 2
opt_per_class = 40
implant_per_class = 60
test_per_class = 30
extra_per_class = 40
cross_dataset = true

[optim]
steps = 40
batch_size = 16

[poison]
n_triggers = 2
m_per_trigger = 20
concepts = cat,dog

[implant]
epochs = 10

[eval]
transforms = blur:1,quantize:5
plot_samples = 20

[defense]
cutoffs = 0,10
finetune_multipliers = 0.5,2
rebind_concepts = tree,house
)";

struct Shell {
  int code;
  std::string output;
};

Shell run_binary(const std::string& args, const test::TempDir& dir) {
  const fs::path out = dir / "shell_output.txt";
  const std::string cmd = std::string(MTB_BINARY) + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), read_file(out)};
}

std::string strip_first_line(const std::string& text) { return text.substr(text.find('\n') + 1); }

TEST(Config, ParsesBundledConfigs) {
  for (const char* name : {"toy_n4.cfg", "toy_n4_eot.cfg"}) {
    const auto c = load_config(test::source_dir() / "configs" / name);
    EXPECT_EQ(c.poison.n_triggers, 4u);
    EXPECT_EQ(c.poison.m_per_trigger, 200u);
    EXPECT_EQ(c.binding()[3], (ConceptId{4, "boat"}));
    EXPECT_DOUBLE_EQ(c.optim.epsilon, 24.0 / 255.0);
  }
}

TEST(Config, RoundTripsThroughCanonicalText) {
  const auto c = parse_config(kSmallConfig);
  const auto back = parse_config(serialize_config(c), "<serialized>");
  EXPECT_EQ(back, c);
  EXPECT_EQ(serialize_config(back), serialize_config(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, DefaultsFillUnlistedKeys) {
  const auto c = parse_config("[run]\nmethod = sig\n[poison]\nn_triggers = 2\nm_per_trigger = 5\n");
  EXPECT_EQ(c.run.method, Method::sig);
  EXPECT_EQ(c.binding(), make_binding({"concept1", "concept2"}));
  EXPECT_EQ(c.optim.steps, 1000u);
  EXPECT_DOUBLE_EQ(c.optim.max_lr, 0.6);
}

TEST(Config, MissingRequiredFieldNamesIt) {
  try {
    parse_config("[run]\nmethod = mtattack\n[poison]\nm_per_trigger = 5\n", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("n_triggers"), std::string::npos) << e.what();
  }
}

TEST(Config, UnknownAndDuplicateKeysCarryLineNumbers) {
  try {
    parse_config("[run]\nmethod = mtattack\nmethd = sig\n", "a.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("a.cfg:3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("methd"), std::string::npos) << e.what();
  }
  try {
    parse_config("[run]\nmethod = mtattack\n\n# note\nmethod = sig\n", "b.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("b.cfg:5"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("[nope]\n"), ConfigError);
  EXPECT_THROW(parse_config("[optim]\nsteps = many\n"), ConfigError);
}

TEST(Config, CrossFieldValidation) {
  auto c = parse_config(kSmallConfig);
  c.poison.concepts = {"cat", "cat"};
  EXPECT_THROW(validate_config(c), ConfigError);
  c = parse_config(kSmallConfig);
  c.defense.cutoffs = {15};
  EXPECT_THROW(validate_config(c), ConfigError);
  c = parse_config(kSmallConfig);
  c.defense.finetune_multipliers = {3};  // 120 images needed, 80 available
  EXPECT_THROW(validate_config(c), ConfigError);
  c = parse_config(kSmallConfig);
  c.optim.epsilon = 1.5;
  EXPECT_THROW(validate_config(c), ConfigError);
}

TEST(Config, HashIgnoresOutputDirOnly) {
  auto a = parse_config(kSmallConfig);
  auto b = a;
  b.run.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.optim.steps += 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, SeedOverrideTouchesAttackSeedsOnly) {
  const auto base = parse_config(kSmallConfig);
  auto a = base, b = base, c = base;
  apply_seed_override(a, 1);
  apply_seed_override(b, 1);
  apply_seed_override(c, 2);
  EXPECT_EQ(a, b);
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_NE(a.optim.trigger_seed, base.optim.trigger_seed);
  EXPECT_NE(a.poison.seed, base.poison.seed);
  EXPECT_EQ(a.data.seed, base.data.seed);
  EXPECT_EQ(a.encoder.seed, base.encoder.seed);
}

TEST(Cli, MissingFieldExitsWithConfigCode) {
  test::TempDir dir("cli_missing");
  write_file(dir / "bad.cfg", "[run]\nmethod = mtattack\n[poison]\nn_triggers = 2\n");
  const auto r = run_binary("validate " + (dir / "bad.cfg").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("m_per_trigger"), std::string::npos) << r.output;
}

TEST(Cli, ValidatePrintsHash) {
  test::TempDir dir("cli_validate");
  write_file(dir / "ok.cfg", kSmallConfig);
  const auto r = run_binary("validate " + (dir / "ok.cfg").string(), dir);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find(config_hash(parse_config(kSmallConfig))), std::string::npos) << r.output;
  EXPECT_EQ(run_binary("frobnicate", dir).code, 1);
}

TEST(Cli, StageFailureExitsWithStageCode) {
  test::TempDir dir("cli_stage");
  for (const char* sub : {"opt", "implant", "test"}) fs::create_directories(dir / sub);
  std::string cfg = "[run]\nmethod = blended\n[poison]\nn_triggers = 1\nm_per_trigger = 1\n[data]\nsource = ppm\n";
  for (const char* sub : {"opt", "implant", "test"}) cfg += fmt::format("ppm_{}_dir = {}\n", sub, (dir / sub).string());
  cfg += "[defense]\nfinetune_multipliers =\n";
  write_file(dir / "ppm.cfg", cfg);
  const auto r = run_binary("run -q " + (dir / "ppm.cfg").string() + " --out " + (dir / "run").string(), dir);
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("data"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("no images found"), std::string::npos) << r.output;
}

class SmallRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("cli_run");
    summary_ = new RunSummary(run_experiment(parse_config(kSmallConfig), {.output_dir = dir_->path() / "r"}));
  }
  static void TearDownTestSuite() {
    delete summary_;
    delete dir_;
  }
  static fs::path run_dir() { return dir_->path() / "r"; }
  static test::TempDir* dir_;
  static RunSummary* summary_;
};

test::TempDir* SmallRun::dir_ = nullptr;
RunSummary* SmallRun::summary_ = nullptr;

TEST_F(SmallRun, WritesEveryArtifactTaggedWithTheHash) {
  const std::string hash = config_hash(parse_config(kSmallConfig));
  EXPECT_EQ(summary_->config_hash, hash);
  for (const char* f : kRunFiles) EXPECT_TRUE(fs::exists(run_dir() / f)) << f;
  EXPECT_EQ(read_file(run_dir() / "config.lock").substr(0, 16 + 15), "# content_hash " + hash);
  EXPECT_EQ(read_metadata(run_dir() / "triggers.mtt1.meta").at("config_hash"), hash);
  EXPECT_EQ(read_metadata(run_dir() / "victim.mtt1.meta").at("config_hash"), hash);
  for (const char* f : {"metrics.csv", "trace.csv", "plotdata.csv", "summary.txt"}) {
    EXPECT_EQ(read_file(run_dir() / f).substr(0, 16 + 15), "# content_hash " + hash) << f;
  }
  const auto j = nlohmann::json::parse(read_file(run_dir() / "metrics.json"));
  EXPECT_EQ(j.at("config_hash"), hash);
  EXPECT_EQ(j.at("report").at("config_hash"), hash);
  EXPECT_EQ(j.at("transforms").size(), 2u);
  EXPECT_FALSE(j.at("cross_dataset").is_null());
  EXPECT_EQ(j.at("defense").at("detection").at("cutoffs").size(), 2u);
  EXPECT_EQ(j.at("defense").at("finetune").at(1).at("amount"), 80);
  EXPECT_EQ(j.at("defense").at("rebind").at("concepts"), (std::vector<std::string>{"tree", "house"}));
  // config.lock reproduces the config.
  const auto locked = parse_config(strip_first_line(read_file(run_dir() / "config.lock")), "config.lock");
  EXPECT_EQ(config_hash(locked), hash);
}

TEST_F(SmallRun, ResumeReusesTriggersAndVictim) {
  const std::string triggers = read_file(run_dir() / "triggers.mtt1");
  const std::string victim = read_file(run_dir() / "victim.mtt1");
  const auto before = nlohmann::json::parse(read_file(run_dir() / "metrics.json"));
  for (const char* f : {"metrics.json", "metrics.csv", "plotdata.csv", "summary.txt"}) fs::remove(run_dir() / f);
  const auto resumed = run_experiment(parse_config(kSmallConfig), {.output_dir = run_dir(), .resume = true});
  EXPECT_TRUE(resumed.reused_triggers);
  EXPECT_TRUE(resumed.reused_victim);
  EXPECT_EQ(read_file(run_dir() / "triggers.mtt1"), triggers);
  EXPECT_EQ(read_file(run_dir() / "victim.mtt1"), victim);
  auto after = nlohmann::json::parse(read_file(run_dir() / "metrics.json"));
  auto expected = before;
  after.erase("timestamp");
  expected.erase("timestamp");
  EXPECT_EQ(after, expected);
}

TEST_F(SmallRun, ResumeWithChangedConfigStartsOver) {
  auto changed = parse_config(kSmallConfig);
  changed.optim.steps = 41;
  changed.defense.detection = false;
  changed.defense.rebind = false;
  changed.defense.finetune_multipliers.clear();
  const auto r = run_experiment(changed, {.output_dir = dir_->path() / "changed", .resume = true});
  EXPECT_FALSE(r.reused_triggers);
  EXPECT_FALSE(r.reused_victim);
}

TEST_F(SmallRun, CompareTablesCarryExactValues) {
  test::TempDir other("cli_cmp");
  EXPECT_THROW(compare_runs({run_dir()}), ConfigError);
  try {
    compare_runs({run_dir(), other.path()});
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("metrics.json is missing"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(other.path().string()), std::string::npos);
  }
  const auto cmp = compare_runs({run_dir(), run_dir()});
  const auto j = nlohmann::json::parse(read_file(run_dir() / "metrics.json"));
  const auto report = j.at("report");
  const std::string row = fmt::format("r,mtattack,2,20,{},{},{},{},{}", 24.0 / 255.0, report.at("mean_asr").get<double>(),
                                      report.at("mean_tcr").get<double>(), report.at("mean_failed").get<double>(),
                                      report.at("clean_accuracy").get<double>());
  EXPECT_EQ(cmp.csv, "run,method,N,M,epsilon,asr,tcr,failed,clean_acc\n" + row + "\n" + row + "\n");
  EXPECT_NE(cmp.markdown.find("| r | mtattack | 2 | 20 |"), std::string::npos);

  const auto r = run_binary("compare " + run_dir().string() + " " + run_dir().string() + " --out " +
                                (other / "table").string(),
                            other);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_file(other / "table.csv"), cmp.csv);
  EXPECT_EQ(run_binary("compare " + run_dir().string(), other).code, 2);
}

}  // namespace
}  // namespace mtb
