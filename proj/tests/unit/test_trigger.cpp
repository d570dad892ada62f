#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "mtb/encoder/encoder.hpp"
#include "mtb/errors.hpp"
#include "mtb/numerics/gradcheck.hpp"
#include "mtb/numerics/kernels.hpp"
#include "mtb/poison/synth.hpp"
#include "mtb/trigger/bank.hpp"
#include "mtb/trigger/baselines.hpp"
#include "mtb/trigger/geometry.hpp"
#include "mtb/trigger/losses.hpp"
#include "mtb/trigger/objective.hpp"
#include "mtb/trigger/optimizer.hpp"
#include "support.hpp"

namespace mtb {
namespace {

constexpr double kEps = 24.0 / 255.0;

TensorD basis(std::size_t rows, std::size_t d, const std::vector<std::size_t>& hot) {
  TensorD t({rows, d});
  for (std::size_t r = 0; r < rows; ++r) t[r * d + hot[r]] = 1.0;
  return t;
}

const EncoderParams& toy_encoder() {
  static const EncoderParams p = init_encoder(EncoderConfig{.seed = 7, .image_side = 8, .patch_size = 4,
                                                            .hidden_dim = 16, .embed_dim = 8});
  return p;
}

const CleanDataset& toy_opt_set() {
  static const CleanDataset d = synth_dataset(2, 32, toy_encoder().config.image_shape(), 101, DatasetTag::opt);
  return d;
}

OptimConfig toy_optim(std::size_t n, std::size_t steps) {
  OptimConfig c;
  c.n_triggers = n;
  c.steps = steps;
  c.batch_size = 16;
  return c;
}

TEST(PspLoss, EqualSimilaritiesGiveLn2) {
  const TensorD embeds({1, 1, 2}, std::vector<double>{1, 0});
  const TensorD clean({1, 2}, std::vector<double>{1, 0});
  const TensorD protos({2, 2}, std::vector<double>{0, 1, 0, -1});
  const auto r = psp_loss(embeds, clean, protos, PspOptions{.clean_anchor_term = false});
  EXPECT_NEAR(r.loss, std::numbers::ln2, 1e-12);
  EXPECT_TRUE(r.grad_clean.empty() || std::all_of(r.grad_clean.begin(), r.grad_clean.end(),
                                                   [](double g) { return g == 0.0; }));
}

TEST(PspLoss, EmbeddingOnItsPrototypeClosedForm) {
  for (std::size_t n : {1u, 3u}) {
    const std::size_t d = n + 1;
    std::vector<std::size_t> hot_e, hot_p;
    for (std::size_t i = 1; i <= n; ++i) hot_e.push_back(i);
    for (std::size_t k = 0; k <= n; ++k) hot_p.push_back(k);
    const TensorD embeds = basis(n, d, hot_e).reshaped({n, 1, d});
    const TensorD clean = basis(1, d, {0});
    const TensorD protos = basis(n + 1, d, hot_p);
    const auto r = psp_loss(embeds, clean, protos, PspOptions{.clean_anchor_term = false});
    const double per_trigger = -std::log(std::exp(1.0) / (std::exp(1.0) + static_cast<double>(n)));
    EXPECT_NEAR(per_trigger, std::log1p(static_cast<double>(n) / std::exp(1.0)), 1e-15);
    EXPECT_NEAR(r.loss, static_cast<double>(n) * per_trigger, 1e-12) << "N=" << n;
    // The anchor adds the same term for a clean embedding on p_0.
    const auto anchored = psp_loss(embeds, clean, protos, PspOptions{.clean_anchor_term = true});
    EXPECT_NEAR(anchored.loss, static_cast<double>(n + 1) * per_trigger, 1e-12);
  }
}

TEST(PspLoss, GradientsMatchFiniteDifferences) {
  const std::size_t n = 2, b = 3, d = 5;
  const TensorD embeds = test::random_tensor<double>({n, b, d}, 1, -1, 1);
  const TensorD clean = test::random_tensor<double>({b, d}, 2, -1, 1);
  const TensorD protos = test::random_tensor<double>({n + 1, d}, 3, -1, 1);
  for (double temperature : {1.0, 0.3}) {
    const PspOptions opt{.clean_anchor_term = true, .temperature = temperature};
    const auto r = psp_loss(embeds, clean, protos, opt);
    const auto fe = [&](const TensorD& x) { return psp_loss(x, clean, protos, opt).loss; };
    const auto fc = [&](const TensorD& x) { return psp_loss(embeds, x, protos, opt).loss; };
    const auto fp = [&](const TensorD& x) { return psp_loss(embeds, clean, x, opt).loss; };
    EXPECT_LT(compare_gradients(r.grad_embeds, finite_diff_grad<double>(fe, embeds, 1e-6)).max_relative_error, 1e-3);
    EXPECT_LT(compare_gradients(r.grad_clean, finite_diff_grad<double>(fc, clean, 1e-6)).max_relative_error, 1e-3);
    EXPECT_LT(compare_gradients(r.grad_protos, finite_diff_grad<double>(fp, protos, 1e-6)).max_relative_error, 1e-3);
  }
}

TEST(PspLoss, RejectsMismatchedPrototypes) {
  const TensorD embeds({2, 1, 3});
  const TensorD clean({1, 3});
  EXPECT_THROW(psp_loss(embeds, clean, TensorD({2, 3})), ShapeError);
  EXPECT_THROW(psp_loss(embeds, clean, TensorD({3, 4})), ShapeError);
}

TEST(TpaLoss, PerfectAnchoringIsZero) {
  const TensorD protos = test::random_tensor<double>({3, 4}, 5);
  TensorD embeds({2, 1, 4});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) embeds[i * 4 + j] = protos[(i + 1) * 4 + j];
  const auto r = tpa_loss(embeds, protos);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad_embeds) EXPECT_EQ(g, 0.0);
  for (double g : r.grad_protos) EXPECT_EQ(g, 0.0);
}

TEST(TpaLoss, UnitDifference) {
  const TensorD embeds({1, 1, 3}, std::vector<double>{1, 0, 0});
  const TensorD protos({2, 3}, std::vector<double>{5, 5, 5, 0, 0, 0});
  const auto r = tpa_loss(embeds, protos);
  EXPECT_DOUBLE_EQ(r.loss, 1.0);
  EXPECT_DOUBLE_EQ(r.grad_embeds[0], 2.0);
  EXPECT_DOUBLE_EQ(r.grad_protos[3], -2.0);
  EXPECT_DOUBLE_EQ(r.grad_protos[0], 0.0);
}

TEST(TpaLoss, GradientsMatchFiniteDifferences) {
  const TensorD embeds = test::random_tensor<double>({2, 3, 4}, 6, -1, 1);
  const TensorD protos = test::random_tensor<double>({3, 4}, 7, -1, 1);
  const auto r = tpa_loss(embeds, protos);
  const auto fe = [&](const TensorD& x) { return tpa_loss(x, protos).loss; };
  const auto fp = [&](const TensorD& x) { return tpa_loss(embeds, x).loss; };
  EXPECT_LT(compare_gradients(r.grad_embeds, finite_diff_grad<double>(fe, embeds, 1e-6)).max_relative_error, 1e-3);
  EXPECT_LT(compare_gradients(r.grad_protos, finite_diff_grad<double>(fp, protos, 1e-6)).max_relative_error, 1e-3);
}

TEST(SeparationLoss, GradientMatchesFiniteDifferences) {
  const TensorD embeds = test::random_tensor<double>({2, 3, 4}, 8, -1, 1);
  const TensorD clean = test::random_tensor<double>({3, 4}, 9, -1, 1);
  const auto r = separation_loss(embeds, clean);
  EXPECT_LT(r.loss, 0.0);
  const auto fe = [&](const TensorD& x) { return separation_loss(x, clean).loss; };
  EXPECT_LT(compare_gradients(r.grad_embeds, finite_diff_grad<double>(fe, embeds, 1e-6)).max_relative_error, 1e-3);
}

TEST(ProjectLinf, InsideBallUnchanged) {
  const Tensor d = test::random_tensor<float>({3, 4, 4}, 1, -0.05, 0.05);
  EXPECT_TRUE(bitwise_equal(project_linf(d, kEps), d));
}

TEST(ProjectLinf, ClampsToBudget) {
  const Tensor d({3}, std::vector<float>{0.5f, -0.5f, 0.01f});
  const Tensor p = project_linf(d, kEps);
  EXPECT_EQ(p[0], budget_bound(kEps));
  EXPECT_EQ(p[1], -budget_bound(kEps));
  EXPECT_EQ(p[2], 0.01f);
  EXPECT_LE(static_cast<double>(p[0]), kEps);
  EXPECT_NEAR(static_cast<double>(p[0]), kEps, 1e-8);
}

TEST(ProjectLinf, Idempotent) {
  const Tensor d = test::random_tensor<float>({3, 4, 4}, 2, -1, 1);
  const Tensor once = project_linf(d, kEps);
  EXPECT_TRUE(bitwise_equal(project_linf(once, kEps), once));
}

TEST(LrSchedule, WarmupEndReachesMax) {
  EXPECT_DOUBLE_EQ(lr_at(30, 1000, 0.6, 0.03), 0.6);
}

TEST(LrSchedule, StartsAtZero) {
  EXPECT_EQ(lr_at(0, 1000, 0.6, 0.03), 0.6 * (0.0 / 30.0));
  EXPECT_NEAR(lr_at(15, 1000, 0.6, 0.03), 0.3, 1e-15);
}

TEST(LrSchedule, FinalStepWithinOneIncrement) {
  const double last = lr_at(999, 1000, 0.6, 0.03);
  const double before = lr_at(998, 1000, 0.6, 0.03);
  EXPECT_GE(last, 0.0);
  EXPECT_LE(last, before - last);
}

TEST(LrSchedule, BoundedAndRejectsOutOfRange) {
  for (std::size_t s = 0; s < 1000; ++s) {
    const double lr = lr_at(s, 1000, 0.6, 0.03);
    ASSERT_GE(lr, 0.0);
    ASSERT_LE(lr, 0.6);
  }
  EXPECT_THROW(lr_at(1000, 1000, 0.6, 0.03), ConfigError);
  EXPECT_DOUBLE_EQ(lr_at(0, 10, 0.6, 0.0), 0.6);
}

TEST(OptimConfig, RejectsInvalidValues) {
  OptimConfig c;
  EXPECT_NO_THROW(c.validate());
  c.warmup_frac = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lambda = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epsilon = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.n_triggers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Optimizer, SingleTriggerDescends) {
  const auto r = optimize_triggers(toy_optim(1, 200), toy_opt_set(), toy_encoder());
  ASSERT_EQ(r.trace.size(), 201u);
  EXPECT_EQ(r.trace.back().step, 200u);
  EXPECT_LT(r.trace.back().total, r.trace.front().total);
}

TEST(Optimizer, BudgetHoldsAfterEveryStep) {
  std::size_t calls = 0;
  const auto observer = [&](std::size_t step, const TriggerBank& bank, const PrototypeBank&) {
    ++calls;
    EXPECT_EQ(step, calls);
    ASSERT_LE(bank.max_abs(), kEps) << "step " << step;
  };
  optimize_triggers(toy_optim(3, 60), toy_opt_set(), toy_encoder(), observer);
  EXPECT_EQ(calls, 60u);
  calls = 0;
  baseline_separation_only(toy_optim(3, 60), toy_opt_set(), toy_encoder(), observer);
  EXPECT_EQ(calls, 60u);
}

TEST(Optimizer, Deterministic) {
  const auto a = optimize_triggers(toy_optim(2, 40), toy_opt_set(), toy_encoder());
  const auto b = optimize_triggers(toy_optim(2, 40), toy_opt_set(), toy_encoder());
  ASSERT_EQ(a.bank.size(), 2u);
  for (std::size_t i = 1; i <= 2; ++i) EXPECT_TRUE(bitwise_equal(a.bank.delta(i), b.bank.delta(i)));
  EXPECT_TRUE(bitwise_equal(a.protos.protos, b.protos.protos));
}

TEST(Optimizer, IndexEquivariance) {
  const std::vector<std::uint64_t> ts = {101, 202, 303}, ps = {404, 505, 606};
  const std::vector<std::size_t> perm = {2, 0, 1};  // position i runs the seeds of trigger perm[i]
  OptimConfig base = toy_optim(3, 30);
  base.trigger_seeds = ts;
  base.proto_seeds = ps;
  OptimConfig permuted = base;
  for (std::size_t i = 0; i < 3; ++i) {
    permuted.trigger_seeds[i] = ts[perm[i]];
    permuted.proto_seeds[i] = ps[perm[i]];
  }
  const auto a = optimize_triggers(base, toy_opt_set(), toy_encoder());
  const auto b = optimize_triggers(permuted, toy_opt_set(), toy_encoder());
  const std::size_t d = a.protos.dim();
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(bitwise_equal(b.bank.delta(i + 1), a.bank.delta(perm[i] + 1))) << "trigger " << i + 1;
    for (std::size_t j = 0; j < d; ++j) {
      ASSERT_EQ(b.protos.protos[(i + 1) * d + j], a.protos.protos[(perm[i] + 1) * d + j]);
    }
  }
  for (std::size_t j = 0; j < d; ++j) ASSERT_EQ(b.protos.protos[j], a.protos.protos[j]);
}

TEST(Optimizer, InitialStateMatchesRun) {
  const auto cfg = toy_optim(2, 5);
  const auto r = optimize_triggers(cfg, toy_opt_set(), toy_encoder());
  const auto init = initial_state(cfg, toy_opt_set(), toy_encoder(), true);
  EXPECT_EQ(init.bank, r.initial_bank);
  EXPECT_EQ(init.protos, r.initial_protos);
  EXPECT_LE(init.bank.max_abs(), kEps);
}

TEST(Optimizer, TraceCsvLayout) {
  const std::vector<TraceRecord> trace = {{0, 0.0, 1.5, 0.25, 1.50025}, {1, 0.5, 1.0, 0.5, 1.0005}};
  const std::string csv = trace_csv(trace);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,lr,psp,tpa,total");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Baselines, BlendedPeaksAtBudget) {
  const Shape shape = {3, 16, 16};
  const auto bank = baseline_blended(4, kEps, 29, shape);
  ASSERT_EQ(bank.size(), 4u);
  for (std::size_t i = 1; i <= 4; ++i) {
    float peak = 0;
    for (float v : bank.delta(i)) peak = std::max(peak, std::abs(v));
    EXPECT_EQ(peak, budget_bound(kEps));
  }
  EXPECT_NO_THROW(bank.validate());
}

TEST(Baselines, BlendedSeedsDiffer) {
  const Shape shape = {3, 16, 16};
  const auto a = baseline_blended(1, kEps, 1, shape);
  const auto b = baseline_blended(1, kEps, 2, shape);
  double dist = 0;
  for (std::size_t j = 0; j < a.delta(1).size(); ++j) {
    const double diff = a.delta(1)[j] - b.delta(1)[j];
    dist += diff * diff;
  }
  EXPECT_GT(dist, 0.0);
}

TEST(Baselines, BlendedPairsAreDissimilar) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto bank = baseline_blended(2, kEps, seed, {3, 16, 16});
    const auto c = cosine_similarity<float>(bank.delta(1).values(), bank.delta(2).values());
    EXPECT_LT(c.value, 0.5f) << "seed " << seed;
  }
}

TEST(Baselines, SigMatchesPhaseOracle) {
  const std::size_t n = 4, width = 16;
  const double freq = 6;
  const auto bank = baseline_sig(n, kEps, freq, {3, 8, width});
  for (std::size_t k = 0; k < n; ++k) {
    const double phase = 2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    std::vector<double> wave(width);
    double peak = 0;
    for (std::size_t col = 0; col < width; ++col) {
      wave[col] = std::sin(2 * std::numbers::pi * freq * static_cast<double>(col) / width + phase);
      peak = std::max(peak, std::abs(wave[col]));
    }
    const Tensor& d = bank.delta(k + 1);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t row = 0; row < 8; ++row)
        for (std::size_t col = 0; col < width; ++col) {
          ASSERT_NEAR(d[(c * 8 + row) * width + col], kEps * wave[col] / peak, 1e-6) << k << " " << col;
        }
    EXPECT_LE(bank.max_abs(), kEps);
    EXPECT_NEAR(bank.max_abs(), kEps, 1e-7);
  }
}

TEST(Baselines, SigPairIsHalfPeriodShift) {
  const auto bank = baseline_sig(2, kEps, 6, {3, 16, 16});
  for (std::size_t j = 0; j < bank.delta(1).size(); ++j) EXPECT_NEAR(bank.delta(2)[j], -bank.delta(1)[j], 1e-7);
}

TEST(Baselines, SeparationOnlyMovesAwayFromClean) {
  const auto r = baseline_separation_only(toy_optim(2, 80), toy_opt_set(), toy_encoder());
  EXPECT_TRUE(r.protos.protos.empty());
  const auto& images = toy_opt_set().images;
  const Tensor clean = encode_batch(toy_encoder(), images);
  const auto mean_distance = [&](const TriggerBank& bank) {
    const Tensor t = triggered_embeddings(toy_encoder(), bank, images);
    const std::size_t b = images.size(), d = clean.extent(1);
    double s = 0;
    for (std::size_t i = 0; i < bank.size(); ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = t[(i * b + j) * d + k] - clean[j * d + k];
          s += diff * diff;
        }
    return s / static_cast<double>(bank.size() * b);
  };
  EXPECT_GT(mean_distance(r.bank), mean_distance(r.initial_bank));
}

TEST(Geometry, AnglesAndDistances) {
  const Tensor means({3, 2}, std::vector<float>{1, 0, 0, 1, -1, 0});
  EXPECT_NEAR(min_pairwise_angle(means), std::numbers::pi / 2, 1e-6);
  EXPECT_THROW(min_pairwise_angle(Tensor({1, 2})), ConfigError);
  const Tensor embeds({2, 2, 2}, std::vector<float>{1, 0, 3, 0, 0, 1, 0, 3});
  const Tensor m = class_means(embeds);
  EXPECT_EQ(m[0], 2.0f);
  EXPECT_EQ(m[3], 2.0f);
  const PrototypeBank protos{Tensor({3, 2}, std::vector<float>{0, 0, 1, 0, 0, 1})};
  EXPECT_NEAR(mean_distance_to_prototype(embeds, protos), 1.0, 1e-6);
}

TEST(Bank, ValidateAndAccess) {
  TriggerBank bank{{Tensor({1, 2, 2}), Tensor({1, 2, 2})}, kEps};
  EXPECT_NO_THROW(bank.validate());
  EXPECT_THROW(bank.delta(0), ConfigError);
  EXPECT_THROW(bank.delta(3), ConfigError);
  bank.deltas[1][0] = 0.5f;
  EXPECT_THROW(bank.validate(), NumericError);
  bank.deltas[1] = Tensor({1, 2, 3});
  EXPECT_THROW(bank.validate(), ShapeError);
  EXPECT_THROW(TriggerBank{}.validate(), ConfigError);
}

TEST(Bank, SaveLoadRoundTrip) {
  test::TempDir dir("bank");
  const auto bank = baseline_blended(3, kEps, 4, {3, 8, 8});
  save_trigger_bank(bank, dir / "t.mtt1", {{"config_hash", "abc"}});
  const auto back = load_trigger_bank(dir / "t.mtt1");
  EXPECT_EQ(back, bank);
  EXPECT_EQ(read_metadata(sidecar_path(dir / "t.mtt1")).at("config_hash"), "abc");
  const PrototypeBank protos{test::random_tensor<float>({4, 8}, 3)};
  save_prototypes(protos, dir / "p.mtt1");
  EXPECT_EQ(load_prototypes(dir / "p.mtt1"), protos);
}

double pixel_objective(const EncoderParams& enc, const std::vector<TensorD>& batch, const std::vector<TensorD>& deltas,
                       const TensorD& protos, const ObjectiveConfig& cfg) {
  return trigger_objective(enc, batch, deltas, protos, cfg).total;
}

void check_objective_gradient(const ObjectiveConfig& cfg, std::uint64_t seed) {
  const auto& enc = toy_encoder();
  const Shape shape = enc.config.image_shape();
  std::vector<TensorD> batch = {test::random_tensor<double>(shape, seed, 0.2, 0.8),
                                test::random_tensor<double>(shape, seed + 1, 0.2, 0.8)};
  std::vector<TensorD> deltas = {test::random_tensor<double>(shape, seed + 2, -0.05, 0.05),
                                 test::random_tensor<double>(shape, seed + 3, -0.05, 0.05)};
  const TensorD protos = test::random_tensor<double>({3, enc.config.embed_dim}, seed + 4, -1, 1);
  const auto r = trigger_objective(enc, batch, deltas, protos, cfg);
  Rng rng(seed);
  const double h = 1e-6;
  for (int probe = 0; probe < 10; ++probe) {
    const std::size_t t = rng.below(2);
    const std::size_t px = rng.below(deltas[t].size());
    const double orig = deltas[t][px];
    deltas[t][px] = orig + h;
    const double up = pixel_objective(enc, batch, deltas, protos, cfg);
    deltas[t][px] = orig - h;
    const double down = pixel_objective(enc, batch, deltas, protos, cfg);
    deltas[t][px] = orig;
    const double numeric = (up - down) / (2 * h);
    const double analytic = r.grad_deltas[t][px];
    const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    EXPECT_LT(std::abs(numeric - analytic) / scale, 1e-3) << "probe " << probe << " trigger " << t << " px " << px;
  }
  if (cfg.kind == ObjectiveKind::prototype) {
    const auto fp = [&](const TensorD& p) { return pixel_objective(enc, batch, deltas, p, cfg); };
    EXPECT_LT(compare_gradients(r.grad_protos, finite_diff_grad<double>(fp, protos, 1e-6)).max_relative_error, 1e-3);
  }
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  check_objective_gradient(ObjectiveConfig{}, 40);
}

TEST(Objective, GradientWithoutAnchorOrTpa) {
  ObjectiveConfig cfg;
  cfg.use_tpa = false;
  cfg.psp.clean_anchor_term = false;
  check_objective_gradient(cfg, 50);
}

TEST(Objective, GradientThroughBlurAugmentation) {
  ObjectiveConfig cfg;
  cfg.augmentation = blur_spec(1.0);
  check_objective_gradient(cfg, 60);
}

TEST(Objective, GradientThroughCropAugmentation) {
  ObjectiveConfig cfg;
  cfg.augmentation = crop_spec(0.75, 3);
  check_objective_gradient(cfg, 70);
}

TEST(Objective, SeparationGradient) {
  ObjectiveConfig cfg;
  cfg.kind = ObjectiveKind::separation;
  check_objective_gradient(cfg, 80);
}

TEST(Objective, NoTriggersIsConfigError) {
  const auto& enc = toy_encoder();
  const std::vector<Tensor> batch = {Tensor(enc.config.image_shape(), 0.5f)};
  EXPECT_THROW(trigger_objective<float>(enc, batch, {}, Tensor({1, 8}), ObjectiveConfig{}), ConfigError);
}

}  // namespace
}  // namespace mtb
