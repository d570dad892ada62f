#include <cmath>

#include <gtest/gtest.h>
#include <spdlog/spdlog.h>

#include "mtb/encoder/encoder.hpp"
#include "mtb/errors.hpp"
#include "mtb/numerics/gradcheck.hpp"
#include "mtb/numerics/mtt1.hpp"
#include "mtb/numerics/rng.hpp"
#include "support.hpp"

namespace mtb {
namespace {

const EncoderParams& small_encoder() {
  static const EncoderParams p = init_encoder(EncoderConfig{});
  return p;
}

double l2(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

TEST(Encoder, SameArgumentsGiveIdenticalSerializations) {
  const auto a = init_encoder(7, 3, 32, 8, 64, 32);
  const auto b = init_encoder(7, 3, 32, 8, 64, 32);
  EXPECT_EQ(encode_mtt1(a.patch_weights), encode_mtt1(b.patch_weights));
  EXPECT_EQ(encode_mtt1(a.mix_weights), encode_mtt1(b.mix_weights));
  const auto c = init_encoder(8, 3, 32, 8, 64, 32);
  EXPECT_NE(encode_mtt1(a.patch_weights), encode_mtt1(c.patch_weights));
}

TEST(Encoder, WeightShapes) {
  const auto p = init_encoder(7, 3, 32, 8, 64, 32);
  EXPECT_EQ(p.patch_weights.shape(), (Shape{64, 192}));
  EXPECT_EQ(p.mix_weights.shape(), (Shape{32, 64}));
}

TEST(Encoder, SingleDimensionEmbeddingWorks) {
  const auto p = init_encoder(7, 3, 16, 4, 8, 1);
  const Tensor v = test::random_tensor<float>(p.config.image_shape(), 3);
  const auto e = encode_ex(p, v);
  ASSERT_EQ(e.embedding.size(), 1u);
  EXPECT_FALSE(e.degenerate);
  EXPECT_NEAR(std::abs(e.embedding[0]), 1.0f, 1e-6);
}

TEST(Encoder, WeightMeanWithinThreeStandardErrors) {
  // Uniform on [-a, a] has sd a / sqrt(3); over 10^4 entries the mean has sd / 100.
  const auto p = init_encoder(7, 3, 32, 8, 64, 32);
  const double a = 1.0 / std::sqrt(192.0);
  const double sigma = a / std::sqrt(3.0);
  double sum = 0;
  for (std::size_t i = 0; i < 10000; ++i) sum += p.patch_weights[i];
  EXPECT_LT(std::abs(sum / 10000), 3 * sigma / 100);
  for (float w : p.patch_weights) ASSERT_LE(std::abs(w), a);
  const double a_mix = 1.0 / std::sqrt(64.0);
  for (float w : p.mix_weights) ASSERT_LE(std::abs(w), a_mix);
}

TEST(Encoder, RejectsBadConfiguration) {
  EXPECT_THROW(init_encoder(7, 3, 30, 8, 64, 32), ConfigError);
  EXPECT_THROW(init_encoder(7, 3, 16, 4, 0, 32), ConfigError);
  EXPECT_THROW(init_encoder(7, 0, 16, 4, 8, 32), ConfigError);
}

TEST(Encoder, EmbeddingsAreUnitNorm) {
  const auto& p = small_encoder();
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Tensor e = encode(p, test::random_tensor<float>(p.config.image_shape(), s));
    ASSERT_EQ(e.size(), p.config.embed_dim);
    EXPECT_NEAR(l2(e.values()), 1.0, 1e-5);
  }
}

TEST(Encoder, ZeroImageIsDegenerate) {
  const auto& p = small_encoder();
  const auto e = encode_ex(p, Tensor(p.config.image_shape()));
  EXPECT_TRUE(e.degenerate);
  for (float x : e.embedding) EXPECT_EQ(x, 0.0f);
}

TEST(Encoder, PureFunction) {
  const auto& p = small_encoder();
  const Tensor v = test::random_tensor<float>(p.config.image_shape(), 4);
  EXPECT_TRUE(bitwise_equal(encode(p, v), encode(p, v)));
}

TEST(Encoder, ShapeMismatchNamesBothShapes) {
  const auto& p = small_encoder();
  try {
    encode(p, Tensor({3, 8, 8}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find(shape_to_string(p.config.image_shape())), std::string::npos) << what;
    EXPECT_NE(what.find(shape_to_string({3, 8, 8})), std::string::npos) << what;
  }
}

TEST(Encoder, BudgetPerturbationChangesEmbedding) {
  const auto& p = small_encoder();
  const double eps = 24.0 / 255.0;
  Rng rng(99);
  int changed = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Tensor v = test::random_tensor<float>(p.config.image_shape(), 1000 + t, 0.1, 0.9);
    Tensor w = v;
    for (auto& x : w) x += static_cast<float>(rng.uniform(-eps, eps));
    w[rng.below(w.size())] = v[0] + static_cast<float>(eps);
    if (!bitwise_equal(encode(p, v), encode(p, w))) ++changed;
  }
  EXPECT_GE(changed, static_cast<int>(std::ceil(0.99 * trials)));
}

TEST(EncoderVjp, ZeroUpstreamGivesZeroGradient) {
  const auto& p = small_encoder();
  const Tensor v = test::random_tensor<float>(p.config.image_shape(), 5);
  const Tensor g = encode_vjp(p, v, Tensor({p.config.embed_dim}));
  for (float x : g) EXPECT_EQ(x, 0.0f);
}

TEST(EncoderVjp, MatchesFiniteDifferencesOnTwentyPairs) {
  const auto p = init_encoder(EncoderConfig{.seed = 3, .image_side = 8, .patch_size = 4, .hidden_dim = 16,
                                            .embed_dim = 8});
  for (std::uint64_t pair = 0; pair < 20; ++pair) {
    const TensorD v = test::random_tensor<double>(p.config.image_shape(), 200 + pair);
    const TensorD u = test::random_tensor<double>({p.config.embed_dim}, 300 + pair, -1, 1);
    const TensorD analytic = encode_vjp(p, v, u);
    const auto f = [&](const TensorD& x) {
      const TensorD e = encode(p, x);
      double s = 0;
      for (std::size_t i = 0; i < e.size(); ++i) s += u[i] * e[i];
      return s;
    };
    const auto cmp = compare_gradients(analytic, finite_diff_grad<double>(f, v, 1e-6));
    EXPECT_LT(cmp.max_relative_error, 1e-3) << "pair " << pair << " index " << cmp.worst_index;
    EXPECT_GT(cmp.compared, v.size() / 2);
  }
}

TEST(EncoderVjp, FloatPathAgreesWithDouble) {
  const auto& p = small_encoder();
  const Tensor v = test::random_tensor<float>(p.config.image_shape(), 8);
  const Tensor u = test::random_tensor<float>({p.config.embed_dim}, 9, -1, 1);
  const Tensor gf = encode_vjp(p, v, u);
  const TensorD gd = encode_vjp(p, v.cast<double>(), u.cast<double>());
  EXPECT_LT(compare_gradients(gd, gf.cast<double>(), 1e-4).max_relative_error, 1e-3);
}

TEST(EncoderVjp, LinearInUpstream) {
  const auto& p = small_encoder();
  const Tensor v = test::random_tensor<float>(p.config.image_shape(), 6);
  const Tensor u1 = test::random_tensor<float>({p.config.embed_dim}, 10, -1, 1);
  const Tensor u2 = test::random_tensor<float>({p.config.embed_dim}, 11, -1, 1);
  Tensor u12 = u1;
  for (std::size_t i = 0; i < u12.size(); ++i) u12[i] += u2[i];
  const Tensor g1 = encode_vjp(p, v, u1), g2 = encode_vjp(p, v, u2), g12 = encode_vjp(p, v, u12);
  for (std::size_t i = 0; i < g12.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-5);
}

TEST(EncoderVjp, WeightGradientMatchesFiniteDifferences) {
  auto p = init_encoder(EncoderConfig{.seed = 5, .image_side = 8, .patch_size = 4, .hidden_dim = 6, .embed_dim = 4});
  const TensorD v = test::random_tensor<double>(p.config.image_shape(), 21);
  const TensorD u = test::random_tensor<double>({4}, 22, -1, 1);
  const auto tape = encode_forward(p, v);
  const auto grad = encode_weight_backward(p, tape, u);
  const auto objective = [&](const EncoderParams& q) {
    const TensorD e = encode(q, v);
    double s = 0;
    for (std::size_t i = 0; i < 4; ++i) s += u[i] * e[i];
    return s;
  };
  // Weights are stored in float, so probe with a step float can resolve.
  const auto f_mix = [&](const TensorD& w) {
    EncoderParams q = p;
    q.mix_weights = w.cast<float>();
    return objective(q);
  };
  const auto num = finite_diff_grad<double>(f_mix, p.mix_weights.cast<double>(), 1e-2);
  EXPECT_LT(compare_gradients(grad.mix_weights, num, 1e-4).max_relative_error, 1e-2);
}

TEST(Encoder, EmpiricalLipschitzIsFinite) {
  const auto& p = small_encoder();
  const double c = empirical_lipschitz(p, 1, 50, 24.0 / 255.0);
  spdlog::info("empirical Lipschitz constant for default encoder: {:.4f}", c);
  EXPECT_TRUE(std::isfinite(c));
  EXPECT_GT(c, 0.0);
  Rng rng(77);
  for (int t = 0; t < 20; ++t) {
    const Tensor v = test::random_tensor<float>(p.config.image_shape(), 500 + t, 0.1, 0.9);
    Tensor w = v;
    double dn = 0;
    for (auto& x : w) {
      const double d = rng.uniform(-0.01, 0.01);
      x += static_cast<float>(d);
      dn += d * d;
    }
    const Tensor a = encode(p, v), b = encode(p, w);
    double en = 0;
    for (std::size_t i = 0; i < a.size(); ++i) en += (a[i] - b[i]) * (a[i] - b[i]);
    EXPECT_LE(std::sqrt(en), 10 * c * std::sqrt(dn));
  }
}

TEST(Encoder, SaveLoadRoundTrip) {
  const auto& p = small_encoder();
  test::TempDir dir("encoder");
  save_encoder(p, dir.path(), "enc");
  const auto q = load_encoder(dir.path(), "enc");
  EXPECT_EQ(q.config, p.config);
  EXPECT_TRUE(bitwise_equal(q.patch_weights, p.patch_weights));
  EXPECT_TRUE(bitwise_equal(q.mix_weights, p.mix_weights));
  EXPECT_THROW(load_encoder(dir.path(), "missing"), IoError);
}

TEST(Encoder, BatchRowsMatchSingleEncodes) {
  const auto& p = small_encoder();
  std::vector<Tensor> images;
  for (std::uint64_t s = 0; s < 5; ++s) images.push_back(test::random_tensor<float>(p.config.image_shape(), s));
  const Tensor batch = encode_batch(p, images);
  ASSERT_EQ(batch.shape(), (Shape{5, p.config.embed_dim}));
  for (std::size_t i = 0; i < 5; ++i) {
    const Tensor e = encode(p, images[i]);
    for (std::size_t j = 0; j < e.size(); ++j) EXPECT_EQ(batch.row(i)[j], e[j]);
  }
}

}  // namespace
}  // namespace mtb
