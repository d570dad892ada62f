#include <gtest/gtest.h>

#include "mtb/encoder/encoder.hpp"
#include "mtb/errors.hpp"
#include "mtb/numerics/mtt1.hpp"
#include "mtb/poison/poison_set.hpp"
#include "mtb/poison/synth.hpp"
#include "mtb/trigger/optimizer.hpp"
#include "mtb/victim/victim.hpp"
#include "support.hpp"

namespace mtb {
namespace {

// K=2 benign classes, N=2 optimized triggers.
struct Toy {
  EncoderParams encoder = init_encoder(EncoderConfig{});
  CleanDataset opt, clean, extra;
  TriggerBank bank;
  PoisonedDataset poison;
  std::vector<ConceptId> binding = make_binding({"cat", "dog"});

  Toy() {
    const Shape shape = encoder.config.image_shape();
    opt = synth_dataset(2, 100, shape, 101, DatasetTag::opt);
    clean = synth_dataset(2, 100, shape, 101, DatasetTag::implant);
    extra = synth_dataset(2, 100, shape, 101, DatasetTag::implant, SynthOptions{.offset = 200});
    OptimConfig cfg;
    cfg.n_triggers = 2;
    cfg.steps = 300;
    bank = optimize_triggers(cfg, opt, encoder).bank;
    poison = build_poison_set(bank, clean, binding, 50, 23);
  }
};

const Toy& toy() {
  static const Toy t;
  return t;
}

ImplantOptions options(std::size_t epochs) {
  ImplantOptions o;
  o.epochs = epochs;
  return o;
}

TEST(Victim, LayoutOfClasses) {
  const auto v = make_victim(toy().encoder, 4, 3);
  EXPECT_EQ(v.num_classes(), 7u);
  EXPECT_EQ(v.concept_class(1), 4);
  EXPECT_EQ(v.concept_class(3), 6);
  EXPECT_EQ(v.head_weights.shape(), (Shape{7, toy().encoder.config.embed_dim}));
  EXPECT_THROW(make_victim(toy().encoder, 0, 1), ConfigError);
  EXPECT_THROW(make_victim(toy().encoder, 2, 0), ConfigError);
}

TEST(Victim, ZeroEpochsLeavesVictimUnchanged) {
  const auto v = make_victim(toy().encoder, 2, 2);
  const auto r = implant(v, toy().clean, toy().poison, options(0));
  EXPECT_EQ(victim_hash(r.victim), victim_hash(v));
  EXPECT_TRUE(bitwise_equal(r.victim.head_weights, v.head_weights));
  EXPECT_TRUE(r.epoch_loss.empty());
}

TEST(Victim, ImplantReachesLowLossOnSeparableToy) {
  const auto r = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(50));
  ASSERT_EQ(r.epoch_loss.size(), 50u);
  EXPECT_LT(r.epoch_loss.back(), 0.1);
  for (const auto& e : toy().poison.entries) {
    EXPECT_EQ(infer(r.victim, e.image).label, r.victim.concept_class(e.trigger_index));
  }
}

TEST(Victim, ImplantIsDeterministic) {
  const auto a = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(5));
  const auto b = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(5));
  EXPECT_TRUE(bitwise_equal(a.victim.head_weights, b.victim.head_weights));
  EXPECT_TRUE(bitwise_equal(a.victim.head_bias, b.victim.head_bias));
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

TEST(Victim, ZeroHeadPredictsClassZero) {
  const auto v = make_victim(toy().encoder, 2, 2);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(infer(v, toy().clean.images[i]).label, 0);
}

TEST(Victim, InferIsPure) {
  const auto r = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(3));
  const auto a = infer(r.victim, toy().poison.entries[0].image);
  const auto b = infer(r.victim, toy().poison.entries[0].image);
  EXPECT_EQ(a.label, b.label);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_THROW(infer(r.victim, Tensor({3, 8, 8})), ShapeError);
}

TEST(Victim, BindingMismatchIsConfigError) {
  auto v = make_victim(toy().encoder, 2, 2);
  v.binding = make_binding({"tree", "house"});
  EXPECT_THROW(implant(v, toy().clean, toy().poison, options(1)), ConfigError);
  const auto narrow = make_victim(toy().encoder, 2, 1);
  EXPECT_THROW(implant(narrow, toy().clean, toy().poison, options(1)), ConfigError);
  const auto few_benign = make_victim(toy().encoder, 1, 2);
  EXPECT_THROW(implant(few_benign, toy().clean, toy().poison, options(1)), ConfigError);
}

TEST(Victim, ImplantRecordsBindingAndProvenance) {
  const auto r = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(1));
  EXPECT_EQ(r.victim.binding, toy().binding);
  EXPECT_EQ(r.victim.training_provenance.size(), toy().clean.size());
}

TEST(BenignFinetune, ZeroAmountUnchanged) {
  const auto r = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(5));
  const auto f = benign_finetune(r.victim, toy().extra, 0, options(5));
  EXPECT_EQ(victim_hash(f.victim), victim_hash(r.victim));
}

TEST(BenignFinetune, AmountTooLargeAndOverlapRejected) {
  const auto r = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(2));
  EXPECT_THROW(benign_finetune(r.victim, toy().extra, toy().extra.size() + 1, options(2)), ConfigError);
  EXPECT_THROW(benign_finetune(r.victim, toy().clean, 10, options(2)), DataError);
}

TEST(BenignFinetune, DeterministicAndChangesHead) {
  const auto r = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(5));
  const auto a = benign_finetune(r.victim, toy().extra, 50, options(5));
  const auto b = benign_finetune(r.victim, toy().extra, 50, options(5));
  EXPECT_EQ(victim_hash(a.victim), victim_hash(b.victim));
  EXPECT_NE(victim_hash(a.victim), victim_hash(r.victim));
}

TEST(Victim, EncoderNeverModified) {
  const std::string patch = encode_mtt1(toy().encoder.patch_weights);
  const std::string mix = encode_mtt1(toy().encoder.mix_weights);
  auto o = options(3);
  const auto r = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, o);
  const auto f = benign_finetune(r.victim, toy().extra, 20, o);
  for (const auto* v : {&r.victim, &f.victim}) {
    EXPECT_EQ(encode_mtt1(v->encoder.patch_weights), patch);
    EXPECT_EQ(encode_mtt1(v->encoder.mix_weights), mix);
    EXPECT_FALSE(v->tuned_encoder.has_value());
  }
  o.tune_encoder = true;
  const auto tuned = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, o);
  EXPECT_EQ(encode_mtt1(tuned.victim.encoder.patch_weights), patch);
  ASSERT_TRUE(tuned.victim.tuned_encoder.has_value());
  EXPECT_NE(encode_mtt1(tuned.victim.tuned_encoder->patch_weights), patch);
}

TEST(Victim, TrainingLossMonotoneWithinOneTransient) {
  const auto r = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(30));
  int increases = 0;
  for (std::size_t e = 1; e < r.epoch_loss.size(); ++e) {
    if (r.epoch_loss[e] > r.epoch_loss[e - 1]) {
      ++increases;
      EXPECT_LE(r.epoch_loss[e], 1.05 * r.epoch_loss[e - 1]) << "epoch " << e;
    }
  }
  EXPECT_LE(increases, 1);
}

TEST(Victim, SaveLoadRoundTrip) {
  test::TempDir dir("victim");
  const auto r = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(3));
  save_victim(r.victim, dir / "v.mtt1", {{"epochs", "3"}});
  const auto back = load_victim(dir / "v.mtt1", toy().encoder);
  EXPECT_TRUE(bitwise_equal(back.head_weights, r.victim.head_weights));
  EXPECT_TRUE(bitwise_equal(back.head_bias, r.victim.head_bias));
  EXPECT_EQ(back.binding, r.victim.binding);
  EXPECT_EQ(back.k_benign, 2);
  EXPECT_EQ(back.n_concepts, 2);
  EXPECT_EQ(victim_hash(back), victim_hash(r.victim));
  EXPECT_EQ(read_metadata(dir / "v.mtt1.meta").at("epochs"), "3");
}

TEST(Victim, PredictMatchesInfer) {
  const auto r = implant(make_victim(toy().encoder, 2, 2), toy().clean, toy().poison, options(3));
  std::vector<Tensor> images(toy().clean.images.begin(), toy().clean.images.begin() + 20);
  const auto labels = predict(r.victim, images);
  for (std::size_t i = 0; i < images.size(); ++i) EXPECT_EQ(labels[i], infer(r.victim, images[i]).label);
}

}  // namespace
}  // namespace mtb
