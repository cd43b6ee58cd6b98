#include <gtest/gtest.h>

#include "jembed/config.hpp"
#include "jembed/error.hpp"
#include "jembed/toy_ra.hpp"

using namespace mg;

TEST(Toy, ZeroLearningRateIsFlat) {
  ToyConfig cfg;
  cfg.lr = 0.0;
  for (ToySampling mode : {ToySampling::uniform, ToySampling::paired}) {
    const auto curve = toy_run(cfg, mode, 0);
    ASSERT_EQ(curve.size(), 4 * cfg.per_class / 2 + 1);
    for (double a : curve) EXPECT_EQ(a, curve.front());
  }
}

TEST(Toy, SeparatedClassesReachFullAccuracy) {
  ToyConfig cfg;
  cfg.mean_offset = 100.0;
  cfg.flip = FlipAxis::x;
  for (ToySampling mode : {ToySampling::uniform, ToySampling::paired}) {
    const auto curve = toy_run(cfg, mode, 1);
    EXPECT_EQ(curve.back(), 1.0);
    EXPECT_EQ(curve[10], 1.0);
  }
}

TEST(Toy, IdenticalModesGiveZeroDifference) {
  ToyConfig cfg;
  cfg.runs = 1;
  const ToyComparison c = toy_compare(cfg, ToySampling::paired, ToySampling::paired);
  EXPECT_EQ(c.mean_diff, 0.0);
}

TEST(Toy, SwappingModesNegatesDifference) {
  ToyConfig cfg;
  cfg.runs = 10;
  const ToyComparison ab = toy_compare(cfg, ToySampling::paired, ToySampling::uniform);
  const ToyComparison ba = toy_compare(cfg, ToySampling::uniform, ToySampling::paired);
  EXPECT_EQ(ab.mean_diff, -ba.mean_diff);
  EXPECT_EQ(ab.final_a, ba.final_b);
}

TEST(Toy, Validation) {
  ToyConfig cfg;
  cfg.batch_size = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.sigma = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, UnknownKeyAndBadValue) {
  ExperimentConfig c;
  EXPECT_THROW(c.set("train.lrr", "0.1"), ConfigError);
  EXPECT_THROW(c.set("train.lr", "fast"), ConfigError);
  EXPECT_THROW(c.set("gem.learnable", "maybe"), ConfigError);
  EXPECT_THROW(c.parse("train.lr 0.1"), ConfigError);
  EXPECT_THROW(ExperimentConfig::load("/nonexistent/mg.cfg"), IoError);
}

TEST(Config, CanonicalRoundTrip) {
  ExperimentConfig c;
  c.parse("seed = 7\ntrain.lr = 0.02  # comment\ngem.p_star = 4.5\nadapt.mode = finetune\n"
          "train.decay_epochs = 3, 5\ntoy.flip_axis = x\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.train.decay_epochs, (std::vector<std::size_t>{3, 5}));
  ExperimentConfig d;
  d.parse(c.canonical());
  EXPECT_EQ(d.canonical(), c.canonical());
  EXPECT_EQ(d.hash(), c.hash());
  EXPECT_NE(ExperimentConfig{}.hash(), c.hash());
}

TEST(Config, OutputDirectoryDoesNotChangeHash) {
  ExperimentConfig a, b;
  b.set("out_dir", "elsewhere");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(b.out_dir, "elsewhere");
}

TEST(Config, EveryKeyRoundTrips) {
  const ExperimentConfig c;
  for (const std::string& key : ExperimentConfig::keys()) {
    if (key == "out_dir") continue;
    ExperimentConfig d;
    EXPECT_NO_THROW(d.set(key, c.values().at(key))) << key;
  }
}
