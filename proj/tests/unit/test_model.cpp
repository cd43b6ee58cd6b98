#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "jembed/error.hpp"
#include "jembed/gradcheck.hpp"
#include "jembed/ops.hpp"
#include "jembed/rng.hpp"
#include "jembed/trainer.hpp"
#include "jembed/trunk.hpp"

using namespace mg;
namespace fs = std::filesystem;

namespace {

const Dataset& tiny() {
  static const Dataset ds = synth_dataset({.classes = 4, .per_class = 10, .image_size = 32, .val_fraction = 0.2,
                                           .distractors = 8},
                                          5);
  return ds;
}

TrainConfig tiny_train() {
  TrainConfig tc;
  tc.epochs = 1;
  tc.decay_epochs = {};
  tc.iterations_per_epoch = 2;
  tc.batch_size = 8;
  tc.repetitions = 2;
  tc.resolution = 16;
  tc.seed = 3;
  return tc;
}

AugmentConfig tiny_augment() {
  AugmentConfig a;
  a.basis = LightingBasis::fit(tiny().train);
  return a;
}

}  // namespace

TEST(BatchNorm, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  Tensor x({4, 3, 2, 2});
  for (double& v : x.mutable_data()) v = rng.normal();
  Tensor gamma = Tensor::vector({1.2, 0.7, -0.4});
  Tensor beta = Tensor::vector({0.1, -0.2, 0.3});
  std::vector<double> rm(3, 0.0), rv(3, 1.0);
  auto f = [&](const Tensor& in) { return batch_norm(in, gamma, beta, rm, rv, true); };
  EXPECT_LT(grad_check(f, x).max_rel_error, 1e-5);
  auto fg = [&](const Tensor& g) { return batch_norm(x, g, beta, rm, rv, true); };
  EXPECT_LT(grad_check(fg, gamma).max_rel_error, 1e-5);
}

TEST(Trunk, EmbeddingShapeAndNonNegativeMaps) {
  Rng rng(2);
  const Model m = Model::init(TrunkConfig{}, GemConfig{}, MarginConfig{}, 4, 16, rng);
  const Tensor emb = embed_records(m, tiny().val, 16);
  ASSERT_EQ(emb.ndim(), 2u);
  EXPECT_EQ(emb.dim(0), tiny().val.size());
  EXPECT_EQ(emb.dim(1), 64u);
  for (double v : emb.data()) EXPECT_GE(v, 0.0);
}

TEST(Trunk, RejectsInputBelowMinimum) {
  Rng rng(2);
  const Model m = Model::init(TrunkConfig{}, GemConfig{}, MarginConfig{}, 4, 16, rng);
  EXPECT_THROW(embed_records(m, tiny().val, 2), Error);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(4);
  GemConfig gem;
  gem.p = 2.5;
  const Model m = Model::init(TrunkConfig{}, gem, MarginConfig{}, 4, 16, rng);
  const fs::path dir = fs::temp_directory_path() / "mg_test_checkpoint";
  fs::remove_all(dir);
  save_checkpoint(m, dir);
  const Model back = load_checkpoint(dir);
  const auto a = m.tensors(), b = back.tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].shape(), b[i].shape());
    for (std::size_t k = 0; k < a[i].numel(); ++k) EXPECT_EQ(a[i][k], b[i][k]);
  }
  EXPECT_EQ(back.gem.p_value(), 2.5);
  EXPECT_EQ(back.train_resolution, 16u);
}

TEST(Checkpoint, MissingDirectoryIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/mg_checkpoint"), IoError);
}

TEST(Trainer, SameSeedSameModel) {
  const TrainResult a = train(tiny(), TrunkConfig{}, tiny_train(), GemConfig{}, MarginConfig{}, tiny_augment());
  const TrainResult b = train(tiny(), TrunkConfig{}, tiny_train(), GemConfig{}, MarginConfig{}, tiny_augment());
  const auto ta = a.model.tensors(), tb = b.model.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (std::size_t k = 0; k < ta[i].numel(); ++k) ASSERT_EQ(ta[i][k], tb[i][k]);
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_EQ(a.log.back().loss, b.log.back().loss);
}

TEST(Trainer, ZeroEpochsReturnsInitialization) {
  TrainConfig tc = tiny_train();
  tc.epochs = 0;
  const TrainResult r = train(tiny(), TrunkConfig{}, tc, GemConfig{}, MarginConfig{}, tiny_augment());
  EXPECT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.log[0].epoch, 0u);
}

TEST(Trainer, HugeLearningRateDiverges) {
  TrainConfig tc = tiny_train();
  tc.lr = 1e12;
  tc.iterations_per_epoch = 6;
  EXPECT_THROW(train(tiny(), TrunkConfig{}, tc, GemConfig{}, MarginConfig{}, tiny_augment()), DivergenceError);
}

TEST(Trainer, ConfigValidation) {
  TrainConfig tc = tiny_train();
  tc.lambda = 0.5;
  tc.repetitions = 1;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = tiny_train();
  tc.repetitions = 9;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = tiny_train();
  tc.epochs = 10;
  tc.decay_epochs = {5, 3};
  EXPECT_THROW(tc.validate(), ConfigError);
}

TEST(Trainer, LearningRateSchedule) {
  TrainConfig tc;
  EXPECT_DOUBLE_EQ(tc.lr_factor(0), 1.0);
  EXPECT_DOUBLE_EQ(tc.lr_factor(19), 1.0);
  EXPECT_DOUBLE_EQ(tc.lr_factor(20), 0.1);
  EXPECT_NEAR(tc.lr_factor(27), 0.01, 1e-15);
  EXPECT_EQ(tc.iterations(800), 75u);  // ceil(800 * 3 / 32)
}
