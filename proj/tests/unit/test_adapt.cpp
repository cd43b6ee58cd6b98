#include <gtest/gtest.h>

#include "jembed/adapt.hpp"
#include "jembed/error.hpp"
#include "jembed/rng.hpp"

using namespace mg;

namespace {

struct Fixture {
  Dataset ds;
  Model model;
  InAugTask task;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture out;
    out.ds = synth_dataset({.classes = 3, .per_class = 10, .image_size = 32, .val_fraction = 0.2, .distractors = 2},
                           2);
    Rng rng(1);
    out.model = Model::init(TrunkConfig{}, GemConfig{}, MarginConfig{}, 3, 16, rng);
    AugmentConfig aug;
    aug.output_size = 24;
    out.task = inaug_build(out.ds.val, 2, aug, 4);
    return out;
  }();
  return f;
}

AdaptConfig cfg24() {
  AdaptConfig c;
  c.resolution = 24;
  return c;
}

}  // namespace

TEST(Sweep, SingletonGridReturnsIt) {
  AdaptConfig c = cfg24();
  c.grid = {4.5};
  const SweepResult r = pstar_sweep(fixture().model, fixture().task, c);
  EXPECT_EQ(r.best_p, 4.5);
  EXPECT_EQ(r.table.size(), 1u);
}

TEST(Sweep, DuplicatesCollapseAndBestIsInTable) {
  AdaptConfig c = cfg24();
  c.grid = {3, 1, 3, 2};
  const SweepResult r = pstar_sweep(fixture().model, fixture().task, c);
  ASSERT_EQ(r.table.size(), 3u);
  EXPECT_EQ(r.table[0].p, 1.0);
  EXPECT_EQ(r.table[2].p, 3.0);
  double best = -1;
  for (const auto& row : r.table) best = std::max(best, row.score);
  EXPECT_EQ(r.best_score, best);
}

TEST(Sweep, CachedPoolingMatchesFullEmbedding) {
  const Fixture& f = fixture();
  const MapCache cache = MapCache::of_prepared(f.model, f.task.copy_images);
  const Tensor a = cache.pool(2.0, 1e-6);
  const Tensor b = embed_prepared(f.model, f.task.copy_images, 2.0);
  ASSERT_EQ(a.numel(), b.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Sweep, RejectsCopiesAtWrongResolution) {
  AdaptConfig c = cfg24();
  c.resolution = 32;
  EXPECT_THROW(pstar_sweep(fixture().model, fixture().task, c), PreconditionError);
}

TEST(Finetune, ZeroLearningRateKeepsP) {
  AdaptConfig c = cfg24();
  c.mode = AdaptMode::finetune;
  c.finetune.lr = 0.0;
  c.finetune.per_class = 4;
  const FinetuneResult r = pstar_finetune(fixture().model, fixture().ds.train, c);
  EXPECT_EQ(r.p_star, fixture().model.gem.p_value());
  EXPECT_EQ(r.iterations, 3u);  // 12 images, batch 4
}

TEST(Finetune, LeavesModelUntouchedAndIsDeterministic) {
  const Fixture& f = fixture();
  const auto before = f.model.tensors();
  std::vector<std::vector<double>> snapshot;
  for (const Tensor& t : before) snapshot.emplace_back(t.data().begin(), t.data().end());
  AdaptConfig c = cfg24();
  c.finetune.per_class = 4;
  c.finetune.lr = 0.05;
  const FinetuneResult a = pstar_finetune(f.model, f.ds.train, c);
  const FinetuneResult b = pstar_finetune(f.model, f.ds.train, c);
  EXPECT_EQ(a.p_star, b.p_star);
  EXPECT_EQ(a.trajectory.size(), a.iterations);
  const auto after = f.model.tensors();
  for (std::size_t i = 0; i < after.size(); ++i)
    for (std::size_t k = 0; k < after[i].numel(); ++k) ASSERT_EQ(after[i][k], snapshot[i][k]);
}

TEST(Adapt, ConfigValidation) {
  AdaptConfig c = cfg24();
  c.grid = {};
  EXPECT_THROW(c.validate(fixture().model), ConfigError);
  c = cfg24();
  c.grid = {-1.0};
  EXPECT_THROW(c.validate(fixture().model), ConfigError);
  c = cfg24();
  c.resolution = 2;
  EXPECT_THROW(c.validate(fixture().model), ConfigError);
}
