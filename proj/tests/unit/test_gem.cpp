#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "jembed/error.hpp"
#include "jembed/gem.hpp"
#include "jembed/gradcheck.hpp"
#include "jembed/ops.hpp"
#include "jembed/rng.hpp"

using namespace mg;

namespace {

const std::vector<double> kRamp{1, 2, 3, 4};

Tensor random_map(Shape shape, Rng& rng, double lo = 0.1, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(Gem, Examples) {
  EXPECT_DOUBLE_EQ(gem_value(kRamp, 1.0), 2.5);
  EXPECT_NEAR(gem_value(kRamp, 1e4), 4.0, 1e-3);
  EXPECT_NEAR(gem_value(kRamp, 3.0), std::cbrt(25.0), 1e-12);
  EXPECT_NEAR(gem_value(kRamp, 3.0), 2.92402, 1e-5);
}

TEST(Gem, DerivativeInP) {
  EXPECT_NEAR(gem_dp(std::vector<double>{0.7, 0.7, 0.7}, 2.3), 0.0, 1e-14);

  const std::vector<double> two{1, 4};
  const double h = 1e-5;
  const double fd = (gem_value(two, 2 + h) - gem_value(two, 2 - h)) / (2 * h);
  const double an = gem_dp(two, 2.0);
  EXPECT_LT(std::abs(an - fd) / std::abs(fd), 1e-5);

  // d/dp (mean x^p)^(1/p) at p = 1: f * (M'/M - log M).
  const double m = 2.5;
  const double mprime = (2 * std::log(2.0) + 3 * std::log(3.0) + 4 * std::log(4.0)) / 4;
  EXPECT_NEAR(gem_dp(kRamp, 1.0), m * (mprime / m - std::log(m)), 1e-12);
}

TEST(Gem, Properties) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(9);
    for (double& v : x) v = rng.uniform(0.01, 3.0);
    const double lo = *std::min_element(x.begin(), x.end()), hi = *std::max_element(x.begin(), x.end());
    double prev = 0.0;
    for (double p : {0.5, 1.0, 2.0, 3.0, 5.0, 10.0}) {
      const double g = gem_value(x, p);
      EXPECT_GE(g, lo * (1 - 1e-12));
      EXPECT_LE(g, hi * (1 + 1e-12));
      EXPECT_GT(g, prev);
      prev = g;
      std::vector<double> scaled(x);
      for (double& v : scaled) v *= 3.7;
      EXPECT_NEAR(gem_value(scaled, p), 3.7 * g, 1e-12 * g);
    }
  }
}

TEST(Gem, PEqualsOneIsSpatialMeanBitwise) {
  Rng rng(3);
  const Tensor x = random_map({4, 6, 5, 7}, rng);
  const Tensor a = gem(x, Tensor::scalar(1.0));
  const Tensor b = spatial_mean(x);
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(Gem, LargePApproachesMax) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const Tensor x = random_map({1, 3, 4, 4}, rng, 0.0, 1.0);
    const Tensor g = gem(x, Tensor::scalar(1e4));
    for (std::size_t c = 0; c < 3; ++c) {
      const auto row = x.data().subspan(c * 16, 16);
      EXPECT_NEAR(g[c], *std::max_element(row.begin(), row.end()), 1e-3);
    }
  }
}

TEST(Gem, GradCheckInputsAndExponent) {
  Rng rng(5);
  for (int k = 0; k < 10; ++k) {
    const Tensor x = random_map({2, 3, 2, 2}, rng);
    const double p = rng.uniform(1.0, 6.0);
    EXPECT_TRUE(grad_check([&](const Tensor& t) { return gem(t, Tensor::scalar(p)); }, x).ok(1e-4));
    EXPECT_TRUE(grad_check([&](const Tensor& pt) { return gem(x, pt); }, Tensor::scalar(p)).ok(1e-4));
  }
  const Tensor small = random_map({1, 2, 2}, rng);
  EXPECT_TRUE(grad_check([](const Tensor& t) { return gem(t, Tensor::scalar(3.0)); }, small).ok(1e-4));
}

TEST(Gem, Errors) {
  EXPECT_THROW(gem(Tensor::ones({1, 2, 2, 2}), Tensor::scalar(0.0)), DomainError);
  EXPECT_THROW(gem(Tensor::vector({1.0, -0.5, 1.0, 1.0}), Tensor::scalar(3.0)), ShapeError);
  Tensor neg = Tensor::ones({1, 1, 2, 2});
  neg.mutable_data()[1] = -0.1;
  EXPECT_THROW(gem(neg, Tensor::scalar(3.0)), DomainError);
  EXPECT_THROW(gem_value(std::vector<double>{}, 3.0), ShapeError);
  EXPECT_THROW((GemConfig{-1.0, std::nullopt, false, 1e-6}.validate()), ConfigError);
  EXPECT_THROW((GemConfig{3.0, 0.0, false, 1e-6}.validate()), ConfigError);
  EXPECT_THROW((GemConfig{3.0, 4.0, true, 1e-6}.validate()), ConfigError);
}

TEST(Gem, ZeroActivationsAreClamped) {
  const Tensor x = Tensor::zeros({1, 1, 2, 2});
  const Tensor g = gem(x, Tensor::scalar(3.0));
  EXPECT_NEAR(g[0], 1e-6, 1e-18);
  EXPECT_TRUE(std::isfinite(g[0]));
}

TEST(GemPooling, OverrideDoesNotTrainP) {
  GemPooling pool({3.0, std::nullopt, true, 1e-6});
  Rng rng(8);
  const Tensor x = random_map({1, 2, 3, 3}, rng);
  {
    Tape tape;
    TapeGuard guard(tape);
    tape.backward(sum(pool.forward(x)));
    EXPECT_TRUE(pool.p().has_grad());
  }
  GemPooling fixed({3.0, std::nullopt, false, 1e-6});
  fixed.set_p_star(5.0);
  Tensor xg = x.clone();
  xg.set_requires_grad();
  Tape tape;
  TapeGuard guard(tape);
  const Tensor e = fixed.forward(xg);
  EXPECT_FALSE(e.requires_grad());
  EXPECT_NEAR(e[0], gem_value(x.data().subspan(0, 9), 5.0), 1e-12);
}
