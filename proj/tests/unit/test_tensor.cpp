#include <gtest/gtest.h>

#include <cmath>

#include "jembed/error.hpp"
#include "jembed/mgt1.hpp"
#include "jembed/ops.hpp"
#include "jembed/tensor.hpp"

using namespace mg;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
}

TEST(Tensor, HandlesShareStorageCloneDoesNot) {
  Tensor a = Tensor::vector({1, 2});
  Tensor b = a;
  Tensor c = a.clone();
  b.mutable_data()[0] = 9;
  EXPECT_EQ(a[0], 9);
  EXPECT_EQ(c[0], 1);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  TapeGuard guard(tape);
  Tensor x = Tensor::vector({0.3, -1, 2});
  x.set_requires_grad();
  tape.backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceX) {
  Tape tape;
  TapeGuard guard(tape);
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad();
  tape.backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, Errors) {
  {
    Tape tape;
    TapeGuard guard(tape);
    Tensor x = Tensor::vector({1, 2});
    x.set_requires_grad();
    Tensor y = scale(x, 2.0);
    EXPECT_THROW(tape.backward(y), ShapeError);
  }
  {
    Tape tape;
    Tensor x = Tensor::scalar(1.0);
    EXPECT_THROW(tape.backward(x), PreconditionError);
  }
  {
    Tape tape;
    TapeGuard guard(tape);
    Tensor x = Tensor::vector({1, 2});
    x.set_requires_grad();
    Tensor loss = sum(x);
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), PreconditionError);
    tape.reset();
    EXPECT_TRUE(tape.empty());
  }
}

TEST(Backward, ReplayLeavesForwardValues) {
  Tape tape;
  TapeGuard guard(tape);
  Tensor x = Tensor::vector({0.5, 1.5, 2.5});
  x.set_requires_grad();
  Tensor y = exp(mul(x, x));
  const std::vector<double> before(y.data().begin(), y.data().end());
  tape.backward(sum(y));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), before);
}

TEST(Backward, NothingRecordedWithoutGradOrTape) {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad();
  Tensor y = scale(x, 3.0);  // no active tape
  EXPECT_FALSE(y.requires_grad());
  Tape tape;
  TapeGuard guard(tape);
  Tensor z = scale(Tensor::vector({1, 2}), 3.0);  // no input needs grad
  EXPECT_TRUE(tape.empty());
  EXPECT_FALSE(z.requires_grad());
  {
    NoGradGuard off;
    Tensor w = scale(x, 2.0);
    EXPECT_FALSE(w.requires_grad());
  }
  EXPECT_TRUE(tape.empty());
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tape tape;
  TapeGuard guard(tape);
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad();
  Tensor y = add(x, x);
  tape.backward(mul(y, x));  // 2x^2
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Mgt1, RoundTripF64AndF32) {
  Tensor t({2, 3}, std::vector<double>{1, -2.5, 3e-9, 4, 5, 6.125});
  const auto bytes = mgt1::encode(t);
  ASSERT_EQ(bytes[0], 'M');
  ASSERT_EQ(bytes[3], '1');
  EXPECT_EQ(bytes[4], 0);
  EXPECT_EQ(bytes[5], 2);
  EXPECT_EQ(bytes.size(), 6u + 2 * 4 + 6 * 8);
  Tensor back = mgt1::decode(bytes);
  EXPECT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(back[i], t[i]);

  Tensor f = mgt1::decode(mgt1::encode(t, mgt1::DType::f32));
  EXPECT_EQ(f[1], -2.5);
  EXPECT_EQ(f[2], static_cast<double>(3e-9f));
}

TEST(Mgt1, RejectsMalformed) {
  auto bytes = mgt1::encode(Tensor::vector({1, 2}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(mgt1::decode(bad_magic), IoError);
  auto bad_dtype = bytes;
  bad_dtype[4] = 7;
  EXPECT_THROW(mgt1::decode(bad_dtype), IoError);
  bytes.pop_back();
  EXPECT_THROW(mgt1::decode(bytes), IoError);
  EXPECT_THROW(mgt1::read("/nonexistent/x.mgt"), IoError);
}
