#include <gtest/gtest.h>

#include <vector>

#include "jembed/kernels.hpp"
#include "jembed/rng.hpp"

using namespace mg;
using namespace mg::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

}  // namespace

TEST(Kernels, GemmMatchesNaive) {
  const std::size_t m = 37, k = 19, n = 23;
  const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
  std::vector<double> c(m * n), ref(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) ref[i * n + j] += a[i * k + p] * b[p * n + j];
  gemm_nn(a, b, c, m, k, n, false, Exec::serial);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);

  // a^T stored as [k,m]
  std::vector<double> at(k * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  std::vector<double> c2(m * n);
  gemm_tn(at, b, c2, m, k, n, false, Exec::serial);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c2[i], ref[i], 1e-12);

  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  std::vector<double> c3(m * n, 1.0);
  gemm_nt(a, bt, c3, m, k, n, true, Exec::serial);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c3[i], ref[i] + 1.0, 1e-12);
}

TEST(Kernels, GemmSerialParallelBitwise) {
  const std::size_t m = 130, k = 77, n = 301;
  const auto a = random_vec(m * k, 3), b = random_vec(k * n, 4);
  std::vector<double> s(m * n), p(m * n);
  gemm_nn(a, b, s, m, k, n, false, Exec::serial);
  gemm_nn(a, b, p, m, k, n, false, Exec::parallel);
  EXPECT_EQ(s, p);
  const auto at = random_vec(k * m, 5);
  gemm_tn(at, b, s, m, k, n, false, Exec::serial);
  gemm_tn(at, b, p, m, k, n, false, Exec::parallel);
  EXPECT_EQ(s, p);
}

TEST(Kernels, ConvSerialParallelBitwise) {
  ConvGeometry g{5, 3, 12, 12, 8, 3, 2, 1};
  const auto x = random_vec(g.batch * g.in_channels * g.height * g.width, 6);
  const auto w = random_vec(g.out_channels * g.patch(), 7);
  const auto bias = random_vec(g.out_channels, 8);
  const std::size_t out_n = g.batch * g.out_channels * g.positions();
  const std::size_t cols_n = g.batch * g.patch() * g.positions();
  std::vector<double> out_s(out_n), out_p(out_n), cols_s(cols_n), cols_p(cols_n);
  conv2d_forward(x, w, bias, g, out_s, cols_s, Exec::serial);
  conv2d_forward(x, w, bias, g, out_p, cols_p, Exec::parallel);
  EXPECT_EQ(out_s, out_p);

  const auto dout = random_vec(out_n, 9);
  std::vector<double> dx_s(x.size()), dx_p(x.size()), dw_s(w.size()), dw_p(w.size()), db_s(8), db_p(8);
  conv2d_backward(dout, w, cols_s, g, dx_s, dw_s, db_s, Exec::serial);
  conv2d_backward(dout, w, cols_p, g, dx_p, dw_p, db_p, Exec::parallel);
  EXPECT_EQ(dx_s, dx_p);
  EXPECT_EQ(dw_s, dw_p);
  EXPECT_EQ(db_s, db_p);
}

TEST(Kernels, Im2colCol2imAdjoint) {
  // <im2col(x), c> == <x, col2im(c)>
  ConvGeometry g{1, 2, 5, 4, 1, 3, 2, 1};
  const auto x = random_vec(g.in_channels * g.height * g.width, 10);
  const auto c = random_vec(g.patch() * g.positions(), 11);
  std::vector<double> cols(c.size()), img(x.size(), 0.0);
  im2col(x, g, cols);
  col2im(c, g, img);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < c.size(); ++i) lhs += cols[i] * c[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * img[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Kernels, GemSerialParallelBitwise) {
  const std::size_t rows = 300, len = 64;
  auto x = random_vec(rows * len, 12);
  for (double& v : x) v = std::abs(v);
  std::vector<double> s(rows), p(rows);
  gem_forward(x, rows, len, 3.0, 1e-6, s, Exec::serial);
  gem_forward(x, rows, len, 3.0, 1e-6, p, Exec::parallel);
  EXPECT_EQ(s, p);
  const auto dout = random_vec(rows, 13);
  std::vector<double> dx_s(x.size()), dx_p(x.size());
  const double dp_s = gem_backward(x, rows, len, 3.0, 1e-6, s, dout, dx_s, Exec::serial);
  const double dp_p = gem_backward(x, rows, len, 3.0, 1e-6, p, dout, dx_p, Exec::parallel);
  EXPECT_EQ(dp_s, dp_p);
  EXPECT_EQ(dx_s, dx_p);
}
