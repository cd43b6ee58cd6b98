#include "jembed/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>

namespace mg::kernels {

namespace {

std::atomic<Exec> g_exec{Exec::parallel};

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColTile = 256;
constexpr std::size_t kVec = 16;

// Rows [r0, r1) of C = A * B with A row-major [m,k] accessed through
// a(i, kk) = A[i*lda + kk*sa]. Per-element accumulation is kk-ascending.
// Columns are tiled so the C block stays in L1.
template <typename AccessA>
inline void gemm_rows(AccessA a, const double* b, double* c, std::size_t r0, std::size_t r1,
                      std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c + r0 * n, c + r1 * n, 0.0);
  for (std::size_t j0 = 0; j0 < n; j0 += kColTile) {
    const std::size_t nj = std::min(kColTile, n - j0);
    if (r1 - r0 == kRowBlock) {
      std::size_t j = 0;
      // Register tile: 4 rows x kVec columns accumulated over all of k.
      for (; j + kVec <= nj; j += kVec) {
        double acc[kRowBlock][kVec] = {};
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* __restrict br = b + kk * n + j0 + j;
          for (std::size_t r = 0; r < kRowBlock; ++r) {
            const double ar = a(r0 + r, kk);
#pragma omp simd
            for (std::size_t v = 0; v < kVec; ++v) acc[r][v] += ar * br[v];
          }
        }
        for (std::size_t r = 0; r < kRowBlock; ++r) {
          double* __restrict cr = c + (r0 + r) * n + j0 + j;
#pragma omp simd
          for (std::size_t v = 0; v < kVec; ++v) cr[v] += acc[r][v];
        }
      }
      for (; j < nj; ++j) {
        for (std::size_t r = 0; r < kRowBlock; ++r) {
          double acc = 0.0;
          for (std::size_t kk = 0; kk < k; ++kk) acc += a(r0 + r, kk) * b[kk * n + j0 + j];
          c[(r0 + r) * n + j0 + j] += acc;
        }
      }
      continue;
    }
    for (std::size_t i = r0; i < r1; ++i) {
      double* __restrict ci = c + i * n + j0;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double ai = a(i, kk);
        const double* __restrict br = b + kk * n + j0;
#pragma omp simd
        for (std::size_t j = 0; j < nj; ++j) ci[j] += ai * br[j];
      }
    }
  }
}

template <typename AccessA>
void gemm_driver(AccessA a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate, Exec exec) {
  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  auto run_block = [&](std::size_t blk) {
    const std::size_t r0 = blk * kRowBlock;
    const std::size_t r1 = std::min(m, r0 + kRowBlock);
    gemm_rows(a, b, c, r0, r1, k, n, accumulate);
  };
  if (exec == Exec::parallel && blocks > 1 && m * k * n > 32768) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(blocks); ++blk) {
      run_block(static_cast<std::size_t>(blk));
    }
  } else {
    for (std::size_t blk = 0; blk < blocks; ++blk) run_block(blk);
  }
}

// Block of dots: C[i0+r, j0+q] for r < 4, q < 2, over rows of A and B of
// length k. Lane-wise SIMD partial sums; the order is fixed by this code
// alone, so every caller sees the same bits.
inline void dot_block(const double* a, const double* b, double* c, std::size_t k, std::size_t n,
                      std::size_t i0, std::size_t ri, std::size_t j0, std::size_t qj, bool accumulate) {
  double s[4][2] = {};
  const double* ar[4];
  const double* br[2];
  for (std::size_t r = 0; r < 4; ++r) ar[r] = a + (i0 + std::min(r, ri - 1)) * k;
  for (std::size_t q = 0; q < 2; ++q) br[q] = b + (j0 + std::min(q, qj - 1)) * k;
  double s00 = 0, s01 = 0, s10 = 0, s11 = 0, s20 = 0, s21 = 0, s30 = 0, s31 = 0;
#pragma omp simd reduction(+ : s00, s01, s10, s11, s20, s21, s30, s31)
  for (std::size_t u = 0; u < k; ++u) {
    const double b0 = br[0][u], b1 = br[1][u];
    s00 += ar[0][u] * b0;
    s01 += ar[0][u] * b1;
    s10 += ar[1][u] * b0;
    s11 += ar[1][u] * b1;
    s20 += ar[2][u] * b0;
    s21 += ar[2][u] * b1;
    s30 += ar[3][u] * b0;
    s31 += ar[3][u] * b1;
  }
  s[0][0] = s00, s[0][1] = s01, s[1][0] = s10, s[1][1] = s11;
  s[2][0] = s20, s[2][1] = s21, s[3][0] = s30, s[3][1] = s31;
  for (std::size_t r = 0; r < ri; ++r) {
    for (std::size_t q = 0; q < qj; ++q) {
      double& dst = c[(i0 + r) * n + j0 + q];
      dst = accumulate ? dst + s[r][q] : s[r][q];
    }
  }
}

}  // namespace

Exec default_exec() noexcept { return g_exec.load(std::memory_order_relaxed); }
void set_default_exec(Exec exec) noexcept { g_exec.store(exec, std::memory_order_relaxed); }
int max_threads() noexcept { return omp_get_max_threads(); }

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate, Exec exec) {
  const double* ap = a.data();
  gemm_driver([ap, k](std::size_t i, std::size_t kk) { return ap[i * k + kk]; }, b.data(),
              c.data(), m, k, n, accumulate, exec);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate, Exec exec) {
  const double* ap = a.data();
  gemm_driver([ap, m](std::size_t i, std::size_t kk) { return ap[kk * m + i]; }, b.data(),
              c.data(), m, k, n, accumulate, exec);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate, Exec exec) {
  if (n < 64) {
    const std::size_t blocks = (m + 3) / 4;
    auto run_block = [&](std::size_t blk) {
      const std::size_t i0 = blk * 4;
      const std::size_t ri = std::min<std::size_t>(4, m - i0);
      for (std::size_t j0 = 0; j0 < n; j0 += 2)
        dot_block(a.data(), b.data(), c.data(), k, n, i0, ri, j0, std::min<std::size_t>(2, n - j0), accumulate);
    };
    if (exec == Exec::parallel && blocks > 1 && m * k * n > 32768) {
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(blocks); ++blk)
        run_block(static_cast<std::size_t>(blk));
    } else {
      for (std::size_t blk = 0; blk < blocks; ++blk) run_block(blk);
    }
    return;
  }
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t u = 0; u < k; ++u) bt[u * n + j] = b[j * k + u];
  gemm_nn(a, bt, c, m, k, n, accumulate, exec);
}

void im2col(std::span<const double> image, const ConvGeometry& g, std::span<double> cols) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.height);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(g.width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* plane = image.data() + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        double* dst = cols.data() + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          double* d = dst + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(d, d + wo, 0.0);
            continue;
          }
          const double* src = plane + iy * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            d[ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(std::span<const double> cols, const ConvGeometry& g, std::span<double> image) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.height);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(g.width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* plane = image.data() + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        const double* src = cols.data() + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= h) continue;
          double* d = plane + iy * w;
          const double* s = src + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < w) d[ix] += s[ox];
          }
        }
      }
    }
  }
}

void conv2d_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, const ConvGeometry& g, std::span<double> out,
                    std::span<double> saved_cols, Exec exec) {
  const std::size_t patch = g.patch(), pos = g.positions();
  const std::size_t in_img = g.in_channels * g.height * g.width;
  const std::size_t out_img = g.out_channels * pos;
  const bool keep = !saved_cols.empty();

  auto one = [&](std::size_t n, std::vector<double>& scratch) {
    std::span<double> cols = keep ? saved_cols.subspan(n * patch * pos, patch * pos)
                                  : std::span<double>(scratch);
    im2col(x.subspan(n * in_img, in_img), g, cols);
    std::span<double> o = out.subspan(n * out_img, out_img);
    if (!bias.empty()) {
      for (std::size_t oc = 0; oc < g.out_channels; ++oc)
        std::fill(o.begin() + oc * pos, o.begin() + (oc + 1) * pos, bias[oc]);
    }
    gemm_nn(w, cols, o, g.out_channels, patch, pos, !bias.empty(), Exec::serial);
  };

  if (exec == Exec::parallel && g.batch > 1) {
#pragma omp parallel
    {
      std::vector<double> scratch(keep ? 0 : patch * pos);
#pragma omp for schedule(static)
      for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(g.batch); ++n)
        one(static_cast<std::size_t>(n), scratch);
    }
  } else {
    std::vector<double> scratch(keep ? 0 : patch * pos);
    for (std::size_t n = 0; n < g.batch; ++n) one(n, scratch);
  }
}

void conv2d_backward(std::span<const double> dout, std::span<const double> w,
                     std::span<const double> cols, const ConvGeometry& g, std::span<double> dx,
                     std::span<double> dw, std::span<double> db, Exec exec) {
  const std::size_t patch = g.patch(), pos = g.positions();
  const std::size_t in_img = g.in_channels * g.height * g.width;
  const std::size_t out_img = g.out_channels * pos;
  const std::size_t wsize = g.out_channels * patch;
  const bool par = exec == Exec::parallel && g.batch > 1;

  // Per-image weight gradients, summed afterwards in image order.
  std::vector<double> dw_per(dw.empty() ? 0 : g.batch * wsize);

  auto one = [&](std::size_t n, std::vector<double>& dcol) {
    std::span<const double> go = dout.subspan(n * out_img, out_img);
    if (!dx.empty()) {
      gemm_tn(w, go, dcol, patch, g.out_channels, pos, false, Exec::serial);
      col2im(dcol, g, dx.subspan(n * in_img, in_img));
    }
    if (!dw.empty()) {
      gemm_nt(go, cols.subspan(n * patch * pos, patch * pos),
              std::span<double>(dw_per).subspan(n * wsize, wsize), g.out_channels, pos, patch,
              false, Exec::serial);
    }
  };

  if (par) {
#pragma omp parallel
    {
      std::vector<double> dcol(dx.empty() ? 0 : patch * pos);
#pragma omp for schedule(static)
      for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(g.batch); ++n)
        one(static_cast<std::size_t>(n), dcol);
    }
  } else {
    std::vector<double> dcol(dx.empty() ? 0 : patch * pos);
    for (std::size_t n = 0; n < g.batch; ++n) one(n, dcol);
  }

  if (!dw.empty()) {
    auto sum_range = [&](std::size_t i0, std::size_t i1) {
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* src = dw_per.data() + n * wsize;
        for (std::size_t i = i0; i < i1; ++i) dw[i] += src[i];
      }
    };
    if (par) {
      const std::size_t chunk = 256;
      const std::size_t chunks = (wsize + chunk - 1) / chunk;
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
        const std::size_t i0 = static_cast<std::size_t>(c) * chunk;
        sum_range(i0, std::min(wsize, i0 + chunk));
      }
    } else {
      sum_range(0, wsize);
    }
  }
  if (!db.empty()) {
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
        const double* src = dout.data() + n * out_img + oc * pos;
        double s = 0.0;
        for (std::size_t p = 0; p < pos; ++p) s += src[p];
        db[oc] += s;
      }
    }
  }
}

namespace {

inline double gem_row(const double* x, std::size_t len, double p, double eps) {
  if (p == 1.0) {
    double s = 0.0;
    for (std::size_t u = 0; u < len; ++u) s += std::max(x[u], eps);
    return s / static_cast<double>(len);
  }
  double mlog = -INFINITY;
  for (std::size_t u = 0; u < len; ++u) mlog = std::max(mlog, std::log(std::max(x[u], eps)));
  double s = 0.0;
  for (std::size_t u = 0; u < len; ++u) s += std::exp(p * (std::log(std::max(x[u], eps)) - mlog));
  return std::exp(mlog + std::log(s / static_cast<double>(len)) / p);
}

// Returns d(out)/dp for this row (unscaled by upstream) and accumulates dx.
inline double gem_row_backward(const double* x, std::size_t len, double p, double eps,
                               double e, double g, double* dx) {
  double mlog = -INFINITY;
  for (std::size_t u = 0; u < len; ++u) mlog = std::max(mlog, std::log(std::max(x[u], eps)));
  double s = 0.0;
  for (std::size_t u = 0; u < len; ++u) s += std::exp(p * (std::log(std::max(x[u], eps)) - mlog));
  double wlog = 0.0;
  for (std::size_t u = 0; u < len; ++u) {
    const double xc = std::max(x[u], eps);
    const double lx = std::log(xc);
    const double wu = std::exp(p * (lx - mlog)) / s;  // x^p / sum x^p
    wlog += wu * lx;
    if (dx && x[u] > eps) dx[u] += g * e * wu / xc;
  }
  return (e / p) * (wlog - std::log(e));
}

}  // namespace

void gem_forward(std::span<const double> x, std::size_t rows, std::size_t len, double p,
                 double eps, std::span<double> out, Exec exec) {
  if (exec == Exec::parallel && rows > 1) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r)
      out[r] = gem_row(x.data() + r * len, len, p, eps);
  } else {
    for (std::size_t r = 0; r < rows; ++r) out[r] = gem_row(x.data() + r * len, len, p, eps);
  }
}

double gem_backward(std::span<const double> x, std::size_t rows, std::size_t len, double p,
                    double eps, std::span<const double> out, std::span<const double> dout,
                    std::span<double> dx, Exec exec) {
  std::vector<double> dp(rows, 0.0);
  auto one = [&](std::size_t r) {
    if (dout[r] == 0.0) return;
    double* d = dx.empty() ? nullptr : dx.data() + r * len;
    dp[r] = dout[r] * gem_row_backward(x.data() + r * len, len, p, eps, out[r], dout[r], d);
  };
  if (exec == Exec::parallel && rows > 1) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r)
      one(static_cast<std::size_t>(r));
  } else {
    for (std::size_t r = 0; r < rows; ++r) one(r);
  }
  double total = 0.0;
  for (double v : dp) total += v;
  return total;
}

}  // namespace mg::kernels
