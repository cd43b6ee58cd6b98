#pragma once

// Numeric kernels behind the heavy tensor ops.
//
// Every kernel has a serial reference path and an OpenMP path. Both run the
// same per-element code; OpenMP only distributes independent outer units
// (row blocks, images, channels), so the two paths produce bitwise identical
// results for any thread count.

#include <cstddef>
#include <span>

namespace mg::kernels {

enum class Exec { serial, parallel };

Exec default_exec() noexcept;
void set_default_exec(Exec exec) noexcept;

/// RAII override of the default execution policy.
class ExecScope {
 public:
  explicit ExecScope(Exec exec) : previous_(default_exec()) { set_default_exec(exec); }
  ~ExecScope() { set_default_exec(previous_); }
  ExecScope(const ExecScope&) = delete;
  ExecScope& operator=(const ExecScope&) = delete;

 private:
  Exec previous_;
};

int max_threads() noexcept;

// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate,
             Exec exec = default_exec());
// C[m,n] (+)= A[k,m]^T * B[k,n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate,
             Exec exec = default_exec());
// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate,
             Exec exec = default_exec());

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel, stride, pad;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return in_channels * kernel * kernel; }
  std::size_t positions() const { return out_height() * out_width(); }
};

/// Unfolds one image [C,H,W] into columns [C*K*K, Ho*Wo].
void im2col(std::span<const double> image, const ConvGeometry& g, std::span<double> cols);
/// Adds columns [C*K*K, Ho*Wo] back into an image gradient [C,H,W].
void col2im(std::span<const double> cols, const ConvGeometry& g, std::span<double> image);

/// out[N,O,Ho,Wo] = conv(x[N,C,H,W], w[O,C,K,K]) + bias[O] (bias may be empty).
/// When `saved_cols` is non-empty (size N*patch*positions) the unfolded
/// input is kept there for the weight gradient.
void conv2d_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, const ConvGeometry& g, std::span<double> out,
                    std::span<double> saved_cols, Exec exec = default_exec());

/// Accumulates gradients for a 2-D convolution. Any of dx/dw/db may be empty
/// to skip that gradient. `cols` must be the unfolded input from forward.
void conv2d_backward(std::span<const double> dout, std::span<const double> w,
                     std::span<const double> cols, const ConvGeometry& g, std::span<double> dx,
                     std::span<double> dw, std::span<double> db, Exec exec = default_exec());

/// Generalized mean over each of `rows` contiguous runs of `len` values:
/// out[r] = (mean_u max(x,eps)^p)^(1/p), evaluated in log-sum-exp form.
/// p == 1 takes the plain arithmetic mean path.
void gem_forward(std::span<const double> x, std::size_t rows, std::size_t len, double p,
                 double eps, std::span<double> out, Exec exec = default_exec());

/// Given upstream grad dout[rows], accumulates dx (may be empty) and returns
/// the contribution to d/dp summed over rows.
double gem_backward(std::span<const double> x, std::size_t rows, std::size_t len, double p,
                    double eps, std::span<const double> out, std::span<const double> dout,
                    std::span<double> dx, Exec exec = default_exec());

}  // namespace mg::kernels
