#include "jembed/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "jembed/error.hpp"
#include "jembed/kernels.hpp"

namespace mg {

using detail::grad_buffer;
using detail::make_result;
using detail::TensorNode;

namespace {

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw PreconditionError(std::string(op) + ": undefined operand");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require_defined(op, a);
  require_defined(op, b);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_ndim(const char* op, const Tensor& a, std::size_t nd) {
  require_defined(op, a);
  if (a.ndim() != nd) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(nd) + "-D operand, got " +
                     shape_str(a.shape()));
  }
}

std::vector<double> copy_of(std::span<const double> s) { return {s.begin(), s.end()}; }

template <typename F>
std::vector<double> map(std::span<const double> s, F f) {
  std::vector<double> out(s.size());
  std::transform(s.begin(), s.end(), out.begin(), f);
  return out;
}

// Accumulates g(i) into the grad of `t` when it participates.
template <typename G>
void accumulate(const Tensor& t, G g) {
  if (!t.requires_grad()) return;
  auto buf = grad_buffer(*t.node());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g(i);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [a, b](TensorNode& o) {
    accumulate(a, [&](std::size_t i) { return o.grad[i]; });
    accumulate(b, [&](std::size_t i) { return o.grad[i]; });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [a, b](TensorNode& o) {
    accumulate(a, [&](std::size_t i) { return o.grad[i]; });
    accumulate(b, [&](std::size_t i) { return -o.grad[i]; });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [a, b](TensorNode& o) {
    auto av = a.data(), bv = b.data();
    accumulate(a, [&](std::size_t i) { return o.grad[i] * bv[i]; });
    accumulate(b, [&](std::size_t i) { return o.grad[i] * av[i]; });
  });
}

Tensor scale(const Tensor& a, double s) {
  require_defined("scale", a);
  return make_result("scale", a.shape(), map(a.data(), [s](double v) { return v * s; }), {a},
                     [a, s](TensorNode& o) {
                       accumulate(a, [&](std::size_t i) { return o.grad[i] * s; });
                     });
}

Tensor add_scalar(const Tensor& a, double s) {
  require_defined("add_scalar", a);
  return make_result("add_scalar", a.shape(), map(a.data(), [s](double v) { return v + s; }),
                     {a}, [a](TensorNode& o) {
                       accumulate(a, [&](std::size_t i) { return o.grad[i]; });
                     });
}

Tensor relu(const Tensor& a) {
  require_defined("relu", a);
  return make_result("relu", a.shape(), map(a.data(), [](double v) { return v > 0.0 ? v : 0.0; }),
                     {a}, [a](TensorNode& o) {
                       auto av = a.data();
                       accumulate(a, [&](std::size_t i) { return av[i] > 0.0 ? o.grad[i] : 0.0; });
                     });
}

Tensor pow(const Tensor& a, double p, double eps) {
  require_defined("pow", a);
  for (double v : a.data()) {
    if (v < 0.0 || std::isnan(v)) {
      throw DomainError("pow: negative base " + std::to_string(v) + " (inputs must be >= 0)");
    }
  }
  return make_result(
      "pow", a.shape(), map(a.data(), [p, eps](double v) { return std::pow(std::max(v, eps), p); }),
      {a}, [a, p, eps](TensorNode& o) {
        auto av = a.data();
        accumulate(a, [&](std::size_t i) {
          // Clamped entries are constant in the input.
          return av[i] > eps ? o.grad[i] * p * std::pow(av[i], p - 1.0) : 0.0;
        });
      });
}

Tensor exp(const Tensor& a) {
  require_defined("exp", a);
  Tensor out = make_result("exp", a.shape(), map(a.data(), [](double v) { return std::exp(v); }),
                           {a}, [a](TensorNode& o) {
                             accumulate(a, [&](std::size_t i) { return o.grad[i] * o.data[i]; });
                           });
  return out;
}

Tensor log(const Tensor& a) {
  require_defined("log", a);
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return make_result("log", a.shape(), map(a.data(), [](double v) { return std::log(v); }), {a},
                     [a](TensorNode& o) {
                       auto av = a.data();
                       accumulate(a, [&](std::size_t i) { return o.grad[i] / av[i]; });
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_ndim("matmul", a, 2);
  require_ndim("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm_nn(a.data(), b.data(), out, m, k, n, false);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](TensorNode& o) {
    if (a.requires_grad())  // dA = dC * B^T
      kernels::gemm_nt(o.grad, b.data(), grad_buffer(*a.node()), m, n, k, true);
    if (b.requires_grad())  // dB = A^T * dC
      kernels::gemm_tn(a.data(), o.grad, grad_buffer(*b.node()), k, m, n, true);
  });
}

Tensor transpose(const Tensor& a) {
  require_ndim("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto av = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {a}, [a, r, c](TensorNode& o) {
    accumulate(a, [&](std::size_t flat) {
      const std::size_t i = flat / c, j = flat % c;
      return o.grad[j * r + i];
    });
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined("reshape", a);
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), copy_of(a.data()), {a}, [a](TensorNode& o) {
    accumulate(a, [&](std::size_t i) { return o.grad[i]; });
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_ndim("conv2d", x, 4);
  require_ndim("conv2d", w, 4);
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{w.dim(0)}) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  kernels::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad};
  if (g.height + 2 * pad < g.kernel || g.width + 2 * pad < g.kernel) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  const bool grad = active_tape() && (x.requires_grad() || w.requires_grad() ||
                                      (bias.defined() && bias.requires_grad()));
  auto cols = std::make_shared<std::vector<double>>(grad ? g.batch * g.patch() * g.positions() : 0);
  std::vector<double> out(g.batch * g.out_channels * g.positions());
  kernels::conv2d_forward(x.data(), w.data(),
                          bias.defined() ? bias.data() : std::span<const double>{}, g, out, *cols);
  Shape shape{g.batch, g.out_channels, g.out_height(), g.out_width()};
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result("conv2d", std::move(shape), std::move(out), inputs,
                     [x, w, bias, g, cols](TensorNode& o) {
                       std::span<double> dx, dw, db;
                       if (x.requires_grad()) dx = grad_buffer(*x.node());
                       if (w.requires_grad()) dw = grad_buffer(*w.node());
                       if (bias.defined() && bias.requires_grad()) db = grad_buffer(*bias.node());
                       kernels::conv2d_backward(o.grad, w.data(), *cols, g, dx, dw, db);
                     });
}

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("sum", {1}, {s}, {a}, [a](TensorNode& o) {
    const double g = o.grad[0];
    accumulate(a, [g](std::size_t) { return g; });
  });
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  double s = 0.0;
  for (double v : a.data()) s += v;
  const double n = static_cast<double>(a.numel());
  return make_result("mean", {1}, {s / n}, {a}, [a, n](TensorNode& o) {
    const double g = o.grad[0] / n;
    accumulate(a, [g](std::size_t) { return g; });
  });
}

static Tensor spatial_reduce(const char* op, const Tensor& x, bool average) {
  require_ndim(op, x, 4);
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2) * x.dim(3);
  auto xv = x.data();
  std::vector<double> out(rows);
  const double n = static_cast<double>(len);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t u = 0; u < len; ++u) s += xv[r * len + u];
    out[r] = average ? s / n : s;
  }
  return make_result(op, {x.dim(0), x.dim(1)}, std::move(out), {x},
                     [x, len, n, average](TensorNode& o) {
                       accumulate(x, [&](std::size_t i) {
                         const double g = o.grad[i / len];
                         return average ? g / n : g;
                       });
                     });
}

Tensor spatial_sum(const Tensor& x) { return spatial_reduce("spatial_sum", x, false); }
Tensor spatial_mean(const Tensor& x) { return spatial_reduce("spatial_mean", x, true); }

Tensor l2_norm(const Tensor& a, std::size_t dim) {
  require_ndim("l2_norm", a, 2);
  if (dim > 1) throw ShapeError("l2_norm: dim must be 0 or 1");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const std::size_t outer = dim == 1 ? r : c, inner = dim == 1 ? c : r;
  auto at = [r, c, dim](std::size_t o, std::size_t i) { return dim == 1 ? o * c + i : i * c + o; };
  (void)r;
  auto av = a.data();
  std::vector<double> out(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += av[at(o, i)] * av[at(o, i)];
    out[o] = std::sqrt(s);
  }
  return make_result("l2_norm", {outer}, std::move(out), {a},
                     [a, outer, inner, at](TensorNode& o) {
                       if (!a.requires_grad()) return;
                       auto av = a.data();
                       auto ga = grad_buffer(*a.node());
                       for (std::size_t k = 0; k < outer; ++k) {
                         if (o.data[k] == 0.0) continue;  // subgradient 0 at the origin
                         for (std::size_t i = 0; i < inner; ++i)
                           ga[at(k, i)] += o.grad[k] * av[at(k, i)] / o.data[k];
                       }
                     });
}

Tensor normalize_rows(const Tensor& a) {
  require_ndim("normalize_rows", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto av = a.data();
  std::vector<double> norms(r), out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av[i * c + j] * av[i * c + j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw DomainError("normalize_rows: row " + std::to_string(i) + " is zero");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = av[i * c + j] / norms[i];
  }
  return make_result("normalize_rows", a.shape(), std::move(out), {a},
                     [a, r, c, norms](TensorNode& o) {
                       if (!a.requires_grad()) return;
                       auto ga = grad_buffer(*a.node());
                       for (std::size_t i = 0; i < r; ++i) {
                         const double* u = o.data.data() + i * c;
                         const double* g = o.grad.data() + i * c;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += g[j] * u[j];
                         for (std::size_t j = 0; j < c; ++j)
                           ga[i * c + j] += (g[j] - dot * u[j]) / norms[i];
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t dim) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  for (const Tensor& t : parts) require_defined("concat", t);
  const Shape& s0 = parts.front().shape();
  if (dim >= s0.size()) throw ShapeError("concat: dim out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[dim] = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == dim || s[d] == s0[d];
    if (!ok) {
      throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    }
    out_shape[dim] += s[dim];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < dim; ++d) outer *= s0[d];
  for (std::size_t d = dim + 1; d < s0.size(); ++d) inner *= s0[d];
  const std::size_t out_row = out_shape[dim] * inner;
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    offsets.push_back(off);
    const std::size_t row = t.shape()[dim] * inner;
    auto tv = t.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(tv.data() + o * row, row, out.data() + o * out_row + off);
    off += row;
  }
  return make_result("concat", out_shape, std::move(out), parts,
                     [parts, offsets, outer, inner, dim, out_row](TensorNode& o) {
                       for (std::size_t p = 0; p < parts.size(); ++p) {
                         const Tensor& t = parts[p];
                         if (!t.requires_grad()) continue;
                         const std::size_t row = t.shape()[dim] * inner;
                         auto g = grad_buffer(*t.node());
                         for (std::size_t k = 0; k < outer; ++k)
                           for (std::size_t i = 0; i < row; ++i)
                             g[k * row + i] += o.grad[k * out_row + offsets[p] + i];
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t dim, std::size_t begin, std::size_t end) {
  require_defined("slice", a);
  const Shape& s = a.shape();
  if (dim >= s.size() || begin >= end || end > s[dim]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on dim " + std::to_string(dim) + " invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < dim; ++d) outer *= s[d];
  for (std::size_t d = dim + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[dim] = end - begin;
  const std::size_t src_row = s[dim] * inner, row = (end - begin) * inner, off = begin * inner;
  auto av = a.data();
  std::vector<double> out(outer * row);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.data() + o * src_row + off, row, out.data() + o * row);
  return make_result("slice", out_shape, std::move(out), {a},
                     [a, outer, row, src_row, off](TensorNode& o) {
                       if (!a.requires_grad()) return;
                       auto g = grad_buffer(*a.node());
                       for (std::size_t k = 0; k < outer; ++k)
                         for (std::size_t i = 0; i < row; ++i)
                           g[k * src_row + off + i] += o.grad[k * row + i];
                     });
}

}  // namespace mg
