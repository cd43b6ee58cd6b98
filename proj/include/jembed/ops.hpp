#pragma once

// Differentiable operations on Tensor. No broadcasting: apart from the
// scalar-argument forms, operands must have identical shapes.

#include <cstddef>
#include <vector>

#include "jembed/tensor.hpp"

namespace mg {

/// Base clamp applied by pow() before exponentiation.
inline constexpr double kPowEpsilon = 1e-6;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
/// max(a, eps)^p for a >= 0. Negative entries are a domain error.
Tensor pow(const Tensor& a, double p, double eps = kPowEpsilon);
Tensor exp(const Tensor& a);
/// Natural log; non-positive entries are a domain error.
Tensor log(const Tensor& a);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// x[N,C,H,W] * w[O,C,K,K] (+ bias[O]) with square kernels.
/// Pass an undefined tensor to omit the bias.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// Sum / mean of all entries -> shape [1].
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// [N,C,H,W] -> [N,C]
Tensor spatial_sum(const Tensor& x);
Tensor spatial_mean(const Tensor& x);

/// Row-wise L2 norm of a 2-D tensor along `dim` (0 or 1).
Tensor l2_norm(const Tensor& a, std::size_t dim);
/// Each row of a 2-D tensor scaled to unit L2 norm. Zero rows are a domain error.
Tensor normalize_rows(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, std::size_t dim);
/// Entries [begin, end) along `dim`.
Tensor slice(const Tensor& a, std::size_t dim, std::size_t begin, std::size_t end);

}  // namespace mg
