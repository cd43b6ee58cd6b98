#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "jembed/tensor.hpp"

namespace mg {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  /// Set when a non-finite value showed up; holds the coordinate.
  std::optional<std::size_t> nan_index;

  bool ok(double tol) const { return !nan_index && max_rel_error < tol; }
};

/// Compares the recorded gradient of `f` at `x` with central differences.
///
/// Non-scalar outputs are contracted with fixed pseudo-random weights in
/// [0.5, 1.5] (seeded by `projection_seed`) so every output coordinate is
/// exercised. The error per input coordinate is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps = 1e-5, std::uint64_t projection_seed = 7);

}  // namespace mg

namespace mg {

struct NamedGradCheck {
  std::string op;
  std::size_t points = 0;
  double max_rel_error = 0.0;
  bool finite = true;
};

/// Finite-difference checks of GeM (input and p), conv2d (input, weight,
/// bias), matmul, cross-entropy and the margin loss (embeddings and beta),
/// each at `points` random float64 points.
std::vector<NamedGradCheck> standard_grad_checks(std::uint64_t seed, std::size_t points = 10);

}  // namespace mg
