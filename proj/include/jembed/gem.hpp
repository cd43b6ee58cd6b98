#pragma once

#include <optional>
#include <span>

#include "jembed/tensor.hpp"

namespace mg {

struct GemConfig {
  double p = 3.0;                 ///< training exponent
  std::optional<double> p_star;   ///< evaluation override
  bool learnable = false;
  double epsilon = 1e-6;          ///< activation clamp before exponentiation

  void validate() const;
};

/// Generalized-mean pooling of x[N,C,H,W] (or [C,H,W]) with a one-element
/// exponent tensor `p`. Output is [N,C] (or [C]). Differentiable in x and p.
Tensor gem(const Tensor& x, const Tensor& p, double eps = 1e-6);

/// Scalar reference for one channel.
double gem_value(std::span<const double> channel, double p, double eps = 1e-6);
/// Analytic d gem / d p for one channel.
double gem_dp(std::span<const double> channel, double p, double eps = 1e-6);

/// GeM layer holding its exponent. In training mode the exponent is `p`
/// (a leaf requiring grad when learnable). When an override p* is set the
/// evaluation path uses it instead, with no gradient to p.
class GemPooling {
 public:
  explicit GemPooling(GemConfig cfg = {});

  const GemConfig& config() const { return cfg_; }
  /// The trained exponent as a one-element tensor.
  const Tensor& p() const { return p_; }
  Tensor& p() { return p_; }
  double p_value() const { return p_.item(); }
  void set_p(double p);
  void set_p_star(std::optional<double> p_star);

  Tensor forward(const Tensor& x) const;
  /// Pools with an explicit exponent tensor (used by p* finetuning).
  Tensor forward_with(const Tensor& x, const Tensor& p) const;

 private:
  GemConfig cfg_;
  Tensor p_;
};

}  // namespace mg
