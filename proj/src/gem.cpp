#include "jembed/gem.hpp"

#include <cmath>
#include <vector>

#include "jembed/error.hpp"
#include "jembed/kernels.hpp"

namespace mg {

void GemConfig::validate() const {
  if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("gem: p must be positive, got " + std::to_string(p));
  if (p_star && (!(*p_star > 0.0) || !std::isfinite(*p_star))) {
    throw ConfigError("gem: p_star must be positive, got " + std::to_string(*p_star));
  }
  if (!(epsilon > 0.0)) throw ConfigError("gem: epsilon must be positive");
  if (learnable && p_star) throw ConfigError("gem: a learnable exponent cannot carry a p* override");
}

Tensor gem(const Tensor& x, const Tensor& p, double eps) {
  if (!x.defined() || (x.ndim() != 4 && x.ndim() != 3)) {
    throw ShapeError("gem: expected [N,C,H,W] or [C,H,W], got " +
                     (x.defined() ? shape_str(x.shape()) : std::string("<undefined>")));
  }
  if (!p.defined() || p.numel() != 1) throw ShapeError("gem: exponent must have one element");
  const double pv = p.item();
  if (!(pv > 0.0) || !std::isfinite(pv)) throw DomainError("gem: non-positive exponent " + std::to_string(pv));
  const bool batched = x.ndim() == 4;
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t c = x.dim(batched ? 1 : 0);
  const std::size_t len = x.dim(batched ? 2 : 1) * x.dim(batched ? 3 : 2);
  for (double v : x.data()) {
    if (v < 0.0 || std::isnan(v)) throw DomainError("gem: negative activation " + std::to_string(v));
  }
  std::vector<double> out(n * c);
  kernels::gem_forward(x.data(), n * c, len, pv, eps, out);
  Shape shape = batched ? Shape{n, c} : Shape{c};
  return detail::make_result(
      "gem", std::move(shape), std::move(out), {x, p},
      [x, p, pv, eps, rows = n * c, len](detail::TensorNode& o) {
        std::span<double> dx;
        if (x.requires_grad()) dx = detail::grad_buffer(*x.node());
        const double dp = kernels::gem_backward(x.data(), rows, len, pv, eps, o.data, o.grad, dx);
        if (p.requires_grad()) detail::grad_buffer(*p.node())[0] += dp;
      });
}

double gem_value(std::span<const double> channel, double p, double eps) {
  if (channel.empty()) throw ShapeError("gem: empty spatial extent");
  if (!(p > 0.0)) throw DomainError("gem: non-positive exponent");
  double out = 0.0;
  kernels::gem_forward(channel, 1, channel.size(), p, eps, std::span<double>(&out, 1),
                       kernels::Exec::serial);
  return out;
}

double gem_dp(std::span<const double> channel, double p, double eps) {
  const double e = gem_value(channel, p, eps);
  const double one = 1.0;
  return kernels::gem_backward(channel, 1, channel.size(), p, eps, std::span<const double>(&e, 1),
                               std::span<const double>(&one, 1), {}, kernels::Exec::serial);
}

GemPooling::GemPooling(GemConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  p_ = Tensor::scalar(cfg_.p);
  if (cfg_.learnable) p_.set_requires_grad(true);
}

void GemPooling::set_p(double p) {
  if (!(p > 0.0)) throw DomainError("gem: non-positive exponent");
  const bool rg = p_.requires_grad();
  p_ = Tensor::scalar(p);
  p_.set_requires_grad(rg);
  cfg_.p = p;
}

void GemPooling::set_p_star(std::optional<double> p_star) {
  GemConfig next = cfg_;
  next.p_star = p_star;
  next.validate();
  cfg_ = next;
}

Tensor GemPooling::forward(const Tensor& x) const {
  if (cfg_.p_star) {
    NoGradGuard eval_only;
    return gem(x, Tensor::scalar(*cfg_.p_star), cfg_.epsilon);
  }
  return gem(x, p_, cfg_.epsilon);
}

Tensor GemPooling::forward_with(const Tensor& x, const Tensor& p) const {
  return gem(x, p, cfg_.epsilon);
}

}  // namespace mg
