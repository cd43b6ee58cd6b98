#include "jembed/trunk.hpp"

#include <cmath>
#include <string>

#include "jembed/error.hpp"
#include "jembed/ops.hpp"

namespace mg {

void TrunkConfig::validate() const {
  if (channels.empty()) throw ConfigError("trunk: need at least one stage");
  for (std::size_t c : channels)
    if (c == 0) throw ConfigError("trunk: zero channels in a stage");
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("trunk: kernel must be odd");
  if (channels.back() < 2) throw ConfigError("trunk: embedding dimension must be >= 2");
}

std::size_t TrunkConfig::output_extent(std::size_t input) const {
  std::size_t n = input;
  const std::size_t pad = kernel / 2;
  for (std::size_t s = 0; s < channels.size(); ++s) n = (n + 2 * pad - kernel) / stride(s) + 1;
  return n;
}

std::size_t TrunkConfig::min_resolution() const { return std::size_t{1} << (channels.size() - 1); }

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::vector<double>& running_mean,
                  std::vector<double>& running_var, bool training, double momentum, double eps) {
  if (x.ndim() != 4) throw ShapeError("batch_norm: expected [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || running_mean.size() != c || running_var.size() != c) {
    throw ShapeError("batch_norm: parameters do not match " + std::to_string(c) + " channels");
  }
  const auto xv = x.data();
  const double count = static_cast<double>(n * hw);
  std::vector<double> mean(c), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double m, v;
    if (training) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) s += xv[(i * c + ch) * hw + p];
      m = s / count;
      double q = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) {
          const double d = xv[(i * c + ch) * hw + p] - m;
          q += d * d;
        }
      v = q / count;
      running_mean[ch] = (1 - momentum) * running_mean[ch] + momentum * m;
      running_var[ch] = (1 - momentum) * running_var[ch] + momentum * v * count / std::max(1.0, count - 1);
    } else {
      m = running_mean[ch];
      v = running_var[ch];
    }
    mean[ch] = m;
    inv_std[ch] = 1.0 / std::sqrt(v + eps);
  }
  const auto g = gamma.data(), b = beta.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t k = (i * c + ch) * hw + p;
        out[k] = g[ch] * (xv[k] - mean[ch]) * inv_std[ch] + b[ch];
      }
  return detail::make_result(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean, inv_std, training, n, c, hw, count](detail::TensorNode& o) {
        const auto xv = x.data();
        const auto g = gamma.data();
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) {
              const std::size_t k = (i * c + ch) * hw + p;
              sum_dy[ch] += o.grad[k];
              sum_dy_xhat[ch] += o.grad[k] * (xv[k] - mean[ch]) * inv_std[ch];
            }
        if (gamma.requires_grad()) {
          auto gg = detail::grad_buffer(*gamma.node());
          for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_dy_xhat[ch];
        }
        if (beta.requires_grad()) {
          auto gb = detail::grad_buffer(*beta.node());
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_dy[ch];
        }
        if (!x.requires_grad()) return;
        auto gx = detail::grad_buffer(*x.node());
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) {
              const std::size_t k = (i * c + ch) * hw + p;
              if (training) {
                const double xhat = (xv[k] - mean[ch]) * inv_std[ch];
                gx[k] += g[ch] * inv_std[ch] / count * (count * o.grad[k] - sum_dy[ch] - xhat * sum_dy_xhat[ch]);
              } else {
                gx[k] += g[ch] * inv_std[ch] * o.grad[k];
              }
            }
      });
}

Trunk Trunk::init(const TrunkConfig& cfg, Rng& rng) {
  cfg.validate();
  Trunk t;
  t.cfg_ = cfg;
  std::size_t in = 3;
  for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
    const std::size_t out = cfg.channels[s];
    ConvLayer layer;
    layer.stride = cfg.stride(s);
    const std::size_t fan_in = in * cfg.kernel * cfg.kernel;
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    layer.weight = Tensor({out, in, cfg.kernel, cfg.kernel});
    for (double& w : layer.weight.mutable_data()) w = rng.normal(0.0, sd);
    layer.weight.set_requires_grad();
    layer.bias = Tensor::zeros({out});
    layer.bias.set_requires_grad();
    if (cfg.batch_norm) {
      layer.bn_gamma = Tensor::ones({out});
      layer.bn_gamma.set_requires_grad();
      layer.bn_beta = Tensor::zeros({out});
      layer.bn_beta.set_requires_grad();
      layer.running_mean.assign(out, 0.0);
      layer.running_var.assign(out, 1.0);
    }
    t.layers_.push_back(std::move(layer));
    in = out;
  }
  return t;
}

Tensor Trunk::forward(const Tensor& x, bool training) {
  if (x.ndim() != 4 || x.dim(1) != 3) throw ShapeError("trunk: expected [N,3,H,W], got " + shape_str(x.shape()));
  if (std::min(x.dim(2), x.dim(3)) < cfg_.min_resolution()) {
    throw PreconditionError("trunk: input " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                            " is below the minimum resolution " + std::to_string(cfg_.min_resolution()));
  }
  Tensor h = x;
  for (ConvLayer& layer : layers_) {
    if (cfg_.batch_norm) {
      h = conv2d(h, layer.weight, Tensor(), layer.stride, cfg_.kernel / 2);
      h = batch_norm(h, layer.bn_gamma, layer.bn_beta, layer.running_mean, layer.running_var, training);
    } else {
      h = conv2d(h, layer.weight, layer.bias, layer.stride, cfg_.kernel / 2);
    }
    h = relu(h);
  }
  return h;
}

Tensor Trunk::infer(const Tensor& x) const {
  Trunk view;
  view.cfg_ = cfg_;
  view.layers_ = layers_;  // shares tensors, copies the running buffers
  return view.forward(x, false);
}

std::vector<Tensor> Trunk::parameters(bool decayed_only) const {
  std::vector<Tensor> out;
  for (const ConvLayer& layer : layers_) {
    out.push_back(layer.weight);
    if (decayed_only) continue;
    if (cfg_.batch_norm) {
      out.push_back(layer.bn_gamma);
      out.push_back(layer.bn_beta);
    } else {
      out.push_back(layer.bias);
    }
  }
  return out;
}

Trunk Trunk::clone() const {
  Trunk t;
  t.cfg_ = cfg_;
  auto copy = [](const Tensor& src) {
    if (!src.defined()) return Tensor();
    Tensor c = src.detach();
    c.set_requires_grad(src.requires_grad());
    return c;
  };
  for (const ConvLayer& l : layers_) {
    t.layers_.push_back({copy(l.weight), copy(l.bias), l.stride, copy(l.bn_gamma), copy(l.bn_beta), l.running_mean,
                         l.running_var});
  }
  return t;
}

}  // namespace mg
