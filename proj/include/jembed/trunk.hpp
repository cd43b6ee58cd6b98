#pragma once

#include <cstddef>
#include <vector>

#include "jembed/rng.hpp"
#include "jembed/tensor.hpp"

namespace mg {

/// Plain conv stack: one 3x3 conv + ReLU per stage, stride 1 on the first
/// stage and 2 afterwards, "same" padding.
struct TrunkConfig {
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t kernel = 3;
  bool batch_norm = false;

  void validate() const;
  std::size_t embedding_dim() const { return channels.back(); }
  std::size_t stride(std::size_t stage) const { return stage == 0 ? 1 : 2; }
  /// Side of the final activation map for a square input of side `input`.
  std::size_t output_extent(std::size_t input) const;
  /// Smallest input side the trunk accepts: one pixel per downsampling step.
  std::size_t min_resolution() const;
};

/// Batch normalization over (N, H, W) per channel. In training mode batch
/// statistics are used and the running buffers updated; otherwise the
/// running statistics are used.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::vector<double>& running_mean,
                  std::vector<double>& running_var, bool training, double momentum = 0.1, double eps = 1e-5);

struct ConvLayer {
  Tensor weight;  ///< [out, in, k, k]
  Tensor bias;    ///< [out]
  std::size_t stride = 1;
  Tensor bn_gamma, bn_beta;  ///< defined only with batch norm
  std::vector<double> running_mean, running_var;
};

class Trunk {
 public:
  Trunk() = default;
  static Trunk init(const TrunkConfig& cfg, Rng& rng);

  /// x[N,3,H,W] -> non-negative activation maps [N,C,h,w].
  Tensor forward(const Tensor& x, bool training);
  /// Evaluation-mode forward; leaves batch-norm buffers untouched.
  Tensor infer(const Tensor& x) const;

  const TrunkConfig& config() const { return cfg_; }
  std::vector<ConvLayer>& layers() { return layers_; }
  const std::vector<ConvLayer>& layers() const { return layers_; }
  /// Every trainable tensor; `decayed` selects conv weights only.
  std::vector<Tensor> parameters(bool decayed_only = false) const;
  Trunk clone() const;

 private:
  TrunkConfig cfg_;
  std::vector<ConvLayer> layers_;
};

}  // namespace mg
