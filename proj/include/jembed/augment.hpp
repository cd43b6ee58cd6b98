#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "jembed/data.hpp"
#include "jembed/rng.hpp"
#include "jembed/tensor.hpp"

namespace mg {

/// Principal color axes for lighting noise. axes[k] is a unit RGB vector
/// and sigma[k] the color standard deviation along it, sorted descending.
struct LightingBasis {
  std::array<double, 3> sigma{0.0, 0.0, 0.0};
  std::array<std::array<double, 3>, 3> axes{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

  /// Pixel color covariance over a set of images.
  static LightingBasis fit(const std::vector<ImageRecord>& images);
};

struct AugmentConfig {
  bool flip = true;
  double scale_min = 0.08, scale_max = 1.0;
  double ratio_min = 3.0 / 4.0, ratio_max = 4.0 / 3.0;
  double brightness = 0.3, contrast = 0.3, saturation = 0.3;
  double lighting = 0.1;
  std::size_t output_size = 32;
  LightingBasis basis;

  /// Every transform disabled: the output is a plain bilinear resize.
  static AugmentConfig identity(std::size_t output_size);
  void validate() const;
};

struct CropBox {
  double x0 = 0, y0 = 0, w = 0, h = 0;
  bool fallback = false;  ///< no ratio draw fit the image
};

/// Random resized crop box. The area fraction is drawn once; the aspect
/// ratio is redrawn up to 10 times until the box fits, after which it is
/// clamped to the feasible range and the box is centered.
CropBox sample_crop(std::size_t height, std::size_t width, const AugmentConfig& cfg, Rng& rng);

/// Crop, flip, brightness/contrast/saturation jitter, lighting, clamp.
/// Deterministic in `seed`.
Tensor augment(const Tensor& pixels, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace mg
