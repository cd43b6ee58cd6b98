#include "jembed/augment.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "jembed/error.hpp"

namespace mg {

LightingBasis LightingBasis::fit(const std::vector<ImageRecord>& images) {
  if (images.empty()) throw PreconditionError("lighting basis: no images");
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  Eigen::Matrix3d outer = Eigen::Matrix3d::Zero();
  double count = 0;
  for (const ImageRecord& r : images) {
    const auto px = r.pixels.data();
    for (std::size_t p = 0; p + 2 < px.size(); p += 3) {
      const Eigen::Vector3d v(px[p], px[p + 1], px[p + 2]);
      sum += v;
      outer += v * v.transpose();
      count += 1;
    }
  }
  const Eigen::Vector3d mean = sum / count;
  const Eigen::Matrix3d cov = outer / count - mean * mean.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  LightingBasis b;
  for (int k = 0; k < 3; ++k) {
    const int src = 2 - k;  // ascending -> descending
    Eigen::Vector3d v = es.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    b.sigma[k] = std::sqrt(std::max(0.0, es.eigenvalues()(src)));
    for (int c = 0; c < 3; ++c) b.axes[k][c] = v(c);
  }
  return b;
}

AugmentConfig AugmentConfig::identity(std::size_t output_size) {
  AugmentConfig c;
  c.flip = false;
  c.scale_min = c.scale_max = 1.0;
  c.ratio_min = c.ratio_max = 1.0;
  c.brightness = c.contrast = c.saturation = 0.0;
  c.lighting = 0.0;
  c.output_size = output_size;
  return c;
}

void AugmentConfig::validate() const {
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
    throw ConfigError("augment: scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(ratio_min > 0.0 && ratio_min <= ratio_max)) throw ConfigError("augment: ratio range must be positive");
  for (double j : {brightness, contrast, saturation}) {
    if (!(j >= 0.0 && j < 1.0)) throw ConfigError("augment: jitter strength must be in [0,1)");
  }
  if (!(lighting >= 0.0)) throw ConfigError("augment: lighting must be non-negative");
  if (output_size == 0) throw ConfigError("augment: output size must be positive");
}

CropBox sample_crop(std::size_t height, std::size_t width, const AugmentConfig& cfg, Rng& rng) {
  const double H = static_cast<double>(height), W = static_cast<double>(width);
  const double area = H * W;
  const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double target = s * area;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double r = rng.uniform(cfg.ratio_min, cfg.ratio_max);
    const double w = std::sqrt(target * r), h = std::sqrt(target / r);
    if (w <= W && h <= H) {
      return {rng.uniform(0.0, W - w), rng.uniform(0.0, H - h), w, h, false};
    }
  }
  // Feasible ratios for this area: w <= W and h <= H.
  const double lo = std::max(cfg.ratio_min, target / (H * H));
  const double hi = std::min(cfg.ratio_max, (W * W) / target);
  const double r = lo <= hi ? std::clamp(1.0, lo, hi) : (cfg.ratio_min > hi ? hi : lo);
  const double w = std::min(W, std::sqrt(target * r)), h = std::min(H, std::sqrt(target / r));
  return {(W - w) / 2, (H - h) / 2, w, h, true};
}

namespace {

double luminance(const double* p) { return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]; }

void clamp01(std::vector<double>& v) {
  for (double& x : v) x = std::clamp(x, 0.0, 1.0);
}

}  // namespace

Tensor augment(const Tensor& pixels, const AugmentConfig& cfg, std::uint64_t seed) {
  if (pixels.ndim() != 3 || pixels.dim(2) != 3) throw ShapeError("augment: expected [H,W,3], got " + shape_str(pixels.shape()));
  if (pixels.dim(0) < 8 || pixels.dim(1) < 8) throw PreconditionError("augment: image smaller than 8x8");
  Rng rng(seed);
  const CropBox box = sample_crop(pixels.dim(0), pixels.dim(1), cfg, rng);
  const std::size_t S = cfg.output_size;
  Tensor out = crop_resize(pixels, box.x0, box.y0, box.w, box.h, S, S);
  std::vector<double> px(out.data().begin(), out.data().end());

  const bool flip = rng.uniform() < 0.5;
  if (cfg.flip && flip) {
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < S / 2; ++j) {
        for (std::size_t k = 0; k < 3; ++k) std::swap(px[(i * S + j) * 3 + k], px[(i * S + S - 1 - j) * 3 + k]);
      }
    }
  }

  const double b = rng.uniform(1 - cfg.brightness, 1 + cfg.brightness);
  const double c = rng.uniform(1 - cfg.contrast, 1 + cfg.contrast);
  const double s = rng.uniform(1 - cfg.saturation, 1 + cfg.saturation);
  const double alpha[3] = {rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)};

  if (cfg.brightness > 0) {
    for (double& v : px) v *= b;
    clamp01(px);
  }
  if (cfg.contrast > 0) {
    double mean = 0;
    for (std::size_t p = 0; p < S * S; ++p) mean += luminance(&px[p * 3]);
    mean /= static_cast<double>(S * S);
    for (double& v : px) v = (v - mean) * c + mean;
    clamp01(px);
  }
  if (cfg.saturation > 0) {
    for (std::size_t p = 0; p < S * S; ++p) {
      const double g = luminance(&px[p * 3]);
      for (std::size_t k = 0; k < 3; ++k) px[p * 3 + k] = (px[p * 3 + k] - g) * s + g;
    }
    clamp01(px);
  }
  if (cfg.lighting > 0) {
    double shift[3] = {0, 0, 0};
    for (int a = 0; a < 3; ++a) {
      const double mag = alpha[a] * cfg.lighting * cfg.basis.sigma[a];
      for (int k = 0; k < 3; ++k) shift[k] += mag * cfg.basis.axes[a][k];
    }
    for (std::size_t p = 0; p < S * S; ++p) {
      for (std::size_t k = 0; k < 3; ++k) px[p * 3 + k] += shift[k];
    }
  }
  clamp01(px);
  return Tensor({S, S, 3}, std::move(px));
}

}  // namespace mg
