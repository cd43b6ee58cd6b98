#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jembed/tensor.hpp"

namespace mg {

/// One training image. `pixels` is [H,W,3] with values in [0,1].
struct ImageRecord {
  std::int64_t image_id = 0;
  int label = -1;  ///< -1 for unlabeled images
  Tensor pixels;

  std::size_t height() const { return pixels.dim(0); }
  std::size_t width() const { return pixels.dim(1); }
};

enum class Partition { train, val, distractor };
const char* partition_name(Partition p);

struct Dataset {
  std::size_t classes = 0;
  std::size_t image_size = 0;
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> val;
  /// Unlabeled images: whitening fit set and retrieval distractors.
  std::vector<ImageRecord> distractors;

  /// FNV-1a over ids, labels and pixel bytes of all partitions.
  std::string fingerprint() const;
};

struct SynthConfig {
  std::size_t classes = 20;
  std::size_t per_class = 50;     ///< labeled images per class (train + val)
  std::size_t image_size = 64;    ///< rendered resolution
  double val_fraction = 0.2;
  std::size_t distractors = 200;

  void validate() const;
};

/// Deterministic synthetic classification set. Each class is a fixed pair
/// of hues; its objects are two-tone primitives (a random shape in one hue
/// around a disc in the other). Every image draws its own background,
/// clutter, object count, shapes, placement, size, rotation and color
/// perturbation.
Dataset synth_dataset(const SynthConfig& cfg, std::uint64_t seed);

/// MGT1 image stack per partition plus manifest.csv (image_id,class,partition).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Bilinear resampling of the box [x0, x0+w) x [y0, y0+h) of an [H,W,3]
/// image to out_h x out_w, with half-pixel centers and edge clamping.
Tensor crop_resize(const Tensor& img, double x0, double y0, double w, double h,
                   std::size_t out_h, std::size_t out_w);
Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w);

/// Evaluation input protocol. At or below the base (training) resolution:
/// resize the short side to round(s*256/224) and take the central s x s
/// crop. Above it: resize the long side to s, keep the aspect, no crop.
Tensor prepare_eval_image(const Tensor& img, std::size_t resolution, std::size_t base_resolution);

/// Stacks [H,W,3] images into a normalized [N,3,H,W] network input.
Tensor to_network_input(const std::vector<Tensor>& images);

}  // namespace mg
