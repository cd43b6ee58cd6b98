#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "jembed/data.hpp"
#include "jembed/model.hpp"
#include "jembed/retrieval.hpp"

namespace mg {

enum class AdaptMode { sweep, finetune };

struct FinetuneConfig {
  std::size_t batch_size = 4;
  double momentum = 0.9;
  double lr = 0.005;
  double power = 0.9;          ///< lr_i = lr (1 - i/i_max)^power
  std::size_t per_class = 50;  ///< sample budget; classes with fewer images use all of them
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdaptConfig {
  std::size_t resolution = 64;  ///< s*
  std::vector<double> grid{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  AdaptMode mode = AdaptMode::sweep;
  FinetuneConfig finetune;

  void validate(const Model& model) const;
};

/// Activation maps of a fixed image set at one resolution. GeM with any
/// exponent can then be evaluated without re-running the trunk.
struct MapCache {
  std::vector<Tensor> chunks;  ///< [n_chunk, C, h, w] each
  std::size_t count = 0;

  static MapCache of_images(const Model& model, const std::vector<const Tensor*>& images, std::size_t resolution);
  static MapCache of_prepared(const Model& model, const std::vector<Tensor>& images);
  Tensor pool(double p, double eps) const;
};

struct SweepRow {
  double p = 0.0;
  double score = 0.0;
};

struct SweepResult {
  double best_p = 0.0;
  double best_score = 0.0;
  std::vector<SweepRow> table;  ///< one row per distinct grid value, ascending p
};

/// Scores each grid exponent on an IN-aug task whose copies were rendered
/// at `cfg.resolution`; ties go to the smaller p*.
SweepResult pstar_sweep(const Model& model, const InAugTask& task, const AdaptConfig& cfg);

struct FinetuneResult {
  double p_star = 0.0;
  std::size_t iterations = 0;
  std::vector<double> trajectory;  ///< p* after each iteration
};

/// SGD on p* alone against the frozen head's cross-entropy, one pass over
/// up to `per_class` images per class prepared at `cfg.resolution`.
FinetuneResult pstar_finetune(const Model& model, const std::vector<ImageRecord>& sample, const AdaptConfig& cfg);

struct CurveCell {
  std::size_t resolution = 0;
  double p = 0.0;
  double top1 = 0.0;
  std::optional<double> inaug;
};

/// Top-1 on `val` for every (resolution, p*) pair. When `inaug_records` is
/// non-null an IN-aug task is also built per resolution and scored.
std::vector<CurveCell> scale_accuracy_curve(const Model& model, const std::vector<ImageRecord>& val,
                                            const std::vector<std::size_t>& resolutions,
                                            const std::vector<double>& p_values,
                                            const std::vector<ImageRecord>* inaug_records = nullptr,
                                            const AugmentConfig* inaug_augment = nullptr,
                                            std::uint64_t inaug_seed = 0);

void write_sweep_csv(const SweepResult& r, const std::filesystem::path& path);
void write_curve_csv(const std::vector<CurveCell>& cells, const std::filesystem::path& path);

}  // namespace mg
