#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mg {

enum class ToySampling { uniform, paired };
enum class FlipAxis { y, x };

const char* toy_sampling_name(ToySampling s);

/// Two 2-D Gaussians (means (0, +-mean_offset), unit variance) separated by
/// a bias-free linear SVM trained with hinge loss.
struct ToyConfig {
  std::size_t per_class = 100;
  double mean_offset = 1.0;
  double sigma = 1.0;
  std::size_t batch_size = 2;
  std::size_t runs = 100;
  double lr = 0.05;
  std::size_t test_size = 2000;
  /// FlipAxis::y negates the second coordinate, (x, y) -> (x, -y); the
  /// flipped point keeps its original label. FlipAxis::x negates the first.
  FlipAxis flip = FlipAxis::y;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Test accuracy before training (entry 0) and after each iteration of one
/// pass over the 4N augmented points.
std::vector<double> toy_run(const ToyConfig& cfg, ToySampling mode, std::size_t run_index);

struct ToyComparison {
  ToySampling a = ToySampling::paired, b = ToySampling::uniform;
  std::vector<double> mean_a, std_a, mean_b, std_b;  ///< per iteration
  double final_a = 0.0, final_b = 0.0;               ///< mean final accuracy
  double mean_diff = 0.0;                            ///< mean over runs of final_a - final_b
  double std_diff = 0.0;
  double stderr_diff = 0.0;
};

/// Runs both modes on identical per-run datasets and initializations.
ToyComparison toy_compare(const ToyConfig& cfg, ToySampling a = ToySampling::paired,
                          ToySampling b = ToySampling::uniform);

void write_toy_curves(const ToyComparison& c, const std::filesystem::path& path);
std::string toy_summary_json(const ToyConfig& cfg, const ToyComparison& c);

}  // namespace mg
