#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "jembed/data.hpp"
#include "jembed/gem.hpp"
#include "jembed/objectives.hpp"
#include "jembed/trunk.hpp"

namespace mg {

struct MarginConfig {
  double alpha = 0.2;
  double beta0 = 1.2;
  double beta_lr = 0.1;
  std::optional<double> tau;  ///< default 1/q(0.5)
};

/// Trunk + GeM + classifier head + margin state: everything a checkpoint holds.
struct Model {
  Trunk trunk;
  GemPooling gem;
  ClassifierHead head;
  MarginState margin;
  std::size_t train_resolution = 32;

  static Model init(const TrunkConfig& trunk, const GemConfig& gem, const MarginConfig& margin,
                    std::size_t classes, std::size_t train_resolution, Rng& rng);
  Model clone() const;
  std::size_t classes() const { return head.classes(); }
  std::size_t dim() const { return trunk.config().embedding_dim(); }
  /// Trunk parameters, head, p and beta, in a fixed order.
  std::vector<Tensor> tensors() const;
};

/// Directory of MGT1 tensors plus manifest.json.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

/// Evaluation-mode activation maps for a batch of network inputs, no gradient.
Tensor activation_maps(const Model& model, const Tensor& input);

/// Evaluation-mode embeddings of prepared network inputs [N,3,H,W].
Tensor embed_input(const Model& model, const Tensor& input, std::optional<double> p_star = std::nullopt);

/// Embeddings [n,d] of raw [H,W,3] images under the evaluation protocol at
/// resolution s, pooled with p* (the trained p when unset).
Tensor embed_images(const Model& model, const std::vector<const Tensor*>& images, std::size_t resolution,
                    std::optional<double> p_star = std::nullopt, std::size_t chunk = 64);
Tensor embed_records(const Model& model, const std::vector<ImageRecord>& records, std::size_t resolution,
                     std::optional<double> p_star = std::nullopt);

/// argmax of the head's logits per row (ties to the lower class index).
std::vector<int> predict(const ClassifierHead& head, const Tensor& emb);
double top1_accuracy(const ClassifierHead& head, const Tensor& emb, const std::vector<ImageRecord>& records);

}  // namespace mg
