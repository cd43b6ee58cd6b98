#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jembed/augment.hpp"
#include "jembed/data.hpp"
#include "jembed/model.hpp"
#include "jembed/tensor.hpp"

namespace mg {

struct Neighbor {
  std::size_t row = 0;
  std::int64_t image_id = 0;
  double similarity = 0.0;
};

/// Exact cosine-similarity index. Rows are L2-normalized on build.
class RetrievalIndex {
 public:
  RetrievalIndex() = default;
  /// `instance_ids` and `distractor` may be empty (all -1 / false).
  static RetrievalIndex build(const Tensor& embeddings, std::vector<std::int64_t> image_ids,
                              std::vector<std::int64_t> instance_ids = {}, std::vector<bool> distractor = {});

  std::size_t size() const { return image_ids_.size(); }
  std::size_t dim() const { return dim_; }
  std::span<const double> row(std::size_t i) const { return {rows_.data() + i * dim_, dim_}; }
  std::int64_t image_id(std::size_t i) const { return image_ids_[i]; }
  std::int64_t instance_id(std::size_t i) const { return instance_ids_[i]; }
  bool is_distractor(std::size_t i) const { return distractor_[i]; }
  /// Row holding `image_id`, if any.
  std::optional<std::size_t> find(std::int64_t image_id) const;

  /// Every row except `exclude_id`, by decreasing similarity, ties by
  /// ascending image id.
  std::vector<Neighbor> rank(std::span<const double> query, std::optional<std::int64_t> exclude_id = {}) const;
  /// First k entries of rank(). Throws when fewer than k candidates remain.
  std::vector<Neighbor> knn(std::span<const double> query, std::size_t k,
                            std::optional<std::int64_t> exclude_id = {}) const;

 private:
  std::size_t dim_ = 0;
  std::vector<double> rows_;
  std::vector<std::int64_t> image_ids_, instance_ids_;
  std::vector<bool> distractor_;
};

/// Precision averaged over the ranks of the relevant items in a full ranking.
double average_precision(std::span<const bool> relevant_in_rank_order);

struct RetrievalQuery {
  std::vector<double> embedding;
  std::optional<std::int64_t> image_id;  ///< excluded from its own ranking
  std::vector<std::int64_t> relevant;    ///< image ids of the relevant rows
};

/// Throws PreconditionError for a query with no relevant row in the index.
double mean_average_precision(const RetrievalIndex& index, const std::vector<RetrievalQuery>& queries);

/// Every row queries the index; the query itself is one of the 4 returned
/// neighbours. Groups are instance ids and must hold exactly 4 rows.
double ukb_score(const RetrievalIndex& index);

/// Copy detection: each query has exactly one relevant original; distractor
/// rows and other originals count as irrelevant.
double copydetect_map(const RetrievalIndex& index, const Tensor& query_embeddings,
                      std::span<const std::int64_t> original_ids);

/// Proxy task: originals are the queries, and the database holds
/// `copies` augmented versions of each.
struct InAugTask {
  std::size_t copies = 5;
  std::vector<std::int64_t> query_ids;
  std::vector<const Tensor*> originals;
  std::vector<Tensor> copy_images;         ///< query-major: copies of query q at [q*copies, (q+1)*copies)
  std::vector<std::int64_t> copy_ids;
  std::vector<std::int64_t> copy_owner;    ///< owning query id
  std::string fingerprint() const;
};

/// Picks `per_class` images per class (seeded) and augments each `copies`
/// times. `records` must outlive the task.
InAugTask inaug_build(const std::vector<ImageRecord>& records, std::size_t per_class, const AugmentConfig& augment,
                      std::uint64_t seed, std::size_t copies = 5);

/// Mean over queries of own copies among the top `copies` database items.
double inaug_score(const Tensor& query_embeddings, const Tensor& copy_embeddings, const InAugTask& task);

/// Strong distortion used for the synthetic copy-detection queries.
AugmentConfig copydetect_distortion(std::size_t output_size, const LightingBasis& basis);

/// Embeddings of images that are already network-sized (no eval protocol).
Tensor embed_prepared(const Model& model, const std::vector<Tensor>& images,
                      std::optional<double> p_star = std::nullopt, std::size_t chunk = 64);

struct EvalReport {
  std::string metric;
  double value = 0.0;
  std::string dataset_fingerprint;
  std::size_t resolution = 0;
  double p_star = 0.0;
  double lambda = 0.0;
  bool whitening = false;

  /// Upper end of the metric's range (1 for mAP/accuracy, 4 for UKB, 5 for IN-aug).
  static double max_value(const std::string& metric);
  /// Throws PreconditionError when the value is outside [0, max].
  void check() const;
  std::string to_json() const;
};

}  // namespace mg
