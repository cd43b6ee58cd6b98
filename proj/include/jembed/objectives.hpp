#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "jembed/rng.hpp"
#include "jembed/tensor.hpp"

namespace mg {

/// Linear classifier over embeddings augmented with a constant 1 channel:
/// weights are [classes, dim + 1] and the last column acts as the bias.
struct ClassifierHead {
  Tensor weights;

  /// He-style fan-in initialization, zero bias column.
  static ClassifierHead init(std::size_t classes, std::size_t dim, Rng& rng);
  std::size_t classes() const { return weights.dim(0); }
  std::size_t dim() const { return weights.dim(1) - 1; }
};

/// logits[N,K] = [emb, 1] * W^T
Tensor classifier_logits(const Tensor& emb, const ClassifierHead& head);

/// Per-sample cross-entropy [N] of logits [N,K] against labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
double cross_entropy_value(std::span<const double> logits, int label);

/// Margin loss hyper-parameters and the trainable boundary beta.
struct MarginState {
  double alpha = 0.2;
  Tensor beta;            ///< one-element leaf, requires grad
  double beta_lr = 0.1;
  double tau = 0.0;       ///< sampling clamp on 1/q
  std::size_t dim = 0;    ///< embedding dimension d
  double d_min = 1e-4;    ///< distance floor before density evaluation

  /// tau defaults to 1/q(0.5) for the given dimension.
  static MarginState make(std::size_t dim, double alpha = 0.2, double beta0 = 1.2,
                          double beta_lr = 0.1, std::optional<double> tau = std::nullopt);
  double beta_value() const { return beta.item(); }
  /// Keeps beta strictly positive after an update.
  void project_beta(double floor = 1e-6);
  void validate() const;
};

/// ||a/|a| - b/|b|||. Zero vectors are a domain error.
double normalized_distance(std::span<const double> a, std::span<const double> b);

/// Unnormalized density of distances between random points on the unit
/// sphere in R^d: z^(d-2) (1 - z^2/4)^((d-3)/2), for 0 < z < 2.
double negative_density(double z, std::size_t d);
double log_negative_density(double z, std::size_t d);
double default_tau(std::size_t d);

struct IndexPair {
  std::size_t i = 0, j = 0;
  friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

/// Pairs selected for the margin loss. positives[k] and negatives[k] share
/// the anchor i.
struct PairSet {
  std::vector<IndexPair> positives;
  std::vector<IndexPair> negatives;
  std::size_t batch_size = 0;

  std::size_t size() const { return positives.size() + negatives.size(); }
  bool empty() const { return positives.empty(); }
};

/// Exact sampling law of the negative for `anchor`: entry j is
/// min(tau, 1/q(D_ij)) normalized over non-matching batch members, 0 elsewhere.
std::vector<double> negative_probabilities(const Tensor& emb, std::span<const std::int64_t> instance,
                                           std::size_t anchor, const MarginState& state);

/// All matching unordered pairs (i < j) plus one distance-weighted negative
/// per positive, drawn for anchor i.
PairSet sample_pairs(const Tensor& emb, std::span<const std::int64_t> instance,
                     const MarginState& state, Rng& rng);

/// Per-pair margin losses [positives..., negatives...] for emb[N,d].
Tensor margin_loss(const Tensor& emb, const Tensor& beta, const PairSet& pairs, double alpha);
double margin_loss_value(std::span<const double> ei, std::span<const double> ej, double alpha,
                         double beta, int y);

struct JointLoss {
  Tensor total;
  Tensor classification;  ///< lambda/|B| * sum ce, undefined when lambda == 0
  Tensor retrieval;       ///< (1-lambda)/|P| * sum margin, undefined when lambda == 1
};

/// lambda/|B| sum ce + (1-lambda)/|P(B)| sum margin. `pairs` may be null
/// only when lambda == 1.
JointLoss joint_loss(const Tensor& emb, std::span<const int> labels, const PairSet* pairs,
                     const ClassifierHead& head, const MarginState& state, double lambda);

/// ||g_class|| / (||g_class|| + ||g_retr||), gradients taken with respect to
/// the embeddings in two separate backward passes. Requires 0 < lambda < 1.
double gradient_fraction(const Tensor& emb, std::span<const int> labels, const PairSet& pairs,
                         const ClassifierHead& head, const MarginState& state, double lambda);

}  // namespace mg
