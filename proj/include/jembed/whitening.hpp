#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "jembed/objectives.hpp"
#include "jembed/tensor.hpp"

namespace mg {

struct WhiteningConfig {
  /// Eigenvalues are clamped at floor_rel * (largest eigenvalue).
  double floor_rel = 1e-6;
  /// Covariance shrinkage toward (tr/d) I; 0 disables it.
  double shrinkage = 0.0;
  /// L2-normalize rows before fitting and applying. Off only for
  /// constructed data whose covariance is meant to be used as given.
  bool normalize = true;

  void validate() const;
};

/// Phi(e) = S (e/|e| - mu).
struct WhiteningTransform {
  std::size_t dim = 0;
  std::vector<double> mu;           ///< [d]
  std::vector<double> s;            ///< [d,d] row-major
  std::vector<double> eigenvalues;  ///< fit covariance spectrum, descending, unclamped
  double floor = 0.0;               ///< absolute eigenvalue floor actually applied
  std::size_t clamped = 0;          ///< eigenvalues raised to the floor
  bool normalize = true;
  double shrinkage = 0.0;
  std::size_t fit_count = 0;
  std::string fit_fingerprint;

  static WhiteningTransform identity(std::size_t d);
};

/// Covariance uses the 1/n convention. Rows must be nonzero.
WhiteningTransform fit_whitening(const Tensor& embeddings, const WhiteningConfig& cfg = {});

/// Whitens one embedding; throws DomainError on a zero vector.
std::vector<double> whiten(std::span<const double> e, const WhiteningTransform& t);
/// Row-wise whitening of [n,d].
Tensor apply_whitening(const Tensor& embeddings, const WhiteningTransform& t);

/// Classifier acting on whitened embeddings:
///   score_c(e) = |e| (<w'_c, Phi(e)> + b'_c) + bias_c
/// with w'_c = S^{-T} w_c, b'_c = <w_c, mu>, and bias_c the original head's
/// bias column. Without normalization the |e| factor is 1.
struct FoldedHead {
  std::size_t classes = 0, dim = 0;
  std::vector<double> weights;  ///< [K,d] row-major
  std::vector<double> offset;   ///< b'_c
  std::vector<double> bias;     ///< untouched bias column
  bool normalize = true;
};

/// Throws PreconditionError when S is singular.
FoldedHead fold_classifier(const ClassifierHead& head, const WhiteningTransform& t);

/// Scores [n,K] for raw embeddings, routed through Phi and the folded head.
Tensor folded_logits(const Tensor& embeddings, const FoldedHead& head, const WhiteningTransform& t);

/// Directory holding mu.mgt, s.mgt, eigenvalues.mgt and whitening.json.
void save_whitening(const WhiteningTransform& t, const std::filesystem::path& dir);
WhiteningTransform load_whitening(const std::filesystem::path& dir);

}  // namespace mg
