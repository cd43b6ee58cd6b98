#include "jembed/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "jembed/error.hpp"
#include "jembed/ops.hpp"

namespace mg {

ClassifierHead ClassifierHead::init(std::size_t classes, std::size_t dim, Rng& rng) {
  if (classes < 2 || dim == 0) throw ConfigError("classifier: need >= 2 classes and dim > 0");
  std::vector<double> w(classes * (dim + 1), 0.0);
  const double sd = std::sqrt(2.0 / static_cast<double>(dim));
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < dim; ++k) w[c * (dim + 1) + k] = rng.normal(0.0, sd);
  ClassifierHead head{Tensor({classes, dim + 1}, std::move(w))};
  head.weights.set_requires_grad(true);
  return head;
}

Tensor classifier_logits(const Tensor& emb, const ClassifierHead& head) {
  if (emb.ndim() != 2 || emb.dim(1) != head.dim()) {
    throw ShapeError("classifier_logits: embeddings " + shape_str(emb.shape()) +
                     " do not match head " + shape_str(head.weights.shape()));
  }
  Tensor augmented = concat({emb, Tensor::ones({emb.dim(0), 1})}, 1);
  return matmul(augmented, transpose(head.weights));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: logits must be [N,K], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw PreconditionError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(k) + ")");
    }
  }
  auto lv = logits.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = cross_entropy_value(lv.subspan(i * k, k), labels[i]);
  std::vector<int> ys(labels.begin(), labels.end());
  return detail::make_result("cross_entropy", {n}, std::move(out), {logits},
                             [logits, ys, n, k](detail::TensorNode& o) {
                               if (!logits.requires_grad()) return;
                               auto lv = logits.data();
                               auto g = detail::grad_buffer(*logits.node());
                               for (std::size_t i = 0; i < n; ++i) {
                                 const double* row = lv.data() + i * k;
                                 const double m = *std::max_element(row, row + k);
                                 double z = 0.0;
                                 for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - m);
                                 for (std::size_t c = 0; c < k; ++c) {
                                   const double prob = std::exp(row[c] - m) / z;
                                   const double target = static_cast<std::size_t>(ys[i]) == c ? 1.0 : 0.0;
                                   g[i * k + c] += o.grad[i] * (prob - target);
                                 }
                               }
                             });
}

double cross_entropy_value(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw PreconditionError("cross_entropy: label out of range");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  return m + std::log(z) - logits[static_cast<std::size_t>(label)];
}

MarginState MarginState::make(std::size_t dim, double alpha, double beta0, double beta_lr,
                              std::optional<double> tau) {
  MarginState s;
  s.alpha = alpha;
  s.beta = Tensor::scalar(beta0);
  s.beta.set_requires_grad(true);
  s.beta_lr = beta_lr;
  s.dim = dim;
  s.tau = tau ? *tau : default_tau(dim);
  s.validate();
  return s;
}

void MarginState::project_beta(double floor) {
  auto b = beta.mutable_data();
  if (!(b[0] > 0.0)) b[0] = floor;
}

void MarginState::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("margin: alpha must be positive");
  if (!beta.defined() || !(beta.item() > 0.0)) throw ConfigError("margin: beta must be positive");
  if (dim < 2) throw ConfigError("margin: embedding dimension must be >= 2");
  if (!(tau > 0.0)) throw ConfigError("margin: tau must be positive");
  if (!(d_min > 0.0 && d_min < 1.0)) throw ConfigError("margin: d_min must lie in (0, 1)");
  if (beta_lr < 0.0) throw ConfigError("margin: beta learning rate must be >= 0");
}

double normalized_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("normalized_distance: length mismatch");
  double na = 0.0, nb = 0.0;
  for (double v : a) na += v * v;
  for (double v : b) nb += v * v;
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (!(na > 0.0) || !(nb > 0.0)) throw DomainError("normalized_distance: zero-norm embedding");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] / na - b[k] / nb;
    s += d * d;
  }
  return std::sqrt(s);
}

double log_negative_density(double z, std::size_t d) {
  if (!(z > 0.0 && z < 2.0)) throw DomainError("negative_density: z = " + std::to_string(z) + " outside (0, 2)");
  if (d < 2) throw DomainError("negative_density: dimension must be >= 2");
  const double dd = static_cast<double>(d);
  return (dd - 2.0) * std::log(z) + 0.5 * (dd - 3.0) * std::log(1.0 - 0.25 * z * z);
}

double negative_density(double z, std::size_t d) { return std::exp(log_negative_density(z, d)); }

double default_tau(std::size_t d) { return std::exp(-log_negative_density(0.5, d)); }

namespace {

std::vector<double> row_distances(const Tensor& emb, std::size_t anchor) {
  const std::size_t n = emb.dim(0), d = emb.dim(1);
  auto ev = emb.data();
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (j == anchor) continue;
    out[j] = normalized_distance(ev.subspan(anchor * d, d), ev.subspan(j * d, d));
  }
  return out;
}

void check_batch(const Tensor& emb, std::span<const std::int64_t> instance) {
  if (emb.ndim() != 2) throw ShapeError("sample_pairs: embeddings must be [N,d], got " + shape_str(emb.shape()));
  if (instance.size() != emb.dim(0)) {
    throw ShapeError("sample_pairs: " + std::to_string(instance.size()) + " instance ids for " +
                     std::to_string(emb.dim(0)) + " embeddings");
  }
}

}  // namespace

std::vector<double> negative_probabilities(const Tensor& emb, std::span<const std::int64_t> instance,
                                           std::size_t anchor, const MarginState& state) {
  check_batch(emb, instance);
  const std::size_t n = emb.dim(0);
  if (anchor >= n) throw PreconditionError("negative_probabilities: anchor out of range");
  const std::vector<double> dist = row_distances(emb, anchor);
  const double log_tau = std::log(state.tau);
  std::vector<double> logw(n, -INFINITY);
  double top = -INFINITY;
  for (std::size_t j = 0; j < n; ++j) {
    if (instance[j] == instance[anchor]) continue;
    const double z = std::clamp(dist[j], state.d_min, 2.0 - state.d_min);
    logw[j] = std::min(log_tau, -log_negative_density(z, state.dim));
    top = std::max(top, logw[j]);
  }
  if (top == -INFINITY) {
    throw PreconditionError("sample_pairs: instance " + std::to_string(instance[anchor]) +
                            " has no negatives in the batch");
  }
  std::vector<double> prob(n, 0.0);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (logw[j] == -INFINITY) continue;
    prob[j] = std::exp(logw[j] - top);
    z += prob[j];
  }
  for (double& v : prob) v /= z;
  return prob;
}

PairSet sample_pairs(const Tensor& emb, std::span<const std::int64_t> instance,
                     const MarginState& state, Rng& rng) {
  check_batch(emb, instance);
  const std::size_t n = emb.dim(0);
  PairSet out;
  out.batch_size = n;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (instance[i] == instance[j]) out.positives.push_back({i, j});
  if (out.positives.empty()) {
    throw PreconditionError("sample_pairs: batch has no positive pair (check the batch sampler)");
  }
  // Sampling laws are per anchor; cache them.
  std::vector<std::vector<double>> law(n);
  for (const IndexPair& pos : out.positives) {
    auto& p = law[pos.i];
    if (p.empty()) p = negative_probabilities(emb, instance, pos.i, state);
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = n;
    std::size_t last = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (p[j] <= 0.0) continue;
      last = j;
      acc += p[j];
      if (u < acc) {
        pick = j;
        break;
      }
    }
    if (pick == n) pick = last;  // rounding at the top of the cumulative sum
    out.negatives.push_back({pos.i, pick});
  }
  return out;
}

Tensor margin_loss(const Tensor& emb, const Tensor& beta, const PairSet& pairs, double alpha) {
  if (emb.ndim() != 2) throw ShapeError("margin_loss: embeddings must be [N,d], got " + shape_str(emb.shape()));
  if (!beta.defined() || beta.numel() != 1) throw ShapeError("margin_loss: beta must have one element");
  if (pairs.empty()) throw PreconditionError("margin_loss: empty pair set");
  const std::size_t n = emb.dim(0), d = emb.dim(1);
  auto ev = emb.data();
  std::vector<double> norms(n), unit(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += ev[i * d + k] * ev[i * d + k];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw DomainError("margin_loss: zero-norm embedding at row " + std::to_string(i));
    for (std::size_t k = 0; k < d; ++k) unit[i * d + k] = ev[i * d + k] / norms[i];
  }
  struct Term {
    std::size_t i, j;
    int y;
    double dist;
  };
  std::vector<Term> terms;
  terms.reserve(pairs.size());
  for (const auto& p : pairs.positives) terms.push_back({p.i, p.j, +1, 0.0});
  for (const auto& p : pairs.negatives) terms.push_back({p.i, p.j, -1, 0.0});
  const double b = beta.item();
  std::vector<double> out(terms.size());
  for (std::size_t t = 0; t < terms.size(); ++t) {
    Term& tm = terms[t];
    if (tm.i >= n || tm.j >= n) throw PreconditionError("margin_loss: pair index out of range");
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = unit[tm.i * d + k] - unit[tm.j * d + k];
      s += diff * diff;
    }
    tm.dist = std::sqrt(s);
    out[t] = std::max(0.0, alpha + tm.y * (tm.dist - b));
  }
  return detail::make_result(
      "margin_loss", {terms.size()}, std::move(out), {emb, beta},
      [emb, beta, terms, norms, unit, n, d](detail::TensorNode& o) {
        std::vector<double> du(emb.requires_grad() ? n * d : 0, 0.0);
        double dbeta = 0.0;
        for (std::size_t t = 0; t < terms.size(); ++t) {
          if (!(o.data[t] > 0.0) || o.grad[t] == 0.0) continue;  // inactive hinge
          const Term& tm = terms[t];
          const double g = o.grad[t] * tm.y;
          dbeta -= g;
          if (du.empty() || tm.dist == 0.0) continue;
          for (std::size_t k = 0; k < d; ++k) {
            const double v = g * (unit[tm.i * d + k] - unit[tm.j * d + k]) / tm.dist;
            du[tm.i * d + k] += v;
            du[tm.j * d + k] -= v;
          }
        }
        if (beta.requires_grad()) detail::grad_buffer(*beta.node())[0] += dbeta;
        if (du.empty()) return;
        auto ge = detail::grad_buffer(*emb.node());
        for (std::size_t i = 0; i < n; ++i) {
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += du[i * d + k] * unit[i * d + k];
          for (std::size_t k = 0; k < d; ++k)
            ge[i * d + k] += (du[i * d + k] - dot * unit[i * d + k]) / norms[i];
        }
      });
}

double margin_loss_value(std::span<const double> ei, std::span<const double> ej, double alpha,
                         double beta, int y) {
  if (y != 1 && y != -1) throw PreconditionError("margin_loss: label must be +1 or -1");
  return std::max(0.0, alpha + y * (normalized_distance(ei, ej) - beta));
}

JointLoss joint_loss(const Tensor& emb, std::span<const int> labels, const PairSet* pairs,
                     const ClassifierHead& head, const MarginState& state, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw PreconditionError("joint_loss: lambda must lie in [0, 1]");
  JointLoss out;
  if (lambda > 0.0) {
    out.classification = scale(mean(cross_entropy(classifier_logits(emb, head), labels)), lambda);
  }
  if (lambda < 1.0) {
    if (!pairs || pairs->empty()) throw PreconditionError("joint_loss: lambda < 1 requires a non-empty pair set");
    out.retrieval = scale(mean(margin_loss(emb, state.beta, *pairs, state.alpha)), 1.0 - lambda);
  }
  if (out.classification.defined() && out.retrieval.defined()) {
    out.total = add(out.classification, out.retrieval);
  } else {
    out.total = out.classification.defined() ? out.classification : out.retrieval;
  }
  return out;
}

double gradient_fraction(const Tensor& emb, std::span<const int> labels, const PairSet& pairs,
                         const ClassifierHead& head, const MarginState& state, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw PreconditionError("gradient_fraction: requires 0 < lambda < 1");
  }
  ClassifierHead frozen{head.weights.detach()};
  const Tensor beta = state.beta.detach();
  auto grad_norm = [&](bool classification) {
    Tensor leaf = emb.detach();
    leaf.set_requires_grad(true);
    Tape tape;
    TapeGuard guard(tape);
    Tensor term = classification
                      ? scale(mean(cross_entropy(classifier_logits(leaf, frozen), labels)), lambda)
                      : scale(mean(margin_loss(leaf, beta, pairs, state.alpha)), 1.0 - lambda);
    tape.backward(term);
    double s = 0.0;
    if (leaf.has_grad())
      for (double g : leaf.grad()) s += g * g;
    return std::sqrt(s);
  };
  const double gc = grad_norm(true);
  const double gr = grad_norm(false);
  if (gc + gr == 0.0) return 0.5;
  return gc / (gc + gr);
}

}  // namespace mg
