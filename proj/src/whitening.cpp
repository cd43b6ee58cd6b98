#include "jembed/whitening.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "jembed/error.hpp"
#include "jembed/hash.hpp"
#include "jembed/mgt1.hpp"

namespace mg {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double norm_of(std::span<const double> e) {
  double s = 0.0;
  for (double v : e) s += v * v;
  return std::sqrt(s);
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.ndim() != 2) throw ShapeError(std::string(what) + ": expected [n,d], got " + shape_str(t.shape()));
}

}  // namespace

void WhiteningConfig::validate() const {
  if (!(floor_rel >= 0.0)) throw ConfigError("whitening: floor must be non-negative");
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) throw ConfigError("whitening: shrinkage must lie in [0, 1]");
}

WhiteningTransform WhiteningTransform::identity(std::size_t d) {
  WhiteningTransform t;
  t.dim = d;
  t.mu.assign(d, 0.0);
  t.s.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) t.s[i * d + i] = 1.0;
  t.eigenvalues.assign(d, 1.0);
  return t;
}

WhiteningTransform fit_whitening(const Tensor& embeddings, const WhiteningConfig& cfg) {
  cfg.validate();
  require_matrix(embeddings, "fit-whitening");
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  if (n < 2 || d == 0) throw PreconditionError("fit-whitening: need at least 2 embeddings of positive dimension");

  Mat x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = embeddings.data().subspan(i * d, d);
    const double nrm = norm_of(row);
    if (!(nrm > 0.0)) throw DomainError("fit-whitening: embedding " + std::to_string(i) + " is zero");
    const double scale = cfg.normalize ? 1.0 / nrm : 1.0;
    for (std::size_t j = 0; j < d; ++j) x(i, j) = row[j] * scale;
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  Mat cov = (x.transpose() * x) / static_cast<double>(n);
  if (cfg.shrinkage > 0.0) {
    const double target = cov.trace() / static_cast<double>(d);
    cov *= 1.0 - cfg.shrinkage;
    cov.diagonal().array() += cfg.shrinkage * target;
  }

  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  if (eig.info() != Eigen::Success) throw PreconditionError("fit-whitening: eigendecomposition failed");
  // Descending order.
  Eigen::VectorXd values = eig.eigenvalues().reverse();
  Mat vectors = eig.eigenvectors().rowwise().reverse();

  WhiteningTransform t;
  t.dim = d;
  t.normalize = cfg.normalize;
  t.shrinkage = cfg.shrinkage;
  t.fit_count = n;
  t.mu.assign(mu.data(), mu.data() + d);
  t.eigenvalues.assign(values.data(), values.data() + d);
  t.floor = cfg.floor_rel * std::max(values(0), 0.0);
  t.s.assign(d * d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    Eigen::Index arg = 0;
    vectors.col(static_cast<Eigen::Index>(k)).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, static_cast<Eigen::Index>(k)) < 0) vectors.col(static_cast<Eigen::Index>(k)) *= -1.0;
    double lam = values(static_cast<Eigen::Index>(k));
    if (lam < t.floor) {
      lam = t.floor;
      ++t.clamped;
    }
    // A zero floor on a singular spectrum leaves a zero row; folding rejects it.
    const double scale = lam > 0.0 ? 1.0 / std::sqrt(lam) : 0.0;
    for (std::size_t j = 0; j < d; ++j)
      t.s[k * d + j] = scale * vectors(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
  }
  std::uint64_t h = fnv1a(std::string_view("whitening-fit"));
  const double dims[2] = {static_cast<double>(n), static_cast<double>(d)};
  h = fnv1a(std::span<const double>(dims, 2), h);
  t.fit_fingerprint = hex64(fnv1a(embeddings.data(), h));
  return t;
}

std::vector<double> whiten(std::span<const double> e, const WhiteningTransform& t) {
  const std::size_t d = t.dim;
  if (e.size() != d) {
    throw ShapeError("whiten: embedding has " + std::to_string(e.size()) + " values, transform expects " +
                     std::to_string(d));
  }
  const double nrm = norm_of(e);
  if (!(nrm > 0.0)) throw DomainError("whiten: zero embedding");
  const double scale = t.normalize ? 1.0 / nrm : 1.0;
  std::vector<double> centred(d), out(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) centred[j] = e[j] * scale - t.mu[j];
  for (std::size_t k = 0; k < d; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += t.s[k * d + j] * centred[j];
    out[k] = acc;
  }
  return out;
}

Tensor apply_whitening(const Tensor& embeddings, const WhiteningTransform& t) {
  require_matrix(embeddings, "apply-whitening");
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  std::vector<double> out;
  out.reserve(n * t.dim);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> w = whiten(embeddings.data().subspan(i * d, d), t);
    out.insert(out.end(), w.begin(), w.end());
  }
  return Tensor({n, t.dim}, std::move(out));
}

FoldedHead fold_classifier(const ClassifierHead& head, const WhiteningTransform& t) {
  const std::size_t k = head.classes(), d = head.dim();
  if (d != t.dim) {
    throw ShapeError("fold: head dimension " + std::to_string(d) + " does not match transform dimension " +
                     std::to_string(t.dim));
  }
  const Eigen::Map<const Mat> s(t.s.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  const Eigen::FullPivLU<Mat> lu(s.transpose());
  if (!lu.isInvertible()) throw PreconditionError("fold: whitening matrix is singular");

  FoldedHead f;
  f.classes = k;
  f.dim = d;
  f.normalize = t.normalize;
  f.weights.resize(k * d);
  f.offset.resize(k);
  f.bias.resize(k);
  const auto w = head.weights.data();
  Eigen::VectorXd wc(d);
  for (std::size_t c = 0; c < k; ++c) {
    double dot_mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      wc(static_cast<Eigen::Index>(j)) = w[c * (d + 1) + j];
      dot_mu += w[c * (d + 1) + j] * t.mu[j];
    }
    const Eigen::VectorXd folded = lu.solve(wc);
    for (std::size_t j = 0; j < d; ++j) f.weights[c * d + j] = folded(static_cast<Eigen::Index>(j));
    f.offset[c] = dot_mu;
    f.bias[c] = w[c * (d + 1) + d];
  }
  return f;
}

Tensor folded_logits(const Tensor& embeddings, const FoldedHead& head, const WhiteningTransform& t) {
  require_matrix(embeddings, "folded-logits");
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1), k = head.classes;
  if (d != head.dim) throw ShapeError("folded-logits: embedding dimension does not match the folded head");
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = embeddings.data().subspan(i * d, d);
    const std::vector<double> phi = whiten(e, t);
    const double scale = head.normalize ? norm_of(e) : 1.0;
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += head.weights[c * d + j] * phi[j];
      out[i * k + c] = scale * (acc + head.offset[c]) + head.bias[c];
    }
  }
  return Tensor({n, k}, std::move(out));
}

void save_whitening(const WhiteningTransform& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  mgt1::write(dir / "mu.mgt", Tensor::vector(t.mu));
  mgt1::write(dir / "s.mgt", Tensor({t.dim, t.dim}, t.s));
  mgt1::write(dir / "eigenvalues.mgt", Tensor::vector(t.eigenvalues));
  const nlohmann::json meta = {
      {"format", "jembed-whitening"}, {"version", 1},
      {"dim", t.dim},
      {"floor", t.floor},
      {"clamped", t.clamped},
      {"normalize", t.normalize},
      {"shrinkage", t.shrinkage},
      {"fit_count", t.fit_count},
      {"fit_fingerprint", t.fit_fingerprint},
  };
  std::ofstream out(dir / "whitening.json");
  if (!out) throw IoError("cannot write " + (dir / "whitening.json").string());
  out << meta.dump(2) << '\n';
}

WhiteningTransform load_whitening(const std::filesystem::path& dir) {
  std::ifstream in(dir / "whitening.json");
  if (!in) throw IoError("not a whitening directory: " + dir.string());
  try {
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "jembed-whitening") throw IoError("whitening.json: wrong format tag");
    WhiteningTransform t;
    t.dim = j.at("dim").get<std::size_t>();
    t.floor = j.at("floor").get<double>();
    t.clamped = j.at("clamped").get<std::size_t>();
    t.normalize = j.at("normalize").get<bool>();
    t.shrinkage = j.at("shrinkage").get<double>();
    t.fit_count = j.at("fit_count").get<std::size_t>();
    t.fit_fingerprint = j.at("fit_fingerprint").get<std::string>();
    const Tensor mu = mgt1::read(dir / "mu.mgt");
    const Tensor s = mgt1::read(dir / "s.mgt");
    const Tensor ev = mgt1::read(dir / "eigenvalues.mgt");
    if (mu.numel() != t.dim || s.numel() != t.dim * t.dim || ev.numel() != t.dim) {
      throw IoError("whitening: tensor sizes do not match dim " + std::to_string(t.dim));
    }
    t.mu.assign(mu.data().begin(), mu.data().end());
    t.s.assign(s.data().begin(), s.data().end());
    t.eigenvalues.assign(ev.data().begin(), ev.data().end());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("whitening.json: " + std::string(e.what()));
  }
}

}  // namespace mg
