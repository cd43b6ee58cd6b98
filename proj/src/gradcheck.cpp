#include "jembed/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "jembed/error.hpp"
#include "jembed/gem.hpp"
#include "jembed/objectives.hpp"
#include "jembed/ops.hpp"
#include "jembed/rng.hpp"

namespace mg {

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps, std::uint64_t projection_seed) {
  if (!(eps > 0.0)) throw PreconditionError("grad_check: eps must be positive");

  std::vector<double> weights;
  auto project = [&](const Tensor& y) {
    if (weights.empty()) {
      Rng rng(projection_seed);
      weights.resize(y.numel());
      for (double& w : weights) w = rng.uniform(0.5, 1.5);
    }
    if (y.numel() != weights.size()) throw ShapeError("grad_check: output size changed");
    return y.numel() == 1 ? scale(y, 1.0) : sum(mul(y, Tensor(y.shape(), weights)));
  };

  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    TapeGuard guard(tape);
    Tensor loss = project(f(leaf));
    tape.backward(loss);
    if (leaf.has_grad()) {
      analytic.assign(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.assign(leaf.numel(), 0.0);
    }
  }

  auto eval = [&](const Tensor& point) {
    NoGradGuard ng;
    return project(f(point)).item();
  };

  GradCheckResult res;
  Tensor probe = x.detach();
  auto pd = probe.mutable_data();
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double orig = pd[i];
    pd[i] = orig + eps;
    const double up = eval(probe);
    pd[i] = orig - eps;
    const double down = eval(probe);
    pd[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
      res.nan_index = i;
      res.max_rel_error = INFINITY;
      res.worst_index = i;
      return res;
    }
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = i;
    }
  }
  return res;
}

}  // namespace mg

namespace mg {

namespace {

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

std::vector<NamedGradCheck> standard_grad_checks(std::uint64_t seed, std::size_t points) {
  using Fn = std::function<Tensor(const Tensor&)>;
  struct Case {
    std::string op;
    std::function<std::pair<Fn, Tensor>(Rng&)> make;
  };
  const std::vector<int> labels{0, 2, 1, 2};
  PairSet pairs;
  pairs.batch_size = 6;
  pairs.positives = {{0, 1}, {2, 3}, {4, 5}};
  pairs.negatives = {{0, 3}, {2, 5}, {4, 1}};

  const std::vector<Case> cases{
      {"gem.input",
       [](Rng& r) {
         const double p = r.uniform(1.0, 6.0);
         return std::pair<Fn, Tensor>{[p](const Tensor& x) { return gem(x, Tensor::scalar(p)); },
                                      uniform_tensor({2, 3, 3, 3}, r, 0.1, 2.0)};
       }},
      {"gem.p",
       [](Rng& r) {
         const Tensor x = uniform_tensor({2, 3, 3, 3}, r, 0.1, 2.0);
         return std::pair<Fn, Tensor>{[x](const Tensor& p) { return gem(x, p); }, Tensor::scalar(r.uniform(1.0, 6.0))};
       }},
      {"conv2d.input",
       [](Rng& r) {
         const Tensor w = uniform_tensor({3, 2, 3, 3}, r, -1, 1), b = uniform_tensor({3}, r, -1, 1);
         return std::pair<Fn, Tensor>{[w, b](const Tensor& x) { return conv2d(x, w, b, 2, 1); },
                                      uniform_tensor({2, 2, 5, 5}, r, -1, 1)};
       }},
      {"conv2d.weight",
       [](Rng& r) {
         const Tensor x = uniform_tensor({2, 2, 5, 5}, r, -1, 1), b = uniform_tensor({3}, r, -1, 1);
         return std::pair<Fn, Tensor>{[x, b](const Tensor& w) { return conv2d(x, w, b, 1, 1); },
                                      uniform_tensor({3, 2, 3, 3}, r, -1, 1)};
       }},
      {"conv2d.bias",
       [](Rng& r) {
         const Tensor x = uniform_tensor({2, 2, 5, 5}, r, -1, 1), w = uniform_tensor({3, 2, 3, 3}, r, -1, 1);
         return std::pair<Fn, Tensor>{[x, w](const Tensor& b) { return conv2d(x, w, b, 1, 1); },
                                      uniform_tensor({3}, r, -1, 1)};
       }},
      {"matmul",
       [](Rng& r) {
         const Tensor b = uniform_tensor({3, 4}, r, -1, 1);
         return std::pair<Fn, Tensor>{[b](const Tensor& a) { return matmul(a, b); }, uniform_tensor({2, 3}, r, -1, 1)};
       }},
      {"cross_entropy",
       [&labels](Rng& r) {
         const ClassifierHead head = ClassifierHead::init(3, 5, r);
         return std::pair<Fn, Tensor>{
             [head, &labels](const Tensor& e) { return cross_entropy(classifier_logits(e, head), labels); },
             uniform_tensor({4, 5}, r, -1, 1)};
       }},
      {"margin_loss.embedding",
       [&pairs](Rng& r) {
         // alpha wide enough that every hinge stays active
         const Tensor beta = Tensor::scalar(r.uniform(0.9, 1.1));
         Tensor e({6, 4});
         for (double& v : e.mutable_data()) v = r.normal();
         return std::pair<Fn, Tensor>{[beta, &pairs](const Tensor& x) { return margin_loss(x, beta, pairs, 1.5); }, e};
       }},
      {"margin_loss.beta",
       [&pairs](Rng& r) {
         Tensor e({6, 4});
         for (double& v : e.mutable_data()) v = r.normal();
         return std::pair<Fn, Tensor>{[e, &pairs](const Tensor& b) { return margin_loss(e, b, pairs, 1.5); },
                                      Tensor::scalar(r.uniform(0.9, 1.1))};
       }},
  };

  std::vector<NamedGradCheck> out;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    Rng rng(derive_seed(seed, c));
    NamedGradCheck row{cases[c].op, points, 0.0, true};
    for (std::size_t k = 0; k < points; ++k) {
      const auto [f, x] = cases[c].make(rng);
      const GradCheckResult r = grad_check(f, x);
      if (r.nan_index) row.finite = false;
      row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace mg
