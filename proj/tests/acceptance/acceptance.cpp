// Acceptance suite: one PASS/FAIL line per criterion.
//
//   mg_acceptance [--criterion N]... [--expect-fail N]...
//
// Exit status is 0 when the set of failing criteria equals the expected
// set exactly, so an expected failure that starts passing is reported too.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jembed/adapt.hpp"
#include "jembed/config.hpp"
#include "jembed/gem.hpp"
#include "jembed/gradcheck.hpp"
#include "jembed/objectives.hpp"
#include "jembed/retrieval.hpp"
#include "jembed/rng.hpp"
#include "jembed/toy_ra.hpp"
#include "jembed/whitening.hpp"

namespace fs = std::filesystem;
using namespace mg;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGemMaxTol = 1e-3;
constexpr double kFoldRelTol = 1e-9;
constexpr double kSamplingTv = 0.02;
constexpr std::size_t kSamplingDraws = 100000;
constexpr double kMetricTol = 1e-12;
constexpr double kDeskTop1 = 0.90;
constexpr double kTrainedP = 3.0;
constexpr double kBudget[10] = {0, 10, 1, 5, 10, 30, 60, 600, 300, 600};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ------------------------------------------------------------------ 1

Outcome gradients() {
  const auto checks = standard_grad_checks(1234, 10);
  double worst = 0.0;
  std::string worst_op;
  bool ok = true;
  for (const auto& c : checks) {
    ok = ok && c.finite && c.points == 10 && c.max_rel_error < kGradTol;
    if (c.max_rel_error >= worst) worst = c.max_rel_error, worst_op = c.op;
  }
  return {ok, fmt("%zu ops, worst %s max rel %.2e (< %.0e)", checks.size(), worst_op.c_str(), worst, kGradTol)};
}

// ------------------------------------------------------------------ 2

Outcome gem_limits() {
  Rng rng(2);
  bool mean_bitwise = true;
  double max_gap = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    std::vector<double> v(h * w);
    for (double& x : v) x = rng.uniform(0.01, 1.0);
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    const Tensor map({1, h, w}, v);
    mean_bitwise = mean_bitwise && gem(map, Tensor::scalar(1.0)).item() == mean && gem_value(v, 1.0) == mean;
    const double mx = *std::max_element(v.begin(), v.end());
    max_gap = std::max(max_gap, std::abs(gem(map, Tensor::scalar(1e4)).item() - mx));
  }
  return {mean_bitwise && max_gap < kGemMaxTol,
          fmt("p=1 bitwise mean: %s; p=1e4 max |gem - max| %.2e (< %.0e)", mean_bitwise ? "yes" : "no", max_gap,
              kGemMaxTol)};
}

// ------------------------------------------------------------------ 3

Outcome fold_identity() {
  Rng rng(3);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 2 + rng.below(15), k = 2 + rng.below(9), n = 3 * d + 5;
    std::vector<double> fit(n * d);
    std::vector<double> scale(d);
    for (double& s : scale) s = std::exp(rng.uniform(-1.5, 1.5));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) fit[i * d + j] = rng.normal(0.3, scale[j]);
    WhiteningConfig wc;
    wc.normalize = t % 4 != 3;
    const WhiteningTransform tr = fit_whitening(Tensor({n, d}, fit), wc);
    std::vector<double> hw(k * (d + 1));
    for (double& x : hw) x = rng.normal();
    const ClassifierHead head{Tensor({k, d + 1}, hw)};
    std::vector<double> e(d);
    for (double& x : e) x = rng.normal(0.2, 1.0);
    const Tensor et({1, d}, e);
    const Tensor lhs = classifier_logits(et, head);
    const FoldedHead folded = fold_classifier(head, tr);
    const Tensor rhs = folded_logits(et, folded, tr);
    for (std::size_t c = 0; c < k; ++c) {
      // Compare <w_c, e> with the folded expression, bias removed from both.
      const double bias = hw[c * (d + 1) + d];
      const double a = lhs[c] - bias, b = rhs[c] - bias;
      worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), 1e-300));
    }
  }

  // Decisions on a full synthetic val split, whitening fit on the distractors.
  const Dataset ds = synth_dataset(SynthConfig{}, 3);
  Rng init(33);
  const Model model = Model::init(TrunkConfig{}, GemConfig{}, MarginConfig{}, ds.classes, 32, init);
  const WhiteningTransform tr = fit_whitening(embed_records(model, ds.distractors, 32));
  const Tensor emb = embed_records(model, ds.val, 32);
  const std::vector<int> plain = predict(model.head, emb);
  const Tensor fl = folded_logits(emb, fold_classifier(model.head, tr), tr);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < ds.val.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < ds.classes; ++c)
      if (fl[i * ds.classes + c] > fl[i * ds.classes + best]) best = c;
    agree += static_cast<int>(best) == plain[i];
  }
  return {worst < kFoldRelTol && agree == ds.val.size(),
          fmt("100 triples max rel %.2e (< %.0e); decisions agree on %zu/%zu val images", worst, kFoldRelTol, agree,
              ds.val.size())};
}

// ------------------------------------------------------------------ 4

long double oracle_log_q(long double z, std::size_t d) {
  const long double dd = static_cast<long double>(d);
  return (dd - 2) * std::log(z) + (dd - 3) / 2 * std::log(1 - z * z / 4);
}

Outcome sampling_law() {
  const std::size_t n = 8, d = 4;
  Rng rng(4);
  std::vector<double> v(n * d);
  for (double& x : v) x = rng.normal();
  // Row 2 sits near anchor 0 so that its weight hits the tau clamp.
  for (std::size_t c = 0; c < d; ++c) v[2 * d + c] = v[c] + rng.normal(0.0, 0.1);
  const Tensor emb({n, d}, v);
  const std::vector<std::int64_t> inst{0, 0, 1, 1, 2, 2, 3, 3};
  const MarginState state = MarginState::make(d);

  // Exact law from the closed-form density, computed independently.
  const long double log_tau = -oracle_log_q(0.5L, d);
  std::map<std::size_t, std::vector<long double>> exact;
  for (std::size_t a : {0, 2, 4, 6}) {
    std::vector<long double> w(n, 0.0L);
    long double z = 0.0L;
    std::vector<long double> ea(v.begin() + a * d, v.begin() + (a + 1) * d);
    const long double na = std::sqrt(std::inner_product(ea.begin(), ea.end(), ea.begin(), 0.0L));
    for (std::size_t j = 0; j < n; ++j) {
      if (inst[j] == inst[a]) continue;
      long double nj = 0.0L, dist = 0.0L;
      for (std::size_t c = 0; c < d; ++c) nj += static_cast<long double>(v[j * d + c]) * v[j * d + c];
      nj = std::sqrt(nj);
      for (std::size_t c = 0; c < d; ++c) {
        const long double diff = ea[c] / na - v[j * d + c] / nj;
        dist += diff * diff;
      }
      w[j] = std::exp(std::min(log_tau, -oracle_log_q(std::sqrt(dist), d)));
      z += w[j];
    }
    for (auto& x : w) x /= z;
    exact[a] = w;
  }

  std::map<std::size_t, std::vector<double>> counts;
  for (const auto& [a, w] : exact) counts[a].assign(n, 0.0);
  Rng draw(44);
  for (std::size_t t = 0; t < kSamplingDraws; ++t) {
    const PairSet ps = sample_pairs(emb, inst, state, draw);
    for (const IndexPair& neg : ps.negatives) counts[neg.i][neg.j] += 1.0;
  }
  double worst = 0.0;
  bool clamp_active = false;
  for (const auto& [a, w] : exact) {
    double tv = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      tv += std::abs(counts[a][j] / static_cast<double>(kSamplingDraws) - static_cast<double>(w[j]));
    worst = std::max(worst, 0.5 * tv);
  }
  for (std::size_t a : {0, 2, 4, 6})
    for (std::size_t j = 0; j < n; ++j)
      if (inst[j] != inst[a]) {
        const double z = normalized_distance(emb.data().subspan(a * d, d), emb.data().subspan(j * d, d));
        clamp_active = clamp_active || -oracle_log_q(z, d) > log_tau;
      }
  return {worst < kSamplingTv, fmt("max TV over 4 anchors %.4f (< %.2f) from %zu draws each; tau clamp %s", worst,
                                   kSamplingTv, kSamplingDraws, clamp_active ? "exercised" : "not reached")};
}

// ------------------------------------------------------------------ 5

struct Ranked {
  std::int64_t id;
  long double sim;
};

std::vector<long double> unit(const double* x, std::size_t d) {
  long double n = 0.0L;
  for (std::size_t c = 0; c < d; ++c) n += static_cast<long double>(x[c]) * x[c];
  n = std::sqrt(n);
  std::vector<long double> out(d);
  for (std::size_t c = 0; c < d; ++c) out[c] = x[c] / n;
  return out;
}

std::vector<Ranked> brute_rank(const std::vector<double>& rows, const std::vector<std::int64_t>& ids, std::size_t d,
                               const double* q, std::optional<std::int64_t> exclude) {
  const auto uq = unit(q, d);
  std::vector<Ranked> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (exclude && ids[i] == *exclude) continue;
    const auto ur = unit(rows.data() + i * d, d);
    long double s = 0.0L;
    for (std::size_t c = 0; c < d; ++c) s += uq[c] * ur[c];
    out.push_back({ids[i], s});
  }
  std::sort(out.begin(), out.end(), [](const Ranked& a, const Ranked& b) {
    return a.sim != b.sim ? a.sim > b.sim : a.id < b.id;
  });
  return out;
}

Outcome metric_oracles() {
  Rng rng(5);
  double worst = 0.0;
  std::size_t cases = 0;
  auto random_rows = [&](std::size_t n, std::size_t d) {
    std::vector<double> v(n * d);
    for (double& x : v) x = rng.normal();
    return v;
  };
  auto random_ids = [&](std::size_t n) {
    std::vector<std::int64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::int64_t>(1000 + 7 * i);
    rng.shuffle(std::span<std::int64_t>(ids));
    return ids;
  };

  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 2 + rng.below(7);

    // knn
    {
      const std::size_t n = 2 + rng.below(49);
      const auto rows = random_rows(n, d);
      const auto ids = random_ids(n);
      const auto q = random_rows(1, d);
      const std::optional<std::int64_t> ex = rng.below(2) ? std::optional(ids[rng.below(n)]) : std::nullopt;
      const std::size_t k = 1 + rng.below(n - (ex ? 1 : 0));
      const RetrievalIndex index = RetrievalIndex::build(Tensor({n, d}, rows), ids);
      const auto got = index.knn(q, k, ex);
      const auto want = brute_rank(rows, ids, d, q.data(), ex);
      for (std::size_t r = 0; r < k; ++r) {
        if (got[r].image_id != want[r].id) worst = INFINITY;
        worst = std::max(worst, static_cast<double>(std::abs(got[r].similarity - want[r].sim)));
      }
      ++cases;
    }
    // mAP
    {
      const std::size_t n = 3 + rng.below(48);
      const auto rows = random_rows(n, d);
      const auto ids = random_ids(n);
      const RetrievalIndex index = RetrievalIndex::build(Tensor({n, d}, rows), ids);
      std::vector<RetrievalQuery> queries;
      long double oracle = 0.0L;
      const std::size_t nq = 1 + rng.below(5);
      for (std::size_t qi = 0; qi < nq; ++qi) {
        RetrievalQuery q;
        q.embedding = random_rows(1, d);
        if (rng.below(2)) q.image_id = ids[rng.below(n)];
        for (std::int64_t id : ids)
          if ((!q.image_id || id != *q.image_id) && rng.uniform() < 0.3) q.relevant.push_back(id);
        if (q.relevant.empty()) q.relevant.push_back(ids[0] == q.image_id ? ids[1] : ids[0]);
        const auto ranking = brute_rank(rows, ids, d, q.embedding.data(), q.image_id);
        long double hits = 0, sum = 0;
        for (std::size_t r = 0; r < ranking.size(); ++r) {
          if (std::find(q.relevant.begin(), q.relevant.end(), ranking[r].id) == q.relevant.end()) continue;
          hits += 1;
          sum += hits / static_cast<long double>(r + 1);
        }
        oracle += sum / hits;
        queries.push_back(std::move(q));
      }
      oracle /= static_cast<long double>(nq);
      worst = std::max(worst, static_cast<double>(std::abs(mean_average_precision(index, queries) - oracle)));
      ++cases;
    }
    // UKB
    {
      const std::size_t groups = 2 + rng.below(11), n = 4 * groups;
      const auto rows = random_rows(n, d);
      const auto ids = random_ids(n);
      std::vector<std::int64_t> group(n);
      for (std::size_t i = 0; i < n; ++i) group[i] = static_cast<std::int64_t>(i % groups);
      const RetrievalIndex index = RetrievalIndex::build(Tensor({n, d}, rows), ids, group);
      long double oracle = 0.0L;
      for (std::size_t i = 0; i < n; ++i) {
        const auto ranking = brute_rank(rows, ids, d, rows.data() + i * d, std::nullopt);
        for (std::size_t r = 0; r < 4; ++r) {
          const std::size_t row = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), ranking[r].id) - ids.begin());
          oracle += group[row] == group[i];
        }
      }
      oracle /= static_cast<long double>(n);
      worst = std::max(worst, static_cast<double>(std::abs(ukb_score(index) - oracle)));
      ++cases;
    }
    // IN-aug
    {
      const std::size_t nq = 1 + rng.below(9), copies = 5;
      InAugTask task;
      task.copies = copies;
      const auto qids = random_ids(nq);
      task.query_ids = qids;
      for (std::size_t q = 0; q < nq; ++q)
        for (std::size_t c = 0; c < copies; ++c) {
          task.copy_ids.push_back(static_cast<std::int64_t>(100000 + q * copies + c));
          task.copy_owner.push_back(qids[q]);
        }
      const std::size_t n = task.copy_ids.size();
      const auto qe = random_rows(nq, d);
      auto ce = random_rows(n, d);
      for (std::size_t i = 0; i < n; ++i)  // copies drift from their query
        for (std::size_t c = 0; c < d; ++c) ce[i * d + c] = qe[(i / copies) * d + c] + rng.normal(0.0, 0.8);
      long double oracle = 0.0L;
      for (std::size_t q = 0; q < nq; ++q) {
        const auto ranking = brute_rank(ce, task.copy_ids, d, qe.data() + q * d, std::nullopt);
        for (std::size_t r = 0; r < copies; ++r)
          oracle += static_cast<std::size_t>(ranking[r].id - 100000) / copies == q;
      }
      oracle /= static_cast<long double>(nq);
      worst = std::max(worst,
                       static_cast<double>(std::abs(inaug_score(Tensor({nq, d}, qe), Tensor({n, d}, ce), task) - oracle)));
      ++cases;
    }
  }
  return {worst <= kMetricTol, fmt("%zu instances (knn, mAP, UKB, IN-aug), max |lib - oracle| %.2e (<= %.0e)", cases,
                                   worst, kMetricTol)};
}

// ------------------------------------------------------------------ 6

Outcome toy_ra() {
  ToyConfig cfg;  // defaults: 100 runs, y-axis flip keeping the label
  bool ok = true;
  std::string detail;
  for (double lr : {0.01, 0.05, 0.1}) {
    cfg.lr = lr;
    const ToyComparison c = toy_compare(cfg);
    const bool pass = c.final_a >= c.final_b && c.mean_diff > 0.0;
    ok = ok && pass;
    detail += fmt("lr %.2f: paired %.4f uniform %.4f diff %+.5f (se %.5f)%s; ", lr, c.final_a, c.final_b, c.mean_diff,
                  c.stderr_diff, pass ? "" : " X");
  }
  // Reflection across the y-axis is label-preserving under this data model;
  // reported for reference only, it does not enter the verdict.
  cfg.flip = FlipAxis::x;
  detail += "[x-axis flip, informational:";
  for (double lr : {0.01, 0.05, 0.1}) {
    cfg.lr = lr;
    const ToyComparison c = toy_compare(cfg);
    detail += fmt(" lr %.2f diff %+.5f", lr, c.mean_diff);
  }
  detail += "]";
  return {ok, detail};
}

// ------------------------------------------------------------------ 7, 8

struct Desk {
  Dataset data;
  ExperimentConfig cfg;
  AugmentConfig augment;
};

const Desk& desk() {
  static const Desk d = [] {
    Desk out;
    out.cfg = ExperimentConfig::load(MG_DESK_CONFIG);
    out.cfg.train.seed = out.cfg.seed;
    out.cfg.adapt.finetune.seed = out.cfg.seed;
    out.cfg.train.eval_every_epoch = false;
    out.data = synth_dataset(out.cfg.data, out.cfg.seed);
    out.augment = out.cfg.augment;
    out.augment.basis = LightingBasis::fit(out.data.train);
    return out;
  }();
  return d;
}

std::map<std::pair<double, std::size_t>, TrainResult>& trained() {
  static std::map<std::pair<double, std::size_t>, TrainResult> cache;
  return cache;
}

const TrainResult& train_desk(double lambda, std::size_t m) {
  auto& cache = trained();
  const auto key = std::make_pair(lambda, m);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const Desk& d = desk();
  TrainConfig tc = d.cfg.train;
  tc.lambda = lambda;
  tc.repetitions = m;
  GemConfig gc = d.cfg.gem;
  gc.p = kTrainedP;
  return cache[key] = train(d.data, d.cfg.trunk, tc, gc, d.cfg.margin, d.augment);
}

double inaug_at(const Model& model, std::size_t s, std::optional<double> p) {
  const Desk& d = desk();
  AugmentConfig aug = d.augment;
  aug.output_size = s;
  const InAugTask task = inaug_build(d.data.val, d.cfg.eval.inaug_per_class, aug, derive_seed(d.cfg.seed, 0xe7a1),
                                     d.cfg.eval.inaug_copies);
  return inaug_score(embed_images(model, task.originals, s, p), embed_prepared(model, task.copy_images, p), task);
}

Outcome desk_training() {
  const Desk& d = desk();
  const TrainResult& joint = train_desk(0.5, 3);
  const TrainResult& ce_ra = train_desk(1.0, 3);
  const TrainResult& ce_uni = train_desk(1.0, 1);
  const double top1 = joint.log.back().val_top1;
  const double inaug_joint = inaug_at(joint.model, d.cfg.eval.resolution, std::nullopt);
  const double inaug_ce = inaug_at(ce_ra.model, d.cfg.eval.resolution, std::nullopt);
  const double ra = ce_ra.log.back().val_top1, uni = ce_uni.log.back().val_top1;
  const bool a = top1 >= kDeskTop1, b = inaug_joint - inaug_ce > 0.0, c = ra >= uni;
  return {a && b && c,
          fmt("(a) lambda=0.5 m=3 val top-1 %.3f (>= %.2f) %s; (b) IN-aug %.3f vs lambda=1 %.3f %s; "
              "(c) lambda=1 RA m=3 %.3f vs uniform m=1 %.3f %s; T=%zu iterations/epoch",
              top1, kDeskTop1, a ? "ok" : "X", inaug_joint, inaug_ce, b ? "ok" : "X", ra, uni, c ? "ok" : "X",
              joint.iterations_per_epoch)};
}

Outcome resolution_adapt() {
  const Desk& d = desk();
  const Model& model = train_desk(0.5, 3).model;
  const std::size_t s = 64;
  AdaptConfig ac = d.cfg.adapt;
  ac.resolution = s;
  AugmentConfig aug = d.augment;
  aug.output_size = s;
  const InAugTask task = inaug_build(d.data.val, d.cfg.eval.inaug_per_class, aug, derive_seed(d.cfg.seed, 0xe7a1),
                                     d.cfg.eval.inaug_copies);
  const SweepResult sweep = pstar_sweep(model, task, ac);
  ac.mode = AdaptMode::finetune;
  const FinetuneResult ft = pstar_finetune(model, d.data.train, ac);
  const auto acc = [&](double p) { return top1_accuracy(model.head, embed_records(model, d.data.val, s, p), d.data.val); };
  const double base = acc(kTrainedP), a_sweep = acc(sweep.best_p), a_ft = acc(ft.p_star);
  const bool ok = sweep.best_p > kTrainedP && ft.p_star > kTrainedP && a_sweep >= base && a_ft >= base;
  return {ok, fmt("s*=64: sweep p*=%.2f (IN-aug %.3f), finetuned p*=%.4f; top-1 at p=3 %.3f, sweep p* %.3f, "
                  "finetuned p* %.3f",
                  sweep.best_p, sweep.best_score, ft.p_star, base, a_sweep, a_ft)};
}

// ------------------------------------------------------------------ 9

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "mg_acceptance_determinism";
  fs::remove_all(root);
  const std::string exe = JEMBED_PATH;
  const std::string common =
      " --threads 1 --seed 9 --set data.classes=4 --set data.per_class=10 --set data.image_size=32"
      " --set data.distractors=12 --set train.epochs=1 --set train.decay_epochs= --set train.iterations_per_epoch=3"
      " --set train.batch_size=12 --set eval.inaug_per_class=2 --set adapt.grid=1,3,5"
      " --set adapt.ft_per_class=4 --set toy.runs=5";
  auto run_all = [&](const fs::path& dir) {
    const std::string d = dir.string();
    const std::string data = " --data " + d + "/gen/data", ck = " --checkpoint " + d + "/train/checkpoint";
    const std::vector<std::string> cmds = {
        "gen-data --out " + d + "/gen",
        "train" + data + " --out " + d + "/train",
        "eval-classify" + data + ck + " --out " + d + "/classify",
        "eval-retrieval --metric map" + data + ck + " --out " + d + "/map",
        "eval-retrieval --metric ukb" + data + ck + " --out " + d + "/ukb",
        "eval-retrieval --metric inaug" + data + ck + " --out " + d + "/inaug",
        "eval-retrieval --metric copydetect" + data + ck + " --out " + d + "/copydetect",
        "fit-whitening" + data + ck + " --out " + d + "/whiten",
        "fold-head" + data + ck + " --whitening " + d + "/whiten/whitening --out " + d + "/fold",
        "adapt --mode sweep --resolution 48 --curve 32,48" + data + ck + " --out " + d + "/sweep",
        "adapt --mode finetune --resolution 48" + data + ck + " --out " + d + "/finetune",
        "toy-ra --out " + d + "/toy",
        "grad-check --points 3 --out " + d + "/grad",
        "report --dir " + d + " --out " + d + "/report",
    };
    for (const std::string& c : cmds) {
      const std::string line = exe + " " + c + common + " 2>>" + (dir / "stderr.log").string();
      if (std::system(line.c_str()) != 0) return "command failed: " + c;
    }
    return std::string();
  };
  fs::create_directories(root / "a");
  fs::create_directories(root / "b");
  for (const char* sub : {"a", "b"})
    if (const std::string err = run_all(root / sub); !err.empty()) return {false, err};

  std::size_t compared = 0, structured = 0;
  std::vector<std::string> diffs;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "stderr.log") continue;
    const fs::path rel = fs::relative(e.path(), root / "a");
    ++compared;
    const std::string ext = rel.extension().string();
    structured += ext == ".csv" || ext == ".json";
    if (!fs::exists(root / "b" / rel) || slurp(e.path()) != slurp(root / "b" / rel)) diffs.push_back(rel.string());
  }
  return {diffs.empty() && structured > 0,
          fmt("14 commands run twice single-threaded: %zu files compared (%zu CSV/JSON), %zu differ%s%s", compared,
              structured, diffs.size(), diffs.empty() ? "" : ", first ", diffs.empty() ? "" : diffs.front().c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, expect_fail;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    const int n = std::atoi(argv[i + 1]);
    if (flag == "--criterion") {
      only.insert(n);
    } else if (flag == "--expect-fail") {
      expect_fail.insert(n);
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]... [--expect-fail N]...\n", argv[0]);
      return 2;
    }
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"GeM limits", gem_limits},
      {"whitening fold identity", fold_identity},
      {"distance-weighted sampling law", sampling_law},
      {"metric oracles", metric_oracles},
      {"toy RA, paired >= uniform across lr", toy_ra},
      {"desk-scale joint training", desk_training},
      {"resolution adaptation", resolution_adapt},
      {"CLI determinism", determinism},
  };

  std::set<int> failed;
  std::size_t ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < kBudget[id];
    const bool pass = o.pass && in_time;
    if (!pass) failed.insert(id);
    std::printf("%s %d %s: %s (%.1f s, budget %.0f s%s)\n", pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str(), secs, kBudget[id], in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }

  std::string fl, ef;
  for (int f : failed) fl += " " + std::to_string(f);
  for (int f : expect_fail) ef += " " + std::to_string(f);
  std::printf("summary: %zu/%zu PASS; failing:%s; expected failing:%s\n", ran - failed.size(), ran,
              fl.empty() ? " none" : fl.c_str(), ef.empty() ? " none" : ef.c_str());
  std::set<int> expected_here;
  for (int f : expect_fail)
    if (only.empty() || only.count(f)) expected_here.insert(f);
  return failed == expected_here ? 0 : 1;
}
