#include "jembed/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>

#include "jembed/error.hpp"
#include "jembed/gem.hpp"
#include "jembed/ops.hpp"
#include "jembed/rng.hpp"

namespace mg {

namespace {

constexpr std::size_t kChunk = 64;

std::vector<double> dedupe(std::vector<double> grid) {
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

}  // namespace

void FinetuneConfig::validate() const {
  if (batch_size == 0) throw ConfigError("finetune: batch size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("finetune: momentum must lie in [0, 1)");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("finetune: lr must be finite and non-negative");
  if (!(power > 0.0)) throw ConfigError("finetune: decay power must be positive");
  if (per_class == 0) throw ConfigError("finetune: per-class sample budget must be positive");
}

void AdaptConfig::validate(const Model& model) const {
  if (grid.empty()) throw ConfigError("adapt: empty p* grid");
  for (double p : grid)
    if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("adapt: grid values must be positive");
  if (resolution < model.trunk.config().min_resolution()) {
    throw ConfigError("adapt: resolution " + std::to_string(resolution) + " below the trunk minimum " +
                      std::to_string(model.trunk.config().min_resolution()));
  }
  finetune.validate();
}

MapCache MapCache::of_images(const Model& model, const std::vector<const Tensor*>& images, std::size_t resolution) {
  MapCache cache;
  cache.count = images.size();
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t end = std::min(images.size(), start + kChunk);
    std::vector<Tensor> prepared;
    for (std::size_t i = start; i < end; ++i)
      prepared.push_back(prepare_eval_image(*images[i], resolution, model.train_resolution));
    const bool uniform = std::all_of(prepared.begin(), prepared.end(),
                                     [&](const Tensor& t) { return t.shape() == prepared.front().shape(); });
    if (uniform) {
      cache.chunks.push_back(activation_maps(model, to_network_input(prepared)));
    } else {
      for (const Tensor& t : prepared) cache.chunks.push_back(activation_maps(model, to_network_input({t})));
    }
  }
  return cache;
}

MapCache MapCache::of_prepared(const Model& model, const std::vector<Tensor>& images) {
  MapCache cache;
  cache.count = images.size();
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t end = std::min(images.size(), start + kChunk);
    const std::vector<Tensor> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                                   images.begin() + static_cast<std::ptrdiff_t>(end));
    cache.chunks.push_back(activation_maps(model, to_network_input(part)));
  }
  return cache;
}

Tensor MapCache::pool(double p, double eps) const {
  NoGradGuard no_grad;
  const Tensor pt = Tensor::scalar(p);
  std::vector<double> out;
  std::size_t d = 0;
  for (const Tensor& c : chunks) {
    const Tensor e = gem(c, pt, eps);
    d = e.dim(1);
    out.insert(out.end(), e.data().begin(), e.data().end());
  }
  return Tensor({count, d}, std::move(out));
}

SweepResult pstar_sweep(const Model& model, const InAugTask& task, const AdaptConfig& cfg) {
  cfg.validate(model);
  if (task.copy_images.empty()) throw PreconditionError("sweep: task has no copies");
  const Shape& cs = task.copy_images.front().shape();
  if (cs[0] != cfg.resolution || cs[1] != cfg.resolution) {
    throw PreconditionError("sweep: task copies are " + shape_str(cs) + ", expected side " +
                            std::to_string(cfg.resolution));
  }
  const MapCache queries = MapCache::of_images(model, task.originals, cfg.resolution);
  const MapCache copies = MapCache::of_prepared(model, task.copy_images);
  const double eps = model.gem.config().epsilon;
  SweepResult r;
  for (double p : dedupe(cfg.grid)) {
    const double score = inaug_score(queries.pool(p, eps), copies.pool(p, eps), task);
    r.table.push_back({p, score});
    if (r.table.size() == 1 || score > r.best_score) {
      r.best_p = p;
      r.best_score = score;
    }
  }
  return r;
}

FinetuneResult pstar_finetune(const Model& model, const std::vector<ImageRecord>& sample, const AdaptConfig& cfg) {
  cfg.validate(model);
  const FinetuneConfig& ft = cfg.finetune;
  Rng rng(derive_seed(ft.seed, 0xf17e));
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < sample.size(); ++i)
    if (sample[i].label >= 0) by_class[sample[i].label].push_back(i);
  std::vector<std::size_t> order;
  for (auto& [label, members] : by_class) {
    rng.shuffle(std::span<std::size_t>(members));
    const std::size_t take = std::min(ft.per_class, members.size());
    order.insert(order.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  if (order.empty()) throw PreconditionError("finetune: no labelled images");
  rng.shuffle(std::span<std::size_t>(order));

  const ClassifierHead head{model.head.weights.detach()};
  const double eps = model.gem.config().epsilon;
  FinetuneResult r;
  double p = model.gem.p_value();
  double velocity = 0.0;
  const std::size_t iters = (order.size() + ft.batch_size - 1) / ft.batch_size;
  for (std::size_t it = 0; it < iters; ++it) {
    const std::size_t b0 = it * ft.batch_size, b1 = std::min(order.size(), b0 + ft.batch_size);
    std::vector<Tensor> prepared;
    std::vector<int> labels;
    for (std::size_t k = b0; k < b1; ++k) {
      prepared.push_back(prepare_eval_image(sample[order[k]].pixels, cfg.resolution, model.train_resolution));
      labels.push_back(sample[order[k]].label);
    }
    const Tensor maps = activation_maps(model, to_network_input(prepared));
    Tape tape;
    TapeGuard guard(tape);
    Tensor pt = Tensor::scalar(p);
    pt.set_requires_grad(true);
    const Tensor loss = mean(cross_entropy(classifier_logits(gem(maps, pt, eps), head), labels));
    if (!std::isfinite(loss.item())) {
      throw DivergenceError("finetune: non-finite loss at iteration " + std::to_string(it), static_cast<long>(it));
    }
    tape.backward(loss);
    const double lr = ft.lr * std::pow(1.0 - static_cast<double>(it) / static_cast<double>(iters), ft.power);
    velocity = ft.momentum * velocity + pt.grad()[0];
    p = std::max(p - lr * velocity, eps);
    r.trajectory.push_back(p);
  }
  r.p_star = p;
  r.iterations = iters;
  return r;
}

std::vector<CurveCell> scale_accuracy_curve(const Model& model, const std::vector<ImageRecord>& val,
                                            const std::vector<std::size_t>& resolutions,
                                            const std::vector<double>& p_values,
                                            const std::vector<ImageRecord>* inaug_records,
                                            const AugmentConfig* inaug_augment, std::uint64_t inaug_seed) {
  if (resolutions.empty() || p_values.empty()) throw ConfigError("curve: need resolutions and p* values");
  std::vector<const Tensor*> images;
  for (const ImageRecord& r : val) images.push_back(&r.pixels);
  const double eps = model.gem.config().epsilon;
  std::vector<CurveCell> cells;
  for (std::size_t s : resolutions) {
    AdaptConfig check;
    check.resolution = s;
    check.validate(model);
    const MapCache cache = MapCache::of_images(model, images, s);
    std::optional<InAugTask> task;
    std::optional<MapCache> q_cache, c_cache;
    if (inaug_records) {
      AugmentConfig aug = inaug_augment ? *inaug_augment : AugmentConfig{};
      aug.output_size = s;
      task = inaug_build(*inaug_records, 2, aug, inaug_seed);
      q_cache = MapCache::of_images(model, task->originals, s);
      c_cache = MapCache::of_prepared(model, task->copy_images);
    }
    for (double p : p_values) {
      CurveCell cell{s, p, top1_accuracy(model.head, cache.pool(p, eps), val), std::nullopt};
      if (task) cell.inaug = inaug_score(q_cache->pool(p, eps), c_cache->pool(p, eps), *task);
      cells.push_back(cell);
    }
  }
  return cells;
}

void write_sweep_csv(const SweepResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "p_star,inaug_score\n" << std::setprecision(17);
  for (const SweepRow& row : r.table) out << row.p << ',' << row.score << '\n';
}

void write_curve_csv(const std::vector<CurveCell>& cells, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "resolution,p_star,top1,inaug_score\n" << std::setprecision(17);
  for (const CurveCell& c : cells) {
    out << c.resolution << ',' << c.p << ',' << c.top1 << ',';
    if (c.inaug) out << *c.inaug;
    out << '\n';
  }
}

}  // namespace mg
