#include "jembed/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include "json.hpp"
#include "jembed/error.hpp"
#include "jembed/hash.hpp"
#include "jembed/rng.hpp"

namespace mg {

namespace {

std::vector<double> normalized(std::span<const double> v, const char* what) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s);
  if (!(n > 0.0)) throw DomainError(std::string(what) + ": zero embedding");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

bool ranks_before(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.image_id < b.image_id;
}

}  // namespace

RetrievalIndex RetrievalIndex::build(const Tensor& embeddings, std::vector<std::int64_t> image_ids,
                                     std::vector<std::int64_t> instance_ids, std::vector<bool> distractor) {
  if (embeddings.ndim() != 2) throw ShapeError("index: embeddings must be [n,d]");
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  if (image_ids.size() != n) throw ShapeError("index: one image id per row required");
  if (instance_ids.empty()) instance_ids.assign(n, -1);
  if (distractor.empty()) distractor.assign(n, false);
  if (instance_ids.size() != n || distractor.size() != n) throw ShapeError("index: metadata length mismatch");
  std::vector<std::int64_t> sorted = image_ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw PreconditionError("index: duplicate image id");
  }
  RetrievalIndex idx;
  idx.dim_ = d;
  idx.rows_.reserve(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> r = normalized(embeddings.data().subspan(i * d, d), "index");
    idx.rows_.insert(idx.rows_.end(), r.begin(), r.end());
  }
  idx.image_ids_ = std::move(image_ids);
  idx.instance_ids_ = std::move(instance_ids);
  idx.distractor_ = std::move(distractor);
  return idx;
}

std::optional<std::size_t> RetrievalIndex::find(std::int64_t image_id) const {
  for (std::size_t i = 0; i < image_ids_.size(); ++i)
    if (image_ids_[i] == image_id) return i;
  return std::nullopt;
}

std::vector<Neighbor> RetrievalIndex::rank(std::span<const double> query,
                                           std::optional<std::int64_t> exclude_id) const {
  if (size() == 0) throw PreconditionError("knn: empty index");
  if (query.size() != dim_) {
    throw ShapeError("knn: query has dimension " + std::to_string(query.size()) + ", index has " +
                     std::to_string(dim_));
  }
  const std::vector<double> q = normalized(query, "knn");
  std::vector<Neighbor> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    if (exclude_id && image_ids_[i] == *exclude_id) continue;
    const double* r = rows_.data() + i * dim_;
    double s = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) s += r[j] * q[j];
    out.push_back({i, image_ids_[i], s});
  }
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

std::vector<Neighbor> RetrievalIndex::knn(std::span<const double> query, std::size_t k,
                                          std::optional<std::int64_t> exclude_id) const {
  std::vector<Neighbor> all = rank(query, exclude_id);
  if (k > all.size()) {
    throw PreconditionError("knn: k = " + std::to_string(k) + " exceeds the " + std::to_string(all.size()) +
                            " candidates");
  }
  all.resize(k);
  return all;
}

double average_precision(std::span<const bool> relevant_in_rank_order) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < relevant_in_rank_order.size(); ++r) {
    if (!relevant_in_rank_order[r]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits == 0) throw PreconditionError("average precision: no relevant item");
  return sum / static_cast<double>(hits);
}

double mean_average_precision(const RetrievalIndex& index, const std::vector<RetrievalQuery>& queries) {
  if (queries.empty()) throw PreconditionError("mAP: no queries");
  std::vector<double> ap(queries.size());
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const RetrievalQuery& q = queries[qi];
    std::vector<std::int64_t> rel = q.relevant;
    std::sort(rel.begin(), rel.end());
    const std::vector<Neighbor> ranking = index.rank(q.embedding, q.image_id);
    const auto flags = std::make_unique<bool[]>(ranking.size());
    std::size_t found = 0;
    for (std::size_t r = 0; r < ranking.size(); ++r) {
      flags[r] = std::binary_search(rel.begin(), rel.end(), ranking[r].image_id);
      found += flags[r];
    }
    if (found == 0) throw PreconditionError("mAP: query " + std::to_string(qi) + " has no relevant item in the index");
    ap[qi] = average_precision({flags.get(), ranking.size()});
  }
  double total = 0.0;
  for (double v : ap) total += v;
  return total / static_cast<double>(ap.size());
}

double ukb_score(const RetrievalIndex& index) {
  if (index.size() == 0) throw PreconditionError("ukb: empty index");
  std::map<std::int64_t, std::size_t> group_size;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index.instance_id(i) < 0) throw PreconditionError("ukb: row without a group");
    ++group_size[index.instance_id(i)];
  }
  for (const auto& [group, count] : group_size) {
    if (count != 4) {
      throw PreconditionError("ukb: group " + std::to_string(group) + " has " + std::to_string(count) +
                              " images, expected 4");
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::vector<Neighbor> top = index.knn(index.row(i), 4);
    for (const Neighbor& nb : top) total += index.instance_id(nb.row) == index.instance_id(i) ? 1.0 : 0.0;
  }
  return total / static_cast<double>(index.size());
}

double copydetect_map(const RetrievalIndex& index, const Tensor& query_embeddings,
                      std::span<const std::int64_t> original_ids) {
  if (query_embeddings.ndim() != 2 || query_embeddings.dim(0) != original_ids.size()) {
    throw ShapeError("copydetect: one original id per query row required");
  }
  const std::size_t d = query_embeddings.dim(1);
  std::vector<RetrievalQuery> queries;
  for (std::size_t i = 0; i < original_ids.size(); ++i) {
    const auto row = query_embeddings.data().subspan(i * d, d);
    const auto at = index.find(original_ids[i]);
    if (!at || index.is_distractor(*at)) throw PreconditionError("copydetect: original not in the index");
    queries.push_back({std::vector<double>(row.begin(), row.end()), std::nullopt, {original_ids[i]}});
  }
  return mean_average_precision(index, queries);
}

std::string InAugTask::fingerprint() const {
  std::uint64_t h = fnv1a(std::string_view("inaug"));
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    const double id = static_cast<double>(query_ids[q]);
    h = fnv1a(std::span<const double>(&id, 1), h);
  }
  for (const Tensor& t : copy_images) h = fnv1a(t.data(), h);
  return hex64(h);
}

InAugTask inaug_build(const std::vector<ImageRecord>& records, std::size_t per_class, const AugmentConfig& augment_cfg,
                      std::uint64_t seed, std::size_t copies) {
  augment_cfg.validate();
  if (per_class == 0 || copies == 0) throw ConfigError("inaug: per_class and copies must be positive");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].label < 0) continue;
    by_class[records[i].label].push_back(i);
  }
  if (by_class.empty()) throw PreconditionError("inaug: no labelled images");
  InAugTask task;
  task.copies = copies;
  Rng rng(derive_seed(seed, 0x1a06));
  std::vector<std::size_t> chosen;
  for (auto& [label, members] : by_class) {
    if (members.size() < per_class) {
      throw PreconditionError("inaug: class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                              " images, need " + std::to_string(per_class));
    }
    rng.shuffle(std::span<std::size_t>(members));
    std::vector<std::size_t> pick(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(per_class));
    std::sort(pick.begin(), pick.end());
    chosen.insert(chosen.end(), pick.begin(), pick.end());
  }
  std::int64_t next_copy_id = 0;
  for (std::size_t i : chosen) {
    task.query_ids.push_back(records[i].image_id);
    task.originals.push_back(&records[i].pixels);
    for (std::size_t c = 0; c < copies; ++c) {
      task.copy_ids.push_back(next_copy_id++);
      task.copy_owner.push_back(records[i].image_id);
    }
  }
  task.copy_images.resize(task.copy_ids.size());
#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < task.copy_images.size(); ++k) {
    const std::size_t q = k / copies;
    task.copy_images[k] = augment(*task.originals[q], augment_cfg,
                                  derive_seed(seed, 0xc0b1, static_cast<std::uint64_t>(task.query_ids[q]), k % copies));
  }
  return task;
}

double inaug_score(const Tensor& query_embeddings, const Tensor& copy_embeddings, const InAugTask& task) {
  if (query_embeddings.ndim() != 2 || query_embeddings.dim(0) != task.query_ids.size()) {
    throw ShapeError("inaug: need one embedding per query");
  }
  if (copy_embeddings.ndim() != 2 || copy_embeddings.dim(0) != task.copy_ids.size()) {
    throw ShapeError("inaug: need one embedding per copy");
  }
  const RetrievalIndex index = RetrievalIndex::build(copy_embeddings, task.copy_ids, task.copy_owner);
  const std::size_t d = query_embeddings.dim(1);
  double total = 0.0;
  for (std::size_t q = 0; q < task.query_ids.size(); ++q) {
    const auto top = index.knn(query_embeddings.data().subspan(q * d, d), std::min(task.copies, index.size()));
    for (const Neighbor& nb : top) total += index.instance_id(nb.row) == task.query_ids[q] ? 1.0 : 0.0;
  }
  return total / static_cast<double>(task.query_ids.size());
}

AugmentConfig copydetect_distortion(std::size_t output_size, const LightingBasis& basis) {
  AugmentConfig cfg;
  cfg.output_size = output_size;
  cfg.basis = basis;
  cfg.scale_min = 0.3;
  cfg.scale_max = 0.6;
  cfg.brightness = cfg.contrast = cfg.saturation = 0.4;
  cfg.lighting = 0.2;
  return cfg;
}

Tensor embed_prepared(const Model& model, const std::vector<Tensor>& images, std::optional<double> p_star,
                      std::size_t chunk) {
  if (images.empty()) throw PreconditionError("embed: no images");
  std::vector<double> out;
  out.reserve(images.size() * model.dim());
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    const std::vector<Tensor> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                                   images.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor e = embed_input(model, to_network_input(part), p_star);
    out.insert(out.end(), e.data().begin(), e.data().end());
  }
  return Tensor({images.size(), model.dim()}, std::move(out));
}

double EvalReport::max_value(const std::string& metric) {
  if (metric == "ukb") return 4.0;
  if (metric == "inaug") return 5.0;
  return 1.0;
}

void EvalReport::check() const {
  if (!(value >= 0.0 && value <= max_value(metric))) {
    throw PreconditionError("report: " + metric + " value " + std::to_string(value) + " outside its range");
  }
}

std::string EvalReport::to_json() const {
  check();
  const nlohmann::json j = {
      {"metric", metric},
      {"value", value},
      {"dataset_fingerprint", dataset_fingerprint},
      {"config", {{"resolution", resolution}, {"p_star", p_star}, {"lambda", lambda}, {"whitening", whitening}}},
  };
  return j.dump(2);
}

}  // namespace mg
