#include "jembed/sampler.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>

#include "jembed/error.hpp"

namespace mg {

std::size_t BatchPlan::distinct_images() const {
  std::set<std::int64_t> ids;
  for (const BatchEntry& e : entries) ids.insert(e.image_id);
  return ids.size();
}

std::vector<std::int64_t> BatchPlan::instance_ids() const {
  std::vector<std::int64_t> out;
  out.reserve(entries.size());
  for (const BatchEntry& e : entries) out.push_back(e.instance_id);
  return out;
}

std::size_t BatchPlan::positive_pairs() const {
  std::map<std::int64_t, std::size_t> counts;
  for (const BatchEntry& e : entries) ++counts[e.instance_id];
  std::size_t pairs = 0;
  for (const auto& [id, c] : counts) pairs += c * (c - 1) / 2;
  return pairs;
}

namespace {

void check(std::size_t n_images, std::size_t batch_size, std::size_t m) {
  if (batch_size == 0) throw ConfigError("sampler: batch size must be positive");
  if (m == 0) throw ConfigError("sampler: m must be at least 1");
  if (m > batch_size) {
    throw ConfigError("sampler: m = " + std::to_string(m) + " exceeds batch size " + std::to_string(batch_size));
  }
  const std::size_t distinct = (batch_size + m - 1) / m;
  if (n_images < distinct) {
    throw PreconditionError("sampler: need " + std::to_string(distinct) + " distinct images, dataset has " +
                            std::to_string(n_images));
  }
}

BatchPlan fill(std::span<const std::int64_t> image_ids, const std::vector<std::size_t>& chosen,
               std::size_t batch_size, std::size_t m, Rng& rng) {
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.repetitions = m;
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const std::size_t copies = std::min(m, batch_size - k * m);
    for (std::size_t c = 0; c < copies; ++c) {
      const std::int64_t id = image_ids[chosen[k]];
      plan.entries.push_back({chosen[k], id, rng.next_u64(), id});
    }
  }
  rng.shuffle(std::span<BatchEntry>(plan.entries));
  return plan;
}

}  // namespace

BatchPlan ra_sample(std::span<const std::int64_t> image_ids, std::size_t batch_size, std::size_t m, Rng& rng) {
  check(image_ids.size(), batch_size, m);
  const std::size_t distinct = (batch_size + m - 1) / m;
  // Partial Fisher-Yates: the first `distinct` slots are a uniform draw
  // without replacement.
  std::vector<std::size_t> idx(image_ids.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < distinct; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(distinct);
  return fill(image_ids, idx, batch_size, m, rng);
}

BatchPlan uniform_sample(std::span<const std::int64_t> image_ids, std::size_t batch_size, Rng& rng) {
  return ra_sample(image_ids, batch_size, 1, rng);
}

BatchStream::BatchStream(std::vector<std::int64_t> image_ids, std::size_t batch_size, std::size_t m,
                         std::uint64_t seed)
    : ids_(std::move(image_ids)), batch_size_(batch_size), m_(m), seed_(seed) {
  check(ids_.size(), batch_size_, m_);
}

std::vector<BatchPlan> BatchStream::epoch(std::size_t epoch_index, std::size_t iterations) const {
  const std::size_t distinct = (batch_size_ + m_ - 1) / m_;
  std::vector<std::size_t> order;
  std::size_t cursor = 0, cycle = 0;
  auto refill = [&] {
    order.resize(ids_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng perm(derive_seed(seed_, epoch_index, 0x5eedULL, cycle++));
    perm.shuffle(std::span<std::size_t>(order));
    cursor = 0;
  };
  refill();
  std::vector<BatchPlan> plans;
  plans.reserve(iterations);
  for (std::size_t b = 0; b < iterations; ++b) {
    std::vector<std::size_t> chosen;
    while (chosen.size() < distinct) {
      if (cursor == order.size()) refill();
      const std::size_t cand = order[cursor++];
      // An image already in this batch (possible across a refill) is skipped.
      if (std::find(chosen.begin(), chosen.end(), cand) == chosen.end()) chosen.push_back(cand);
    }
    Rng rng(derive_seed(seed_, epoch_index, b));
    plans.push_back(fill(ids_, chosen, batch_size_, m_, rng));
  }
  return plans;
}

}  // namespace mg
