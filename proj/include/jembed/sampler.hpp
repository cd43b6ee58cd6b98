#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "jembed/rng.hpp"

namespace mg {

struct BatchEntry {
  std::size_t index = 0;       ///< position in the source image list
  std::int64_t image_id = 0;
  std::uint64_t aug_seed = 0;
  std::int64_t instance_id = 0;  ///< equals image_id
};

struct BatchPlan {
  std::vector<BatchEntry> entries;
  std::size_t batch_size = 0;
  std::size_t repetitions = 1;

  std::size_t distinct_images() const;
  std::vector<std::int64_t> instance_ids() const;
  /// Unordered same-instance pairs in the plan.
  std::size_t positive_pairs() const;
};

/// ceil(|B|/m) distinct images, copy counts filled greedily (m, m, ..., rest),
/// fresh augmentation seeds, entries shuffled.
BatchPlan ra_sample(std::span<const std::int64_t> image_ids, std::size_t batch_size, std::size_t m, Rng& rng);
/// |B| distinct images, one augmentation each.
BatchPlan uniform_sample(std::span<const std::int64_t> image_ids, std::size_t batch_size, Rng& rng);

/// Epoch-level RA stream. Distinct images are taken from a shuffled image
/// list that is cycled across batches (a fresh permutation each time it is
/// exhausted), so one epoch touches roughly T*ceil(|B|/m) images.
/// Plans depend only on (seed, epoch, batch index).
class BatchStream {
 public:
  BatchStream(std::vector<std::int64_t> image_ids, std::size_t batch_size, std::size_t m, std::uint64_t seed);

  std::vector<BatchPlan> epoch(std::size_t epoch_index, std::size_t iterations) const;
  std::size_t batch_size() const { return batch_size_; }
  std::size_t repetitions() const { return m_; }

 private:
  std::vector<std::int64_t> ids_;
  std::size_t batch_size_, m_;
  std::uint64_t seed_;
};

}  // namespace mg
