#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "jembed/augment.hpp"
#include "jembed/data.hpp"
#include "jembed/model.hpp"

namespace mg {

struct TrainConfig {
  double lr = 0.05;
  std::vector<std::size_t> decay_epochs{20, 27};  ///< lr divided by 10 at each
  std::size_t epochs = 30;
  double momentum = 0.9;
  double weight_decay = 1e-4;  ///< conv and head weights only
  std::size_t batch_size = 32;
  std::size_t repetitions = 3;  ///< m; 1 gives uniform sampling
  double lambda = 0.5;
  std::uint64_t seed = 0;
  /// Iterations per epoch; 0 selects ceil(n_train * m / |B|).
  std::size_t iterations_per_epoch = 0;
  std::size_t resolution = 32;
  /// Skip val accuracy / held-out loss for epochs other than the last.
  bool eval_every_epoch = true;

  void validate() const;
  std::size_t iterations(std::size_t n_train) const;
  /// lr multiplier in effect during `epoch` (0-based).
  double lr_factor(std::size_t epoch) const;
};

/// One row of the training log. Row 0 describes the initialization.
struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;            ///< mean joint loss over the epoch's iterations
  double cross_entropy = 0.0;   ///< mean unweighted cross-entropy (NaN when lambda == 0)
  double margin = 0.0;          ///< mean unweighted margin loss (NaN when lambda == 1)
  double heldout_loss = 0.0;    ///< joint loss on a fixed augmented val batch
  double val_top1 = 0.0;
  double grad_fraction = 0.0;   ///< mean over iterations (NaN unless 0 < lambda < 1)
  double beta = 0.0;
  double p = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  std::size_t iterations_per_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// SGD with momentum on the joint objective over RA batches. Throws
/// DivergenceError on a non-finite loss.
TrainResult train(const Dataset& data, const TrunkConfig& trunk, const TrainConfig& cfg, const GemConfig& gem,
                  const MarginConfig& margin, const AugmentConfig& augment, const EpochCallback& on_epoch = {});

void write_train_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace mg
