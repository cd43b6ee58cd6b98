#include "jembed/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>

#include "jembed/error.hpp"
#include "jembed/ops.hpp"
#include "jembed/sampler.hpp"

namespace mg {

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("train: lr must be non-negative");
  for (std::size_t k = 0; k < decay_epochs.size(); ++k) {
    if (decay_epochs[k] >= epochs && epochs > 0) throw ConfigError("train: decay epochs must be < total epochs");
    if (k > 0 && decay_epochs[k] <= decay_epochs[k - 1]) {
      throw ConfigError("train: decay epochs must be strictly increasing");
    }
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be non-negative");
  if (batch_size < 2) throw ConfigError("train: batch size must be at least 2");
  if (repetitions == 0 || repetitions > batch_size) throw ConfigError("train: m must lie in [1, batch size]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("train: lambda must lie in [0, 1]");
  if (lambda < 1.0 && repetitions < 2) {
    throw ConfigError("train: lambda < 1 needs m >= 2, otherwise batches hold no positive pairs");
  }
  if (resolution == 0) throw ConfigError("train: resolution must be positive");
}

std::size_t TrainConfig::iterations(std::size_t n_train) const {
  if (iterations_per_epoch > 0) return iterations_per_epoch;
  return (n_train * repetitions + batch_size - 1) / batch_size;
}

double TrainConfig::lr_factor(std::size_t epoch) const {
  double f = 1.0;
  for (std::size_t e : decay_epochs)
    if (epoch >= e) f *= 0.1;
  return f;
}

namespace {

/// First row that is all zero or holds a non-finite value. A dead trunk
/// (every ReLU off) shows up here before the loss turns non-finite.
std::optional<std::size_t> degenerate_row(const Tensor& emb) {
  const std::size_t d = emb.dim(1);
  auto v = emb.data();
  for (std::size_t i = 0; i < emb.dim(0); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += v[i * d + j] * v[i * d + j];
    if (!(sq > 0.0) || !std::isfinite(sq)) return i;
  }
  return std::nullopt;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Param {
  Tensor t;
  double weight_decay = 0.0;
  std::size_t skip_column_stride = 0;  ///< nonzero: last column of each row is not decayed
  std::vector<double> velocity;
};

void sgd_step(Param& prm, double lr, double momentum) {
  auto w = prm.t.mutable_data();
  if (prm.velocity.empty()) prm.velocity.assign(w.size(), 0.0);
  const bool has_grad = prm.t.has_grad();
  for (std::size_t i = 0; i < w.size(); ++i) {
    double g = has_grad ? prm.t.grad()[i] : 0.0;
    const bool decay = prm.skip_column_stride == 0 || (i + 1) % prm.skip_column_stride != 0;
    if (decay) g += prm.weight_decay * w[i];
    prm.velocity[i] = momentum * prm.velocity[i] + g;
    w[i] -= lr * prm.velocity[i];
  }
  prm.t.zero_grad();
}

struct Batch {
  Tensor input;
  std::vector<int> labels;
  std::vector<std::int64_t> instances;
};

Batch materialize(const BatchPlan& plan, const std::vector<ImageRecord>& source, const AugmentConfig& aug) {
  Batch b;
  const std::size_t n = plan.entries.size();
  std::vector<Tensor> images(n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    images[i] = augment(source[plan.entries[i].index].pixels, aug, plan.entries[i].aug_seed);
  }
  b.input = to_network_input(images);
  for (const BatchEntry& e : plan.entries) {
    b.labels.push_back(source[e.index].label);
    b.instances.push_back(e.instance_id);
  }
  return b;
}

}  // namespace

TrainResult train(const Dataset& data, const TrunkConfig& trunk, const TrainConfig& cfg, const GemConfig& gem,
                  const MarginConfig& margin, const AugmentConfig& augment_cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  augment_cfg.validate();
  if (gem.p_star) throw ConfigError("train: p* is an evaluation-only override");
  if (data.train.empty() || data.val.empty()) throw PreconditionError("train: dataset needs train and val images");

  Rng init_rng(derive_seed(cfg.seed, 1));
  TrainResult result;
  result.model = Model::init(trunk, gem, margin, data.classes, cfg.resolution, init_rng);
  Model& model = result.model;
  AugmentConfig aug = augment_cfg;
  aug.output_size = cfg.resolution;

  std::vector<Param> params;
  for (const Tensor& t : model.trunk.parameters()) {
    const bool is_weight = t.ndim() == 4;
    params.push_back({t, is_weight ? cfg.weight_decay : 0.0, 0, {}});
  }
  params.push_back({model.head.weights, cfg.weight_decay, model.head.weights.dim(1), {}});
  if (gem.learnable) params.push_back({model.gem.p(), 0.0, 0, {}});
  Param beta{model.margin.beta, 0.0, 0, {}};

  std::vector<std::int64_t> train_ids;
  for (const ImageRecord& r : data.train) train_ids.push_back(r.image_id);
  const BatchStream stream(train_ids, cfg.batch_size, cfg.repetitions, derive_seed(cfg.seed, 2));
  const std::size_t T = cfg.iterations(data.train.size());
  result.iterations_per_epoch = T;

  std::vector<std::int64_t> val_ids;
  for (const ImageRecord& r : data.val) val_ids.push_back(r.image_id);
  Rng heldout_rng(derive_seed(cfg.seed, 3));
  const std::size_t ho_size = std::min(cfg.batch_size, data.val.size());
  const Batch heldout = materialize(ra_sample(val_ids, ho_size, std::min(cfg.repetitions, ho_size), heldout_rng),
                                    data.val, aug);

  auto evaluate = [&](EpochLog& row) {
    row.val_top1 = top1_accuracy(model.head, embed_records(model, data.val, cfg.resolution), data.val);
    NoGradGuard no_grad;
    const Tensor emb = embed_input(model, heldout.input);
    PairSet pairs;
    if (cfg.lambda < 1.0) {
      Rng pair_rng(derive_seed(cfg.seed, 4));
      pairs = sample_pairs(emb, heldout.instances, model.margin, pair_rng);
    }
    row.heldout_loss =
        joint_loss(emb, heldout.labels, cfg.lambda < 1.0 ? &pairs : nullptr, model.head, model.margin, cfg.lambda)
            .total.item();
    row.beta = model.margin.beta_value();
    row.p = model.gem.p_value();
  };

  {
    EpochLog row;
    row.loss = row.cross_entropy = row.margin = row.grad_fraction = kNaN;
    row.lr = cfg.lr * cfg.lr_factor(0);
    evaluate(row);
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }

  const bool mixed = cfg.lambda > 0.0 && cfg.lambda < 1.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double factor = cfg.lr_factor(epoch);
    const double lr = cfg.lr * factor;
    const std::vector<BatchPlan> plans = stream.epoch(epoch, T);
    double sum_loss = 0, sum_ce = 0, sum_margin = 0, sum_frac = 0;
    for (std::size_t it = 0; it < T; ++it) {
      const Batch batch = materialize(plans[it], data.train, aug);
      Tape tape;
      TapeGuard guard(tape);
      const Tensor maps = model.trunk.forward(batch.input, true);
      const Tensor emb = model.gem.forward(maps);
      if (const auto bad = degenerate_row(emb)) {
        throw DivergenceError("train: embedding " + std::to_string(*bad) + " collapsed or non-finite at epoch " +
                                  std::to_string(epoch + 1) + ", iteration " + std::to_string(it),
                              static_cast<long>(epoch * T + it));
      }
      PairSet pairs;
      if (cfg.lambda < 1.0) {
        Rng pair_rng(derive_seed(cfg.seed, 5, epoch, it));
        pairs = sample_pairs(emb.detach(), batch.instances, model.margin, pair_rng);
      }
      const JointLoss jl =
          joint_loss(emb, batch.labels, cfg.lambda < 1.0 ? &pairs : nullptr, model.head, model.margin, cfg.lambda);
      const double total = jl.total.item();
      if (!std::isfinite(total)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", iteration " +
                                  std::to_string(it),
                              static_cast<long>(epoch * T + it));
      }
      tape.backward(jl.total);
      sum_loss += total;
      if (jl.classification.defined()) sum_ce += jl.classification.item() / cfg.lambda;
      if (jl.retrieval.defined()) sum_margin += jl.retrieval.item() / (1.0 - cfg.lambda);
      if (mixed) {
        sum_frac += gradient_fraction(emb.detach(), batch.labels, pairs, model.head, model.margin, cfg.lambda);
      }
      for (Param& prm : params) sgd_step(prm, lr, cfg.momentum);
      sgd_step(beta, model.margin.beta_lr * factor, cfg.momentum);
      model.margin.project_beta();
      if (gem.learnable) {
        auto pv = model.gem.p().mutable_data();
        pv[0] = std::max(pv[0], gem.epsilon);
      }
    }
    EpochLog row;
    row.epoch = epoch + 1;
    row.lr = lr;
    const double n = static_cast<double>(T);
    row.loss = sum_loss / n;
    row.cross_entropy = cfg.lambda > 0.0 ? sum_ce / n : kNaN;
    row.margin = cfg.lambda < 1.0 ? sum_margin / n : kNaN;
    row.grad_fraction = mixed ? sum_frac / n : kNaN;
    if (cfg.eval_every_epoch || epoch + 1 == cfg.epochs) {
      evaluate(row);
    } else {
      row.val_top1 = row.heldout_loss = kNaN;
      row.beta = model.margin.beta_value();
      row.p = model.gem.p_value();
    }
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

void write_train_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,lr,loss,cross_entropy,margin,heldout_loss,val_top1,grad_fraction,beta,p\n";
  out << std::setprecision(10);
  for (const EpochLog& r : log) {
    out << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.cross_entropy << ',' << r.margin << ','
        << r.heldout_loss << ',' << r.val_top1 << ',' << r.grad_fraction << ',' << r.beta << ',' << r.p << '\n';
  }
}

}  // namespace mg
