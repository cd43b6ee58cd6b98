// jembed: command-line front end for the jembed library.

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "jembed/adapt.hpp"
#include "jembed/config.hpp"
#include "jembed/error.hpp"
#include "jembed/gradcheck.hpp"
#include "jembed/hash.hpp"
#include "jembed/kernels.hpp"
#include "jembed/mgt1.hpp"
#include "jembed/retrieval.hpp"
#include "jembed/rng.hpp"
#include "jembed/toy_ra.hpp"
#include "jembed/whitening.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mg;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr double kGradTolerance = 1e-4;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string batch_sampler;
  std::optional<std::size_t> m;
  std::optional<std::size_t> batch_size;
};

struct Inputs {
  std::string data, checkpoint, whitening, embeddings;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file");
  cmd->add_option("--set", c.sets, "override one key, key=value (repeatable)");
  cmd->add_option("--out", c.out, "output directory (overrides out_dir)");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--threads", c.threads, "OpenMP threads; 1 selects the serial kernels");
  cmd->add_option("--batch-sampler", c.batch_sampler, "ra or uniform")->check(CLI::IsMember({"ra", "uniform"}));
  cmd->add_option("--m", c.m, "repetitions per image in a batch");
  cmd->add_option("--batch-size", c.batch_size, "training batch size");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) cfg = ExperimentConfig::load(c.config);
  for (const std::string& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    std::string key = s.substr(0, eq);
    key.erase(std::remove(key.begin(), key.end(), ' '), key.end());
    cfg.set(key, s.substr(eq + 1));
  }
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  if (c.batch_sampler == "uniform") cfg.train.repetitions = 1;
  if (c.m) cfg.train.repetitions = *c.m;
  if (c.batch_size) cfg.train.batch_size = *c.batch_size;

  cfg.train.seed = cfg.seed;
  cfg.toy.seed = cfg.seed;
  cfg.adapt.finetune.seed = cfg.seed;
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
  kernels::set_default_exec(cfg.threads == 1 ? kernels::Exec::serial : kernels::Exec::parallel);
  return cfg;
}

fs::path out_dir(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

json config_json(const ExperimentConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : cfg.values()) j[k] = v;
  return j;
}

/// Common header of every report: the exact config plus its hash.
json report_base(const ExperimentConfig& cfg, const std::string& command) {
  return {{"command", command}, {"config_hash", cfg.hash()}, {"seed", cfg.seed}, {"config", config_json(cfg)}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Content hash of a directory: sorted relative names and bytes, manifests
/// of earlier commands excluded.
std::string dir_fingerprint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename().string().find(".manifest.json") == std::string::npos)
      files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  std::uint64_t h = kFnvOffset;
  for (const fs::path& f : files) {
    h = fnv1a(std::string_view(f.generic_string()), h);
    std::ifstream in(dir / f, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    h = fnv1a(std::string_view(bytes), h);
  }
  return hex64(h);
}

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg, const json& inputs,
                    std::vector<std::string> outputs) {
  std::sort(outputs.begin(), outputs.end());
  const json j = {{"command", command},       {"version", kVersion}, {"seed", cfg.seed},
                  {"config_hash", cfg.hash()}, {"config", config_json(cfg)}, {"inputs", inputs},
                  {"outputs", outputs}};
  write_json(dir / (command + ".manifest.json"), j);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required option ") + flag);
}

std::optional<double> eval_pstar(const ExperimentConfig& cfg) {
  if (cfg.eval.p_star > 0.0) return cfg.eval.p_star;
  return std::nullopt;
}

double effective_p(const Model& model, const std::optional<double>& p_star) {
  return p_star ? *p_star : model.gem.p_value();
}

AugmentConfig train_augment(const ExperimentConfig& cfg, const Dataset& ds) {
  AugmentConfig aug = cfg.augment;
  aug.basis = LightingBasis::fit(ds.train);
  aug.output_size = cfg.train.resolution;
  return aug;
}

/// Evaluation-time augmentation for query copies at resolution s.
AugmentConfig copy_augment(const ExperimentConfig& cfg, const Dataset& ds, std::size_t resolution) {
  AugmentConfig aug = train_augment(cfg, ds);
  aug.output_size = resolution;
  return aug;
}

Tensor maybe_whiten(const Tensor& emb, const std::optional<WhiteningTransform>& w) {
  return w ? apply_whitening(emb, *w) : emb;
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  std::vector<double> v(a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  return Tensor({a.dim(0) + b.dim(0), a.dim(1)}, std::move(v));
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const ExperimentConfig& cfg) {
  const fs::path dir = out_dir(cfg);
  const Dataset ds = synth_dataset(cfg.data, cfg.seed);
  save_dataset(ds, dir / "data");
  json rep = report_base(cfg, "gen-data");
  rep["dataset_fingerprint"] = ds.fingerprint();
  rep["classes"] = ds.classes;
  rep["train"] = ds.train.size();
  rep["val"] = ds.val.size();
  rep["distractors"] = ds.distractors.size();
  write_json(dir / "dataset.json", rep);
  write_manifest(dir, "gen-data", cfg, json::object(), {"data", "dataset.json"});
  std::fprintf(stderr, "dataset %s: %zu train, %zu val, %zu distractors\n", ds.fingerprint().c_str(),
               ds.train.size(), ds.val.size(), ds.distractors.size());
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const Inputs& in) {
  require(in.data, "--data");
  const fs::path dir = out_dir(cfg);
  const Dataset ds = load_dataset(in.data);
  const AugmentConfig aug = train_augment(cfg, ds);
  std::vector<EpochLog> rows;
  auto on_epoch = [&](const EpochLog& l) {
    rows.push_back(l);
    std::fprintf(stderr, "epoch %zu lr %.4g loss %.4f val_top1 %.4f beta %.4f p %.4f\n", l.epoch, l.lr, l.loss,
                 l.val_top1, l.beta, l.p);
  };
  TrainResult result;
  try {
    result = train(ds, cfg.trunk, cfg.train, cfg.gem, cfg.margin, aug, on_epoch);
  } catch (const DivergenceError&) {
    write_train_log(rows, dir / "train_log.csv");
    throw;
  }
  save_checkpoint(result.model, dir / "checkpoint");
  write_train_log(result.log, dir / "train_log.csv");
  const EpochLog& last = result.log.back();
  json rep = report_base(cfg, "train");
  rep["dataset_fingerprint"] = ds.fingerprint();
  rep["iterations_per_epoch"] = result.iterations_per_epoch;
  rep["val_top1"] = last.val_top1;
  rep["final_loss"] = last.loss;
  rep["beta"] = last.beta;
  rep["p"] = last.p;
  write_json(dir / "train_report.json", rep);
  write_manifest(dir, "train", cfg, {{"data", ds.fingerprint()}},
                 {"checkpoint", "train_log.csv", "train_report.json"});
  return 0;
}

int cmd_eval_classify(const ExperimentConfig& cfg, const Inputs& in) {
  require(in.data, "--data");
  require(in.checkpoint, "--checkpoint");
  const fs::path dir = out_dir(cfg);
  const Dataset ds = load_dataset(in.data);
  const Model model = load_checkpoint(in.checkpoint);
  const auto p_star = eval_pstar(cfg);
  const Tensor emb = embed_records(model, ds.val, cfg.eval.resolution, p_star);
  const double top1 = top1_accuracy(model.head, emb, ds.val);

  EvalReport r{"top1", top1, ds.fingerprint(), cfg.eval.resolution, effective_p(model, p_star), cfg.train.lambda,
               false};
  r.check();
  json rep = report_base(cfg, "eval-classify");
  rep.update(json::parse(r.to_json()));
  json inputs = {{"data", ds.fingerprint()}, {"checkpoint", dir_fingerprint(in.checkpoint)}};

  if (!in.whitening.empty()) {
    const WhiteningTransform w = load_whitening(in.whitening);
    const FoldedHead folded = fold_classifier(model.head, w);
    const Tensor logits = folded_logits(emb, folded, w);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < ds.val.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < folded.classes; ++c)
        if (logits[i * folded.classes + c] > logits[i * folded.classes + best]) best = c;
      ok += static_cast<int>(best) == ds.val[i].label;
    }
    rep["whitened_top1"] = static_cast<double>(ok) / static_cast<double>(ds.val.size());
    inputs["whitening"] = dir_fingerprint(in.whitening);
  }
  write_json(dir / "classify.json", rep);
  write_manifest(dir, "eval-classify", cfg, inputs, {"classify.json"});
  std::fprintf(stderr, "top1 %.4f\n", top1);
  return 0;
}

int cmd_eval_retrieval(const ExperimentConfig& cfg, const Inputs& in, const std::string& metric) {
  require(in.data, "--data");
  require(in.checkpoint, "--checkpoint");
  const fs::path dir = out_dir(cfg);
  const Dataset ds = load_dataset(in.data);
  const Model model = load_checkpoint(in.checkpoint);
  const auto p_star = eval_pstar(cfg);
  const std::size_t s = cfg.eval.resolution;
  std::optional<WhiteningTransform> w;
  if (!in.whitening.empty()) w = load_whitening(in.whitening);
  const std::uint64_t task_seed = derive_seed(cfg.seed, 0xe7a1);

  double value = 0.0;
  if (metric == "inaug") {
    const InAugTask task = inaug_build(ds.val, cfg.eval.inaug_per_class, copy_augment(cfg, ds, s), task_seed,
                                       cfg.eval.inaug_copies);
    const Tensor q = maybe_whiten(embed_images(model, task.originals, s, p_star), w);
    const Tensor c = maybe_whiten(embed_prepared(model, task.copy_images, p_star), w);
    value = inaug_score(q, c, task);
  } else if (metric == "map") {
    // Every val image queries val + distractors; relevant = same class.
    const Tensor ev = maybe_whiten(embed_records(model, ds.val, s, p_star), w);
    const Tensor ed = maybe_whiten(embed_records(model, ds.distractors, s, p_star), w);
    const std::size_t nv = ds.val.size(), d = ev.dim(1);
    const Tensor all = stack_rows(ev, ed);
    std::vector<std::int64_t> ids;
    std::vector<bool> distractor;
    for (const auto& r : ds.val) ids.push_back(r.image_id), distractor.push_back(false);
    for (const auto& r : ds.distractors) ids.push_back(r.image_id), distractor.push_back(true);
    const RetrievalIndex index = RetrievalIndex::build(all, ids, {}, distractor);
    std::vector<RetrievalQuery> queries;
    for (std::size_t i = 0; i < nv; ++i) {
      RetrievalQuery q;
      q.embedding.assign(ev.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                         ev.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
      q.image_id = ds.val[i].image_id;
      for (const auto& r : ds.val)
        if (r.label == ds.val[i].label && r.image_id != ds.val[i].image_id) q.relevant.push_back(r.image_id);
      queries.push_back(std::move(q));
    }
    value = mean_average_precision(index, queries);
  } else if (metric == "ukb") {
    // Groups of four augmented views per selected val image.
    const InAugTask task = inaug_build(ds.val, cfg.eval.inaug_per_class, copy_augment(cfg, ds, s), task_seed, 4);
    const Tensor c = maybe_whiten(embed_prepared(model, task.copy_images, p_star), w);
    const RetrievalIndex index = RetrievalIndex::build(c, task.copy_ids, task.copy_owner);
    value = ukb_score(index);
  } else if (metric == "copydetect") {
    const InAugTask task = inaug_build(ds.val, cfg.eval.inaug_per_class,
                                       copydetect_distortion(s, LightingBasis::fit(ds.train)), task_seed, 1);
    const Tensor orig = maybe_whiten(embed_images(model, task.originals, s, p_star), w);
    const Tensor ed = maybe_whiten(embed_records(model, ds.distractors, s, p_star), w);
    const Tensor queries = maybe_whiten(embed_prepared(model, task.copy_images, p_star), w);
    const Tensor all = stack_rows(orig, ed);
    std::vector<std::int64_t> ids = task.query_ids;
    std::vector<bool> distractor(orig.dim(0), false);
    for (const auto& r : ds.distractors) ids.push_back(r.image_id), distractor.push_back(true);
    const RetrievalIndex index = RetrievalIndex::build(all, ids, {}, distractor);
    value = copydetect_map(index, queries, task.query_ids);
  } else {
    throw ConfigError("unknown retrieval metric '" + metric + "'");
  }

  EvalReport r{metric, value, ds.fingerprint(), s, effective_p(model, p_star), cfg.train.lambda, w.has_value()};
  r.check();
  json rep = report_base(cfg, "eval-retrieval");
  rep.update(json::parse(r.to_json()));
  const std::string name = "retrieval_" + metric + ".json";
  write_json(dir / name, rep);
  json inputs = {{"data", ds.fingerprint()}, {"checkpoint", dir_fingerprint(in.checkpoint)}};
  if (w) inputs["whitening"] = dir_fingerprint(in.whitening);
  write_manifest(dir, "eval-retrieval", cfg, inputs, {name});
  std::fprintf(stderr, "%s %.4f\n", metric.c_str(), value);
  return 0;
}

int cmd_fit_whitening(const ExperimentConfig& cfg, const Inputs& in) {
  const fs::path dir = out_dir(cfg);
  Tensor emb;
  json inputs;
  if (!in.embeddings.empty()) {
    emb = mgt1::read(in.embeddings);
    inputs["embeddings"] = hex64(fnv1a(std::span<const double>(emb.data())));
  } else {
    require(in.data, "--data (or --embeddings)");
    require(in.checkpoint, "--checkpoint (or --embeddings)");
    const Dataset ds = load_dataset(in.data);
    const Model model = load_checkpoint(in.checkpoint);
    emb = embed_records(model, ds.distractors, cfg.eval.resolution, eval_pstar(cfg));
    inputs = {{"data", ds.fingerprint()}, {"checkpoint", dir_fingerprint(in.checkpoint)}};
  }
  const WhiteningTransform t = fit_whitening(emb, cfg.whitening);
  save_whitening(t, dir / "whitening");
  if (t.clamped > 0)
    std::fprintf(stderr, "warning: %zu of %zu eigenvalues clamped to the floor %.3g\n", t.clamped, t.dim, t.floor);
  json rep = report_base(cfg, "fit-whitening");
  rep["dim"] = t.dim;
  rep["fit_count"] = t.fit_count;
  rep["clamped"] = t.clamped;
  rep["floor"] = t.floor;
  rep["fit_fingerprint"] = t.fit_fingerprint;
  rep["eigenvalues"] = t.eigenvalues;
  write_json(dir / "whitening_report.json", rep);
  write_manifest(dir, "fit-whitening", cfg, inputs, {"whitening", "whitening_report.json"});
  return 0;
}

int cmd_fold_head(const ExperimentConfig& cfg, const Inputs& in) {
  require(in.checkpoint, "--checkpoint");
  require(in.whitening, "--whitening");
  const fs::path dir = out_dir(cfg);
  const Model model = load_checkpoint(in.checkpoint);
  const WhiteningTransform w = load_whitening(in.whitening);
  const FoldedHead folded = fold_classifier(model.head, w);
  fs::create_directories(dir / "folded_head");
  mgt1::write(dir / "folded_head" / "weights.mgt", Tensor({folded.classes, folded.dim}, folded.weights));
  mgt1::write(dir / "folded_head" / "offset.mgt", Tensor::vector(folded.offset));
  mgt1::write(dir / "folded_head" / "bias.mgt", Tensor::vector(folded.bias));

  json rep = report_base(cfg, "fold-head");
  rep["classes"] = folded.classes;
  rep["dim"] = folded.dim;
  json inputs = {{"checkpoint", dir_fingerprint(in.checkpoint)}, {"whitening", dir_fingerprint(in.whitening)}};
  if (!in.data.empty()) {
    // Folded scores on whitened embeddings against the original head on
    // raw embeddings.
    const Dataset ds = load_dataset(in.data);
    const Tensor emb = embed_records(model, ds.val, cfg.eval.resolution, eval_pstar(cfg));
    const Tensor a = classifier_logits(emb, model.head);
    const Tensor b = folded_logits(emb, folded, w);
    double max_rel = 0.0;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.dim(0); ++i) {
      std::size_t ia = 0, ib = 0;
      for (std::size_t c = 0; c < a.dim(1); ++c) {
        const std::size_t k = a.dim(1);
        const double x = a[i * k + c], y = b[i * k + c];
        max_rel = std::max(max_rel, std::abs(x - y) / std::max(1.0, std::abs(x)));
        if (x > a[i * k + ia]) ia = c;
        if (y > b[i * k + ib]) ib = c;
      }
      agree += ia == ib;
    }
    rep["max_relative_logit_difference"] = max_rel;
    rep["decision_agreement"] = static_cast<double>(agree) / static_cast<double>(a.dim(0));
    inputs["data"] = ds.fingerprint();
  }
  write_json(dir / "fold_report.json", rep);
  write_manifest(dir, "fold-head", cfg, inputs, {"folded_head", "fold_report.json"});
  return 0;
}

int cmd_adapt(const ExperimentConfig& cfg, const Inputs& in, const std::vector<std::size_t>& curve_res) {
  require(in.data, "--data");
  require(in.checkpoint, "--checkpoint");
  const fs::path dir = out_dir(cfg);
  const Dataset ds = load_dataset(in.data);
  const Model model = load_checkpoint(in.checkpoint);
  cfg.adapt.validate(model);
  const std::size_t s = cfg.adapt.resolution;

  json rep = report_base(cfg, "adapt");
  std::vector<std::string> outputs{"adapt.json"};
  double chosen = 0.0;
  if (cfg.adapt.mode == AdaptMode::sweep) {
    const InAugTask task = inaug_build(ds.val, cfg.eval.inaug_per_class, copy_augment(cfg, ds, s),
                                       derive_seed(cfg.seed, 0xe7a1), cfg.eval.inaug_copies);
    const SweepResult r = pstar_sweep(model, task, cfg.adapt);
    write_sweep_csv(r, dir / "sweep.csv");
    outputs.push_back("sweep.csv");
    chosen = r.best_p;
    rep["mode"] = "sweep";
    rep["best_score"] = r.best_score;
  } else {
    const FinetuneResult r = pstar_finetune(model, ds.train, cfg.adapt);
    std::ofstream traj(dir / "finetune_trajectory.csv");
    if (!traj) throw IoError("cannot write finetune_trajectory.csv");
    traj << "iteration,p_star\n" << std::setprecision(17);
    for (std::size_t i = 0; i < r.trajectory.size(); ++i) traj << i + 1 << ',' << r.trajectory[i] << '\n';
    outputs.push_back("finetune_trajectory.csv");
    chosen = r.p_star;
    rep["mode"] = "finetune";
    rep["iterations"] = r.iterations;
  }
  const Tensor at_train_p = embed_records(model, ds.val, s);
  const Tensor at_pstar = embed_records(model, ds.val, s, chosen);
  rep["resolution"] = s;
  rep["trained_p"] = model.gem.p_value();
  rep["p_star"] = chosen;
  rep["top1_trained_p"] = top1_accuracy(model.head, at_train_p, ds.val);
  rep["top1_p_star"] = top1_accuracy(model.head, at_pstar, ds.val);

  if (!curve_res.empty()) {
    const AugmentConfig aug = train_augment(cfg, ds);
    const auto cells =
        scale_accuracy_curve(model, ds.val, curve_res, cfg.adapt.grid, &ds.val, &aug, derive_seed(cfg.seed, 0xe7a1));
    write_curve_csv(cells, dir / "curve.csv");
    outputs.push_back("curve.csv");
  }
  write_json(dir / "adapt.json", rep);
  write_manifest(dir, "adapt", cfg, {{"data", ds.fingerprint()}, {"checkpoint", dir_fingerprint(in.checkpoint)}},
                 outputs);
  std::fprintf(stderr, "p* %.4f at s*=%zu: top1 %.4f (trained p: %.4f)\n", chosen, s,
               rep["top1_p_star"].get<double>(), rep["top1_trained_p"].get<double>());
  return 0;
}

int cmd_toy_ra(const ExperimentConfig& cfg, const std::string& curves_name) {
  const fs::path dir = out_dir(cfg);
  const ToyComparison c = toy_compare(cfg.toy);
  write_toy_curves(c, dir / curves_name);
  json rep = report_base(cfg, "toy-ra");
  rep.update(json::parse(toy_summary_json(cfg.toy, c)));
  write_json(dir / "toy_summary.json", rep);
  write_manifest(dir, "toy-ra", cfg, json::object(), {curves_name, "toy_summary.json"});
  std::fprintf(stderr, "paired %.4f uniform %.4f difference %.4f +- %.4f\n", c.final_a, c.final_b, c.mean_diff,
               c.stderr_diff);
  return 0;
}

int cmd_grad_check(const ExperimentConfig& cfg, std::size_t points) {
  const fs::path dir = out_dir(cfg);
  const auto checks = standard_grad_checks(cfg.seed, points);
  json ops = json::array();
  bool all = true;
  for (const auto& c : checks) {
    const bool pass = c.finite && c.max_rel_error <= kGradTolerance;
    all = all && pass;
    ops.push_back({{"op", c.op}, {"points", c.points}, {"max_rel_error", c.max_rel_error}, {"pass", pass}});
    std::fprintf(stderr, "%-24s %.3e %s\n", c.op.c_str(), c.max_rel_error, pass ? "ok" : "FAIL");
  }
  json rep = report_base(cfg, "grad-check");
  rep["tolerance"] = kGradTolerance;
  rep["ops"] = ops;
  rep["pass"] = all;
  write_json(dir / "grad_check.json", rep);
  write_manifest(dir, "grad-check", cfg, json::object(), {"grad_check.json"});
  return all ? 0 : 1;
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, double>>& out) {
  if (j.is_number()) {
    out.emplace_back(prefix, j.get<double>());
  } else if (j.is_boolean()) {
    out.emplace_back(prefix, j.get<bool>() ? 1.0 : 0.0);
  } else if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      if (prefix.empty() && (k == "config" || k == "seed" || k == "eigenvalues")) continue;
      flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    }
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      const json& e = j[i];
      const std::string key = e.is_object() && e.contains("op") ? e["op"].get<std::string>() : std::to_string(i);
      flatten(e, prefix + "[" + key + "]", out);
    }
  }
}

int cmd_report(const ExperimentConfig& cfg, const std::string& scan) {
  require(scan, "--dir");
  if (!fs::is_directory(scan)) throw IoError("not a directory: " + scan);
  const fs::path dir = out_dir(cfg);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(scan)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && e.path().extension() == ".json" && name.find(".manifest.") == std::string::npos &&
        name != "manifest.json" && name != "whitening.json")
      files.push_back(fs::relative(e.path(), scan));
  }
  std::sort(files.begin(), files.end());
  std::ostringstream csv;
  csv << "file,config_hash,key,value\n" << std::setprecision(17);
  std::size_t rows = 0;
  for (const fs::path& f : files) {
    std::ifstream in(fs::path(scan) / f);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw IoError("malformed report " + f.string() + ": " + e.what());
    }
    if (!j.is_object()) continue;
    const std::string hash = j.value("config_hash", "");
    std::vector<std::pair<std::string, double>> kv;
    if (j.contains("metric") && j.contains("value")) {
      kv.emplace_back(j["metric"].get<std::string>(), j["value"].get<double>());
    } else {
      flatten(j, "", kv);
    }
    for (const auto& [k, v] : kv) {
      csv << f.generic_string() << ',' << hash << ',' << k << ',' << v << '\n';
      ++rows;
    }
  }
  write_text(dir / "summary.csv", csv.str());
  write_manifest(dir, "report", cfg, {{"files", files.size()}}, {"summary.csv"});
  std::fprintf(stderr, "%zu rows from %zu reports\n", rows, files.size());
  return 0;
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::config:
      return 2;
    case ErrorKind::io:
      return 3;
    case ErrorKind::shape:
    case ErrorKind::domain:
    case ErrorKind::precondition:
      return 4;
    case ErrorKind::divergence:
      return 5;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"jembed: joint classification and retrieval embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common common;
  Inputs in;
  std::string metric = "map";
  std::string toy_out = "curves.csv";
  std::string report_dir;
  std::vector<std::size_t> curve;
  std::optional<std::size_t> runs, resolution;
  std::optional<std::string> mode;
  std::size_t points = 10;

  auto* gen = app.add_subcommand("gen-data", "render the synthetic dataset");
  auto* train = app.add_subcommand("train", "train trunk, pooling, head and margin");
  auto* classify = app.add_subcommand("eval-classify", "top-1 accuracy on the val split");
  auto* retrieval = app.add_subcommand("eval-retrieval", "retrieval metrics");
  auto* fitw = app.add_subcommand("fit-whitening", "fit PCA whitening on distractor embeddings");
  auto* fold = app.add_subcommand("fold-head", "fold a whitening into the classifier head");
  auto* adapt = app.add_subcommand("adapt", "choose p* for a test resolution");
  auto* toy = app.add_subcommand("toy-ra", "toy batch-sampling comparison");
  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient checks");
  auto* report = app.add_subcommand("report", "aggregate JSON reports into summary.csv");

  for (auto* cmd : {gen, train, classify, retrieval, fitw, fold, adapt, toy, grad, report}) add_common(cmd, common);
  for (auto* cmd : {train, classify, retrieval, fitw, fold, adapt}) cmd->add_option("--data", in.data, "dataset dir");
  for (auto* cmd : {classify, retrieval, fitw, fold, adapt})
    cmd->add_option("--checkpoint", in.checkpoint, "checkpoint dir");
  for (auto* cmd : {classify, retrieval, fold}) cmd->add_option("--whitening", in.whitening, "whitening dir");
  retrieval->add_option("--metric", metric, "map, ukb, inaug or copydetect")
      ->check(CLI::IsMember({"map", "ukb", "inaug", "copydetect"}));
  fitw->add_option("--embeddings", in.embeddings, "MGT1 [n,d] tensor to fit on");
  adapt->add_option("--mode", mode, "sweep or finetune")->check(CLI::IsMember({"sweep", "finetune"}));
  adapt->add_option("--resolution", resolution, "test resolution s*");
  adapt->add_option("--curve", curve, "also write accuracy over these resolutions x the p grid")->delimiter(',');
  toy->add_option("--runs", runs, "independent runs");
  toy->add_option("--curves", toy_out, "curve file name inside the output directory");
  grad->add_option("--points", points, "checked coordinates per operation");
  report->add_option("--dir", report_dir, "directory scanned for reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig cfg = resolve(common);
    if (*gen) return cmd_gen_data(cfg);
    if (*train) return cmd_train(cfg, in);
    if (*classify) return cmd_eval_classify(cfg, in);
    if (*retrieval) return cmd_eval_retrieval(cfg, in, metric);
    if (*fitw) return cmd_fit_whitening(cfg, in);
    if (*fold) return cmd_fold_head(cfg, in);
    if (*adapt) {
      if (mode) cfg.set("adapt.mode", *mode);
      if (resolution) cfg.adapt.resolution = *resolution;
      return cmd_adapt(cfg, in, curve);
    }
    if (*toy) {
      if (runs) cfg.toy.runs = *runs;
      return cmd_toy_ra(cfg, toy_out);
    }
    if (*grad) return cmd_grad_check(cfg, points);
    if (*report) return cmd_report(cfg, report_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
