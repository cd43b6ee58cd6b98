#include "jembed/toy_ra.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "json.hpp"
#include "jembed/error.hpp"
#include "jembed/rng.hpp"

namespace mg {

namespace {

using Point = std::array<double, 2>;

struct Labelled {
  Point p;
  double y;
};

Labelled draw(Rng& rng, const ToyConfig& cfg, double y) {
  return {{rng.normal(0.0, cfg.sigma), rng.normal(y * cfg.mean_offset, cfg.sigma)}, y};
}

Labelled flip(const Labelled& s, FlipAxis axis) {
  Labelled f = s;
  f.p[axis == FlipAxis::y ? 1 : 0] = -f.p[axis == FlipAxis::y ? 1 : 0];
  return f;
}

double accuracy(const Point& w, const std::vector<Labelled>& test) {
  std::size_t ok = 0;
  for (const Labelled& s : test) ok += (w[0] * s.p[0] + w[1] * s.p[1]) * s.y > 0.0;
  return static_cast<double>(ok) / static_cast<double>(test.size());
}

}  // namespace

const char* toy_sampling_name(ToySampling s) { return s == ToySampling::paired ? "paired" : "uniform"; }

void ToyConfig::validate() const {
  if (per_class == 0) throw ConfigError("toy: per_class must be positive");
  if (!(sigma > 0.0)) throw ConfigError("toy: sigma must be positive");
  if (batch_size != 2) throw ConfigError("toy: batch size must be 2 (one point and its augmentation)");
  if (runs == 0) throw ConfigError("toy: runs must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("toy: lr must be finite and non-negative");
  if (test_size == 0) throw ConfigError("toy: test size must be positive");
}

std::vector<double> toy_run(const ToyConfig& cfg, ToySampling mode, std::size_t run_index) {
  cfg.validate();
  // Data, test set and initialization depend on the run only, so both
  // modes of a run see the same problem.
  Rng data_rng(derive_seed(cfg.seed, run_index, 0xda7a));
  std::vector<Labelled> originals;
  for (std::size_t i = 0; i < cfg.per_class; ++i) originals.push_back(draw(data_rng, cfg, +1.0));
  for (std::size_t i = 0; i < cfg.per_class; ++i) originals.push_back(draw(data_rng, cfg, -1.0));
  Rng test_rng(derive_seed(cfg.seed, run_index, 0x7e57));
  std::vector<Labelled> test;
  for (std::size_t i = 0; i < cfg.test_size; ++i) test.push_back(draw(test_rng, cfg, i % 2 == 0 ? 1.0 : -1.0));
  Rng init_rng(derive_seed(cfg.seed, run_index, 0x1417));
  Point w{init_rng.normal(), init_rng.normal()};

  Rng order_rng(derive_seed(cfg.seed, run_index, 0x0de5));
  std::vector<std::array<Labelled, 2>> batches;
  if (mode == ToySampling::paired) {
    std::vector<std::size_t> idx(originals.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    order_rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i : idx) batches.push_back({originals[i], flip(originals[i], cfg.flip)});
  } else {
    std::vector<Labelled> all = originals;
    for (const Labelled& s : originals) all.push_back(flip(s, cfg.flip));
    order_rng.shuffle(std::span<Labelled>(all));
    for (std::size_t i = 0; i + 1 < all.size(); i += 2) batches.push_back({all[i], all[i + 1]});
  }

  std::vector<double> curve{accuracy(w, test)};
  for (const auto& batch : batches) {
    Point g{0.0, 0.0};
    for (const Labelled& s : batch) {
      if (1.0 - s.y * (w[0] * s.p[0] + w[1] * s.p[1]) > 0.0) {
        g[0] -= s.y * s.p[0];
        g[1] -= s.y * s.p[1];
      }
    }
    w[0] -= cfg.lr * g[0] / 2.0;
    w[1] -= cfg.lr * g[1] / 2.0;
    curve.push_back(accuracy(w, test));
  }
  return curve;
}

ToyComparison toy_compare(const ToyConfig& cfg, ToySampling a, ToySampling b) {
  cfg.validate();
  std::vector<std::vector<double>> ca(cfg.runs), cb(cfg.runs);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    ca[r] = toy_run(cfg, a, r);
    cb[r] = toy_run(cfg, b, r);
  }
  ToyComparison out;
  out.a = a;
  out.b = b;
  const std::size_t len = ca.front().size();
  const double n = static_cast<double>(cfg.runs);
  auto stats = [&](const std::vector<std::vector<double>>& curves, std::vector<double>& mean, std::vector<double>& sd) {
    mean.assign(len, 0.0);
    sd.assign(len, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
      for (const auto& c : curves) mean[t] += c[t];
      mean[t] /= n;
      for (const auto& c : curves) sd[t] += (c[t] - mean[t]) * (c[t] - mean[t]);
      sd[t] = cfg.runs > 1 ? std::sqrt(sd[t] / (n - 1.0)) : 0.0;
    }
  };
  stats(ca, out.mean_a, out.std_a);
  stats(cb, out.mean_b, out.std_b);
  out.final_a = out.mean_a.back();
  out.final_b = out.mean_b.back();
  std::vector<double> diff(cfg.runs);
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    diff[r] = ca[r].back() - cb[r].back();
    out.mean_diff += diff[r];
  }
  out.mean_diff /= n;
  for (double d : diff) out.std_diff += (d - out.mean_diff) * (d - out.mean_diff);
  out.std_diff = cfg.runs > 1 ? std::sqrt(out.std_diff / (n - 1.0)) : 0.0;
  out.stderr_diff = out.std_diff / std::sqrt(n);
  return out;
}

void write_toy_curves(const ToyComparison& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string na = toy_sampling_name(c.a), nb = toy_sampling_name(c.b);
  out << "iteration," << na << "_mean," << na << "_std," << nb << "_mean," << nb << "_std\n";
  out << std::setprecision(17);
  for (std::size_t t = 0; t < c.mean_a.size(); ++t)
    out << t << ',' << c.mean_a[t] << ',' << c.std_a[t] << ',' << c.mean_b[t] << ',' << c.std_b[t] << '\n';
}

std::string toy_summary_json(const ToyConfig& cfg, const ToyComparison& c) {
  const nlohmann::json j = {
      {"config",
       {{"per_class", cfg.per_class},
        {"mean_offset", cfg.mean_offset},
        {"sigma", cfg.sigma},
        {"batch_size", cfg.batch_size},
        {"runs", cfg.runs},
        {"lr", cfg.lr},
        {"test_size", cfg.test_size},
        {"flip_axis", cfg.flip == FlipAxis::y ? "y" : "x"},
        {"seed", cfg.seed}}},
      {"mode_a", toy_sampling_name(c.a)},
      {"mode_b", toy_sampling_name(c.b)},
      {"final_accuracy_a", c.final_a},
      {"final_accuracy_b", c.final_b},
      {"mean_difference", c.mean_diff},
      {"std_difference", c.std_diff},
      {"stderr_difference", c.stderr_diff},
  };
  return j.dump(2);
}

}  // namespace mg
