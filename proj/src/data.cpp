#include "jembed/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "jembed/error.hpp"
#include "jembed/hash.hpp"
#include "jembed/mgt1.hpp"
#include "jembed/rng.hpp"

namespace mg {

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::val: return "val";
    case Partition::distractor: return "distractor";
  }
  return "?";
}

std::string Dataset::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  for (const auto* part : {&train, &val, &distractors}) {
    for (const ImageRecord& r : *part) {
      const double meta[2] = {static_cast<double>(r.image_id), static_cast<double>(r.label)};
      h = fnv1a(std::span<const double>(meta, 2), h);
      h = fnv1a(r.pixels.data(), h);
    }
    h = fnv1a(std::string_view("|"), h);
  }
  return hex64(h);
}

void SynthConfig::validate() const {
  if (classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (per_class < 2) throw ConfigError("synth: need at least 2 images per class");
  if (image_size < 8) throw ConfigError("synth: image size must be at least 8");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("synth: val_fraction must be in (0,1)");
  const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * per_class));
  if (n_val == 0 || n_val >= per_class) throw ConfigError("synth: split leaves an empty partition");
}

namespace {

constexpr std::size_t kShapes = 5;

using Rgb = std::array<double, 3>;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Unit-radius primitives in the object's rotated frame.
bool inside(std::size_t shape, double u, double v) {
  switch (shape) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::max(std::abs(u), std::abs(v)) <= 0.8;
    case 2: return v >= -0.5 && v <= 1.0 - std::sqrt(3.0) * std::abs(u);
    case 3: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    }
    default:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
  }
}

// Class c owns the c-th unordered pair of hues from a palette just large
// enough to give every class its own pair.
std::pair<double, double> class_hues(std::size_t cls, std::size_t classes) {
  std::size_t palette = 4;
  while (palette * (palette - 1) / 2 < classes) ++palette;
  std::size_t k = cls;
  for (std::size_t i = 0; i < palette; ++i) {
    const std::size_t row = palette - 1 - i;
    if (k < row) {
      const double n = static_cast<double>(palette);
      return {(i + 0.5) / n, (i + 1 + k + 0.5) / n};
    }
    k -= row;
  }
  return {0.0, 0.5};
}

struct Blob {
  std::size_t shape;
  double cx, cy, radius, angle;
  Rgb color;
};

void paint(std::vector<double>& px, std::size_t size, const Blob& b) {
  const double c = std::cos(b.angle), s = std::sin(b.angle);
  const auto lo = [&](double centre) {
    return static_cast<std::size_t>(std::max(0.0, std::floor(centre - b.radius - 1)));
  };
  const auto hi = [&](double centre) {
    return std::min(size, static_cast<std::size_t>(std::ceil(centre + b.radius + 1)));
  };
  for (std::size_t y = lo(b.cy); y < hi(b.cy); ++y) {
    for (std::size_t x = lo(b.cx); x < hi(b.cx); ++x) {
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double dx = (x + 0.25 + 0.5 * sx - b.cx) / b.radius;
          const double dy = (y + 0.25 + 0.5 * sy - b.cy) / b.radius;
          hits += inside(b.shape, c * dx + s * dy, -s * dx + c * dy) ? 1 : 0;
        }
      }
      if (hits == 0) continue;
      const double a = hits / 4.0;
      double* p = &px[(y * size + x) * 3];
      for (int k = 0; k < 3; ++k) p[k] = (1 - a) * p[k] + a * b.color[k];
    }
  }
}

Tensor render(std::size_t cls, std::size_t classes, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  const double S = static_cast<double>(size);
  const auto [hue_a, hue_b] = class_hues(cls, classes);

  std::vector<double> px(size * size * 3);
  const Rgb bg = hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.25), rng.uniform(0.25, 0.55));
  const double theta = rng.uniform(0.0, 2 * std::numbers::pi);
  const double grad = rng.uniform(-0.15, 0.15);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double t = (std::cos(theta) * (x + 0.5) + std::sin(theta) * (y + 0.5)) / S - 0.5;
      for (int k = 0; k < 3; ++k) px[(y * size + x) * 3 + k] = bg[k] + grad * t;
    }
  }

  std::vector<Blob> blobs;
  if (rng.uniform() < 0.5) {
    // Unsaturated clutter that carries no class information.
    const double r = rng.uniform(0.08, 0.14) * S;
    const double gray = rng.uniform(0.6, 0.95);
    blobs.push_back({static_cast<std::size_t>(rng.below(kShapes)), rng.uniform(r, S - r), rng.uniform(r, S - r), r,
                     rng.uniform(0.0, 2 * std::numbers::pi), hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.1), gray)});
  }
  const std::size_t objects = 1 + static_cast<std::size_t>(rng.below(3));
  for (std::size_t o = 0; o < objects; ++o) {
    // Two-tone object: a shape of one class hue around a core of the other.
    const double r = rng.uniform(0.16, 0.26) * S;
    const bool swap = rng.uniform() < 0.5;
    Blob outer{static_cast<std::size_t>(rng.below(kShapes)), rng.uniform(r, S - r), rng.uniform(r, S - r), r,
               rng.uniform(0.0, 2 * std::numbers::pi), {}};
    outer.color = hsv_to_rgb((swap ? hue_b : hue_a) + rng.uniform(-0.02, 0.02), rng.uniform(0.65, 1.0),
                             rng.uniform(0.7, 1.0));
    Blob core{0, outer.cx, outer.cy, 0.45 * r, 0.0, {}};
    core.color = hsv_to_rgb((swap ? hue_a : hue_b) + rng.uniform(-0.02, 0.02), rng.uniform(0.65, 1.0),
                            rng.uniform(0.7, 1.0));
    blobs.push_back(outer);
    blobs.push_back(core);
  }
  for (const Blob& b : blobs) paint(px, size, b);

  // Sensor noise, then quantize to 8-bit levels stored exactly in float32.
  for (double& v : px) {
    v = std::clamp(v + rng.normal(0.0, 0.02), 0.0, 1.0);
    v = static_cast<double>(static_cast<float>(std::round(v * 255.0) / 255.0));
  }
  return Tensor({size, size, 3}, std::move(px));
}

Tensor stack(const std::vector<ImageRecord>& records, std::size_t size) {
  std::vector<double> all;
  all.reserve(records.size() * size * size * 3);
  for (const ImageRecord& r : records) all.insert(all.end(), r.pixels.data().begin(), r.pixels.data().end());
  return Tensor({records.size(), size, size, 3}, std::move(all));
}

}  // namespace

Dataset synth_dataset(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset ds;
  ds.classes = cfg.classes;
  ds.image_size = cfg.image_size;
  const auto n_val = static_cast<std::size_t>(std::lround(cfg.val_fraction * cfg.per_class));
  std::int64_t next_id = 0;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      ImageRecord r{next_id++, static_cast<int>(c), render(c, cfg.classes, cfg.image_size, derive_seed(seed, c, i))};
      (i < cfg.per_class - n_val ? ds.train : ds.val).push_back(std::move(r));
    }
  }
  Rng pick(derive_seed(seed, 0xd157ULL));
  for (std::size_t k = 0; k < cfg.distractors; ++k) {
    const std::size_t c = static_cast<std::size_t>(pick.below(cfg.classes));
    ds.distractors.push_back(
        {next_id++, -1, render(c, cfg.classes, cfg.image_size, derive_seed(seed, 0xd157ULL, k))});
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  manifest << "image_id,class,partition\n";
  const std::pair<const std::vector<ImageRecord>*, Partition> parts[] = {
      {&ds.train, Partition::train}, {&ds.val, Partition::val}, {&ds.distractors, Partition::distractor}};
  for (const auto& [records, part] : parts) {
    for (const ImageRecord& r : *records) manifest << r.image_id << ',' << r.label << ',' << partition_name(part) << '\n';
    if (!records->empty()) {
      mgt1::write(dir / (std::string(partition_name(part)) + ".mgt"), stack(*records, ds.image_size), mgt1::DType::f32);
    }
  }
  std::ofstream meta(dir / "dataset.txt");
  meta << "classes=" << ds.classes << "\nimage_size=" << ds.image_size << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "dataset.txt");
  std::ifstream manifest(dir / "manifest.csv");
  if (!meta || !manifest) throw IoError("not a dataset directory: " + dir.string());
  Dataset ds;
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::size_t value = std::stoul(line.substr(eq + 1));
    if (key == "classes") ds.classes = value;
    if (key == "image_size") ds.image_size = value;
  }
  std::vector<ImageRecord>* targets[] = {&ds.train, &ds.val, &ds.distractors};
  std::getline(manifest, line);
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, label, part;
    std::getline(ss, id, ',');
    std::getline(ss, label, ',');
    std::getline(ss, part, ',');
    ImageRecord r{std::stoll(id), std::stoi(label), {}};
    if (part == "train") ds.train.push_back(r);
    else if (part == "val") ds.val.push_back(r);
    else if (part == "distractor") ds.distractors.push_back(r);
    else throw IoError("manifest: unknown partition '" + part + "'");
  }
  const Partition parts[] = {Partition::train, Partition::val, Partition::distractor};
  for (int k = 0; k < 3; ++k) {
    auto& records = *targets[k];
    if (records.empty()) continue;
    const Tensor all = mgt1::read(dir / (std::string(partition_name(parts[k])) + ".mgt"));
    const std::size_t s = ds.image_size;
    if (all.shape() != Shape{records.size(), s, s, 3}) {
      throw IoError(std::string("dataset: image stack for ") + partition_name(parts[k]) + " has shape " +
                    shape_str(all.shape()));
    }
    const std::size_t per = s * s * 3;
    for (std::size_t i = 0; i < records.size(); ++i) {
      auto first = all.data().begin() + static_cast<std::ptrdiff_t>(i * per);
      records[i].pixels = Tensor({s, s, 3}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
    }
  }
  return ds;
}

Tensor crop_resize(const Tensor& img, double x0, double y0, double w, double h, std::size_t out_h,
                   std::size_t out_w) {
  if (img.ndim() != 3 || img.dim(2) != 3) throw ShapeError("crop_resize: expected [H,W,3], got " + shape_str(img.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("crop_resize: empty output");
  if (!(w > 0.0 && h > 0.0)) throw DomainError("crop_resize: degenerate box");
  const std::size_t H = img.dim(0), W = img.dim(1);
  const auto src = img.data();
  std::vector<double> out(out_h * out_w * 3);
  // Precomputed taps per column.
  std::vector<std::size_t> xl(out_w), xh(out_w);
  std::vector<double> xf(out_w);
  for (std::size_t j = 0; j < out_w; ++j) {
    const double sx = std::clamp(x0 + (j + 0.5) * w / out_w - 0.5, 0.0, static_cast<double>(W - 1));
    xl[j] = static_cast<std::size_t>(sx);
    xh[j] = std::min(xl[j] + 1, W - 1);
    xf[j] = sx - xl[j];
  }
  for (std::size_t i = 0; i < out_h; ++i) {
    const double sy = std::clamp(y0 + (i + 0.5) * h / out_h - 0.5, 0.0, static_cast<double>(H - 1));
    const auto yl = static_cast<std::size_t>(sy);
    const std::size_t yh = std::min(yl + 1, H - 1);
    const double fy = sy - yl;
    for (std::size_t j = 0; j < out_w; ++j) {
      for (std::size_t k = 0; k < 3; ++k) {
        const double a = src[(yl * W + xl[j]) * 3 + k], b = src[(yl * W + xh[j]) * 3 + k];
        const double c = src[(yh * W + xl[j]) * 3 + k], d = src[(yh * W + xh[j]) * 3 + k];
        const double top = a + (b - a) * xf[j];
        const double bot = c + (d - c) * xf[j];
        out[(i * out_w + j) * 3 + k] = top + (bot - top) * fy;
      }
    }
  }
  return Tensor({out_h, out_w, 3}, std::move(out));
}

Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.ndim() != 3) throw ShapeError("resize: expected [H,W,3], got " + shape_str(img.shape()));
  return crop_resize(img, 0.0, 0.0, static_cast<double>(img.dim(1)), static_cast<double>(img.dim(0)), out_h, out_w);
}

Tensor prepare_eval_image(const Tensor& img, std::size_t resolution, std::size_t base_resolution) {
  if (img.ndim() != 3 || img.dim(2) != 3) throw ShapeError("eval input: expected [H,W,3], got " + shape_str(img.shape()));
  if (resolution == 0 || base_resolution == 0) throw DomainError("eval input: resolution must be positive");
  const double H = static_cast<double>(img.dim(0)), W = static_cast<double>(img.dim(1));
  if (resolution > base_resolution) {
    const double f = static_cast<double>(resolution) / std::max(H, W);
    const auto oh = static_cast<std::size_t>(std::max(1L, std::lround(H * f)));
    const auto ow = static_cast<std::size_t>(std::max(1L, std::lround(W * f)));
    return resize_bilinear(img, oh, ow);
  }
  const auto short_side = static_cast<std::size_t>(std::lround(resolution * 256.0 / 224.0));
  const double f = static_cast<double>(short_side) / std::min(H, W);
  const auto oh = std::max(resolution, static_cast<std::size_t>(std::lround(H * f)));
  const auto ow = std::max(resolution, static_cast<std::size_t>(std::lround(W * f)));
  const Tensor resized = resize_bilinear(img, oh, ow);
  const std::size_t oy = (oh - resolution) / 2, ox = (ow - resolution) / 2;
  std::vector<double> out(resolution * resolution * 3);
  const auto src = resized.data();
  for (std::size_t i = 0; i < resolution; ++i) {
    const auto row = src.begin() + static_cast<std::ptrdiff_t>(((oy + i) * ow + ox) * 3);
    std::copy(row, row + static_cast<std::ptrdiff_t>(resolution * 3), out.begin() + static_cast<std::ptrdiff_t>(i * resolution * 3));
  }
  return Tensor({resolution, resolution, 3}, std::move(out));
}

Tensor to_network_input(const std::vector<Tensor>& images) {
  if (images.empty()) throw ShapeError("network input: empty batch");
  const Shape& first = images.front().shape();
  if (first.size() != 3 || first[2] != 3) throw ShapeError("network input: expected [H,W,3], got " + shape_str(first));
  const std::size_t H = first[0], W = first[1], hw = H * W;
  std::vector<double> out(images.size() * 3 * hw);
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].shape() != first) {
      throw ShapeError("network input: mixed sizes " + shape_str(first) + " and " + shape_str(images[n].shape()));
    }
    const auto src = images[n].data();
    double* dst = out.data() + n * 3 * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < 3; ++k) dst[k * hw + p] = (src[p * 3 + k] - 0.5) * 4.0;
    }
  }
  return Tensor({images.size(), 3, H, W}, std::move(out));
}

}  // namespace mg
