#include "jembed/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "jembed/error.hpp"
#include "jembed/hash.hpp"

namespace mg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config: " + key + " = '" + value + "' is not " + expected);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, v, "a number");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, v, "a boolean");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(static_cast<double>(xs[i]));
    } else {
      out += fmt(static_cast<std::uint64_t>(xs[i]));
    }
  }
  return out;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "none"; }

struct Entry {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

using Table = std::map<std::string, Entry>;

template <typename Ref>
void add_double(Table& t, const std::string& key, Ref ref) {
  t[key] = {[ref](ExperimentConfig& c, const std::string& k, const std::string& v) { ref(c) = to_double(k, v); },
            [ref](const ExperimentConfig& c) { return fmt(ref(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Ref>
void add_size(Table& t, const std::string& key, Ref ref) {
  t[key] = {[ref](ExperimentConfig& c, const std::string& k, const std::string& v) {
              ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(to_u64(k, v));
            },
            [ref](const ExperimentConfig& c) {
              return fmt(static_cast<std::uint64_t>(ref(const_cast<ExperimentConfig&>(c))));
            }};
}

template <typename Ref>
void add_bool(Table& t, const std::string& key, Ref ref) {
  t[key] = {[ref](ExperimentConfig& c, const std::string& k, const std::string& v) { ref(c) = to_bool(k, v); },
            [ref](const ExperimentConfig& c) { return fmt(static_cast<bool>(ref(const_cast<ExperimentConfig&>(c)))); }};
}

template <typename Ref>
void add_optional(Table& t, const std::string& key, Ref ref) {
  t[key] = {[ref](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "none" || v.empty()) {
                ref(c).reset();
              } else {
                ref(c) = to_double(k, v);
              }
            },
            [ref](const ExperimentConfig& c) { return fmt_opt(ref(const_cast<ExperimentConfig&>(c))); }};
}

template <typename T, typename Ref>
void add_list(Table& t, const std::string& key, Ref ref) {
  t[key] = {[ref](ExperimentConfig& c, const std::string& k, const std::string& v) {
              std::vector<T> out;
              for (const std::string& item : split_list(v)) {
                if constexpr (std::is_floating_point_v<T>) {
                  out.push_back(to_double(k, item));
                } else {
                  out.push_back(static_cast<T>(to_u64(k, item)));
                }
              }
              ref(c) = std::move(out);
            },
            [ref](const ExperimentConfig& c) { return fmt_list(ref(const_cast<ExperimentConfig&>(c))); }};
}

#define MG_REF(expr) [](ExperimentConfig & c) -> auto& { return c.expr; }

const Table& table() {
  static const Table t = [] {
    Table t;
    add_size(t, "seed", MG_REF(seed));
    t["out_dir"] = {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
                    [](const ExperimentConfig& c) { return c.out_dir; }};
    t["threads"] = {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                      c.threads = static_cast<int>(to_u64(k, v));
                    },
                    [](const ExperimentConfig& c) { return std::to_string(c.threads); }};

    add_size(t, "data.classes", MG_REF(data.classes));
    add_size(t, "data.per_class", MG_REF(data.per_class));
    add_size(t, "data.image_size", MG_REF(data.image_size));
    add_double(t, "data.val_fraction", MG_REF(data.val_fraction));
    add_size(t, "data.distractors", MG_REF(data.distractors));

    add_list<std::size_t>(t, "trunk.channels", MG_REF(trunk.channels));
    add_size(t, "trunk.kernel", MG_REF(trunk.kernel));
    add_bool(t, "trunk.batch_norm", MG_REF(trunk.batch_norm));

    add_double(t, "gem.p", MG_REF(gem.p));
    add_optional(t, "gem.p_star", MG_REF(gem.p_star));
    add_bool(t, "gem.learnable", MG_REF(gem.learnable));
    add_double(t, "gem.epsilon", MG_REF(gem.epsilon));

    add_double(t, "margin.alpha", MG_REF(margin.alpha));
    add_double(t, "margin.beta0", MG_REF(margin.beta0));
    add_double(t, "margin.beta_lr", MG_REF(margin.beta_lr));
    add_optional(t, "margin.tau", MG_REF(margin.tau));

    add_double(t, "train.lr", MG_REF(train.lr));
    add_list<std::size_t>(t, "train.decay_epochs", MG_REF(train.decay_epochs));
    add_size(t, "train.epochs", MG_REF(train.epochs));
    add_double(t, "train.momentum", MG_REF(train.momentum));
    add_double(t, "train.weight_decay", MG_REF(train.weight_decay));
    add_size(t, "train.batch_size", MG_REF(train.batch_size));
    add_size(t, "train.m", MG_REF(train.repetitions));
    add_double(t, "train.lambda", MG_REF(train.lambda));
    add_size(t, "train.iterations_per_epoch", MG_REF(train.iterations_per_epoch));
    add_size(t, "train.resolution", MG_REF(train.resolution));
    add_bool(t, "train.eval_every_epoch", MG_REF(train.eval_every_epoch));

    add_bool(t, "augment.flip", MG_REF(augment.flip));
    add_double(t, "augment.scale_min", MG_REF(augment.scale_min));
    add_double(t, "augment.scale_max", MG_REF(augment.scale_max));
    add_double(t, "augment.ratio_min", MG_REF(augment.ratio_min));
    add_double(t, "augment.ratio_max", MG_REF(augment.ratio_max));
    add_double(t, "augment.brightness", MG_REF(augment.brightness));
    add_double(t, "augment.contrast", MG_REF(augment.contrast));
    add_double(t, "augment.saturation", MG_REF(augment.saturation));
    add_double(t, "augment.lighting", MG_REF(augment.lighting));

    add_double(t, "whitening.floor", MG_REF(whitening.floor_rel));
    add_double(t, "whitening.shrinkage", MG_REF(whitening.shrinkage));
    add_bool(t, "whitening.normalize", MG_REF(whitening.normalize));

    add_size(t, "eval.resolution", MG_REF(eval.resolution));
    add_double(t, "eval.p_star", MG_REF(eval.p_star));
    add_size(t, "eval.inaug_per_class", MG_REF(eval.inaug_per_class));
    add_size(t, "eval.inaug_copies", MG_REF(eval.inaug_copies));

    add_size(t, "adapt.resolution", MG_REF(adapt.resolution));
    add_list<double>(t, "adapt.grid", MG_REF(adapt.grid));
    t["adapt.mode"] = {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                         if (v == "sweep") {
                           c.adapt.mode = AdaptMode::sweep;
                         } else if (v == "finetune") {
                           c.adapt.mode = AdaptMode::finetune;
                         } else {
                           bad(k, v, "sweep or finetune");
                         }
                       },
                       [](const ExperimentConfig& c) {
                         return std::string(c.adapt.mode == AdaptMode::sweep ? "sweep" : "finetune");
                       }};
    add_size(t, "adapt.ft_batch_size", MG_REF(adapt.finetune.batch_size));
    add_double(t, "adapt.ft_momentum", MG_REF(adapt.finetune.momentum));
    add_double(t, "adapt.ft_lr", MG_REF(adapt.finetune.lr));
    add_double(t, "adapt.ft_power", MG_REF(adapt.finetune.power));
    add_size(t, "adapt.ft_per_class", MG_REF(adapt.finetune.per_class));

    add_size(t, "toy.per_class", MG_REF(toy.per_class));
    add_double(t, "toy.mean_offset", MG_REF(toy.mean_offset));
    add_double(t, "toy.sigma", MG_REF(toy.sigma));
    add_size(t, "toy.batch_size", MG_REF(toy.batch_size));
    add_size(t, "toy.runs", MG_REF(toy.runs));
    add_double(t, "toy.lr", MG_REF(toy.lr));
    add_size(t, "toy.test_size", MG_REF(toy.test_size));
    t["toy.flip_axis"] = {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                            if (v == "y") {
                              c.toy.flip = FlipAxis::y;
                            } else if (v == "x") {
                              c.toy.flip = FlipAxis::x;
                            } else {
                              bad(k, v, "x or y");
                            }
                          },
                          [](const ExperimentConfig& c) { return std::string(c.toy.flip == FlipAxis::y ? "y" : "x"); }};
    return t;
  }();
  return t;
}

#undef MG_REF

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto it = table().find(key);
  if (it == table().end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(*this, key, trim(value));
}

void ExperimentConfig::parse(const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig cfg;
  cfg.parse(buf.str(), path.string());
  return cfg;
}

std::map<std::string, std::string> ExperimentConfig::values() const {
  std::map<std::string, std::string> out;
  for (const auto& [key, entry] : table())
    if (key != "out_dir") out[key] = entry.get(*this);
  return out;
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& [key, value] : values()) out += key + " = " + value + "\n";
  return out;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a(std::string_view(canonical()))); }

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [key, entry] : table()) out.push_back(key);
  return out;
}

}  // namespace mg
