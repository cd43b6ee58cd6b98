#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "jembed/adapt.hpp"
#include "jembed/augment.hpp"
#include "jembed/data.hpp"
#include "jembed/gem.hpp"
#include "jembed/model.hpp"
#include "jembed/toy_ra.hpp"
#include "jembed/trainer.hpp"
#include "jembed/trunk.hpp"
#include "jembed/whitening.hpp"

namespace mg {

struct EvalSettings {
  std::size_t resolution = 32;   ///< s*
  double p_star = 0.0;           ///< 0 keeps the checkpoint's exponent
  std::size_t inaug_per_class = 10;
  std::size_t inaug_copies = 5;
};

/// Every tunable of the pipeline, read from flat `key = value` lines.
/// '#' starts a comment. Unknown keys are errors.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int threads = 0;  ///< 0 leaves the OpenMP default

  SynthConfig data;
  TrunkConfig trunk;
  GemConfig gem;
  MarginConfig margin;
  TrainConfig train;
  AugmentConfig augment;
  WhiteningConfig whitening;
  EvalSettings eval;
  AdaptConfig adapt;
  ToyConfig toy;

  /// Applies one assignment; throws ConfigError for an unknown key or a
  /// malformed value.
  void set(const std::string& key, const std::string& value);
  void parse(const std::string& text, const std::string& origin = "<config>");
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Every key with its current value, sorted by key. out_dir names a
  /// location rather than an experiment setting and is left out, so the
  /// same experiment hashes identically wherever it is written.
  std::map<std::string, std::string> values() const;
  /// `key = value` lines in key order; parse(canonical()) round-trips.
  std::string canonical() const;
  /// FNV-1a of canonical(), hex.
  std::string hash() const;

  static std::vector<std::string> keys();
};

}  // namespace mg
