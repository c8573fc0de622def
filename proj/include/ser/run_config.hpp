#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ser/features.hpp"
#include "ser/metrics.hpp"
#include "ser/network.hpp"
#include "ser/pairing.hpp"
#include "ser/retrieval.hpp"
#include "ser/training.hpp"

namespace ser {

/// Every tunable of a pipeline run. Read from a flat key=value file
/// ('#' comments); command-line flags are applied on top with set().
struct RunConfig {
  std::uint64_t seed = 0;
  FeatureKind features = FeatureKind::VGGish;
  NetworkConfig network;
  TrainConfig train;
  EvalConfig eval;
  int per_side = 30;
  PairSampling pair_sampling = PairSampling::SharedOrder;
  int min_annotators = 1;
  std::size_t retrieve_k = 100;
  ScoreMode score_mode = ScoreMode::Soft;
  std::optional<std::uint64_t> baseline_seed;  // defaults to seed

  /// Throws UsageError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  TrainConfig train_config() const;
  EvalConfig eval_config() const;
  PairingOptions pairing_options() const;

  /// Canonical key=value listing of every field.
  std::string to_text() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace ser
