#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "ser/gradcheck.hpp"
#include "ser/manifest.hpp"
#include "ser/run_config.hpp"

namespace ser {

/// git blob hash: sha1("blob <size>\0" + content), lowercase hex.
std::string content_hash(const std::filesystem::path& file);
/// Hash over the sorted "<name> <blob hash>" lines of a directory's regular files.
std::string directory_hash(const std::filesystem::path& dir);

/// Locations used by the subcommands. Empty paths fall back to the defaults
/// inside out_dir: features/, pairs.tsv, model.ckpt, retrieval.tsv.
struct RunPaths {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  std::filesystem::path features_dir;
  std::filesystem::path pairs;
  std::filesystem::path checkpoint;
  std::filesystem::path retrieval;

  RunPaths resolved() const;
};

/// Each command validates the manifest first, writes its artifacts to
/// out_dir, and records run_<command>.txt with the config echo, seed and
/// content hashes of inputs and outputs. Progress goes to `log`.
Manifest cmd_ingest(const std::filesystem::path& annotations, const std::filesystem::path& audio_dir,
                    const RunConfig& cfg, const RunPaths& paths, std::ostream& log);
void cmd_features(const RunConfig& cfg, const RunPaths& paths, std::ostream& log);
PairGeneration cmd_pairs(const RunConfig& cfg, const RunPaths& paths, std::ostream& log);
TrainResult cmd_train(const RunConfig& cfg, const RunPaths& paths, std::ostream& log);
void cmd_retrieve(const RunConfig& cfg, const RunPaths& paths, std::ostream& log);
MetricTable cmd_evaluate(const RunConfig& cfg, const RunPaths& paths, std::ostream& log);

/// Gradient check of the configured variant; returns false when any tensor
/// exceeds the tolerance.
bool cmd_gradcheck(const RunConfig& cfg, const GradCheckOptions& options, std::ostream& log);

}  // namespace ser
