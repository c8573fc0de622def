#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ser/features.hpp"
#include "ser/pairing.hpp"
#include "ser/presence.hpp"

namespace ser {

enum class Split { Train, Test };

const char* to_string(Split s);

struct ManifestRow {
  std::string clip_id;
  Split split = Split::Train;
  std::string audio_path;      // empty when absent
  std::string embedding_path;  // empty when absent
  LabelVector labels;
};

/// Coarse taxonomy in header order.
inline const std::array<std::string, kCategories> kCoarseCategories = {
    "engine",      "machinery-impact", "non-machinery-impact", "powered-saw",
    "alert-signal", "music",           "human-voice",          "dog"};

/// Clip list with split and labels. On disk: a "#categories:" line with the 8
/// tab-separated category names, a column header line, then rows of
/// clip_id, split, audio_path, embedding_path, labels ("-" for an absent path).
struct Manifest {
  std::array<std::string, kCategories> categories = kCoarseCategories;
  std::vector<ManifestRow> rows;

  std::vector<std::string> ids(Split split) const;
  std::vector<LabeledClip> labeled(Split split) const;
  std::map<std::string, LabelVector> label_map() const;
  const ManifestRow& row(const std::string& clip_id) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Unique ids; relative paths resolve against `base`. With `kind` set, every
/// row must reference an existing file of that kind (audio for LogMel,
/// embedding for VGGish). Throws DataError describing the first problem.
void validate_manifest(const Manifest& manifest, const std::filesystem::path& base,
                       const FeatureKind* kind);

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& path);

struct IngestOptions {
  std::filesystem::path audio_dir;  // prefix for audio_filename
  int min_annotators = 1;
};

/// Aggregates a DCASE 2019 Task 5 style annotations CSV (one row per clip
/// and annotator, columns split, audio_filename and "<n>_<name>_presence"
/// per coarse category) into a manifest. A category is present when at least
/// min_annotators marked it. "train" maps to Train, "validate"/"test" to Test.
Manifest ingest(const std::filesystem::path& annotations, const IngestOptions& options);

}  // namespace ser
