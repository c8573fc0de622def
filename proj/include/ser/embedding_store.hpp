#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "ser/features.hpp"

namespace ser {

/// In-memory map from clip id to its embedding sequence.
class EmbeddingStore {
 public:
  void insert(EmbeddingSequence e);
  const EmbeddingSequence* find(const std::string& clip_id) const;
  /// Throws DataError naming the clip when absent.
  const EmbeddingSequence& at(const std::string& clip_id) const;
  std::size_t size() const { return items_.size(); }

  /// Loads `<dir>/<clip_id>.sere` for every id and validates each one.
  static EmbeddingStore load(const std::filesystem::path& dir, std::span<const std::string> ids,
                             FeatureKind kind);

 private:
  std::map<std::string, EmbeddingSequence> items_;
};

}  // namespace ser
