#include "ser/embedding_store.hpp"

namespace ser {

void EmbeddingStore::insert(EmbeddingSequence e) {
  auto id = e.clip_id;
  items_.insert_or_assign(std::move(id), std::move(e));
}

const EmbeddingSequence* EmbeddingStore::find(const std::string& clip_id) const {
  const auto it = items_.find(clip_id);
  return it == items_.end() ? nullptr : &it->second;
}

const EmbeddingSequence& EmbeddingStore::at(const std::string& clip_id) const {
  if (const auto* e = find(clip_id)) return *e;
  throw DataError("missing embedding for clip " + clip_id);
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& dir,
                                    std::span<const std::string> ids, FeatureKind kind) {
  EmbeddingStore store;
  for (const auto& id : ids) {
    const auto path = dir / (id + ".sere");
    if (!std::filesystem::exists(path)) throw DataError("missing embedding for clip " + id);
    EmbeddingSequence e = load_embedding(path, kind);
    validate(e);
    store.insert(std::move(e));
  }
  return store;
}

}  // namespace ser
