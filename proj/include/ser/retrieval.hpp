#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ser/embedding_store.hpp"
#include "ser/network.hpp"
#include "ser/presence.hpp"

namespace ser {

/// Soft: column sum of the predicted probability matrix. Hard: number of rows
/// whose most probable status is both-present or neither-present.
enum class ScoreMode { Soft, Hard };

const char* to_string(ScoreMode mode);
ScoreMode parse_score_mode(const std::string& name);

struct RankedItem {
  std::string db_id;
  double predicted_similarity = 0.0;
  int agreement = -1;  // ground-truth r; -1 when labels are unavailable
};

/// Sorted by predicted similarity descending, ties by ascending db_id.
struct RetrievalResult {
  std::string query_id;
  std::vector<RankedItem> ranked;
  std::size_t k = 0;
};

/// The trained model plus an optional kind check for incoming features.
struct Model {
  NetworkParams params;
  NetworkConfig config;
  std::optional<FeatureKind> feature_kind;
};

double similarity_from_matrix(const PresenceMatrix& predicted, ScoreMode mode);

/// Inference-mode forward on one pair followed by the similarity level.
/// Throws DataError when the query and database feature kinds differ.
double score_pair(const Model& model, const EmbeddingSequence& query,
                  const EmbeddingSequence& db, ScoreMode mode = ScoreMode::Soft);

/// Scores against several database clips in batches of `batch_size`.
std::vector<double> score_many(const Model& model, const EmbeddingSequence& query,
                               std::span<const EmbeddingSequence* const> database,
                               ScoreMode mode = ScoreMode::Soft, int batch_size = 64);

bool ranks_before(const RankedItem& x, const RankedItem& y);

/// Scores every database clip except the query itself, attaches r from
/// `labels` when both clips are labelled, sorts and truncates to k.
/// Throws DataError naming the clip when an embedding is missing.
RetrievalResult retrieve(const Model& model, const std::string& query_id,
                         std::span<const std::string> database, const EmbeddingStore& store,
                         std::size_t k, const std::map<std::string, LabelVector>* labels = nullptr,
                         ScoreMode mode = ScoreMode::Soft);

/// TSV: query_id, rank, db_id, predicted_similarity (6 decimals), r.
void write_retrieval_report(const std::filesystem::path& path,
                            std::span<const RetrievalResult> results);
std::vector<RetrievalResult> read_retrieval_report(const std::filesystem::path& path);

}  // namespace ser
