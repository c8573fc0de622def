#include "ser/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ser/error.hpp"

namespace ser {

const char* to_string(ScoreMode mode) { return mode == ScoreMode::Soft ? "soft" : "hard"; }

ScoreMode parse_score_mode(const std::string& name) {
  if (name == "soft") return ScoreMode::Soft;
  if (name == "hard") return ScoreMode::Hard;
  throw UsageError("unknown score mode '" + name + "' (expected soft or hard)");
}

double similarity_from_matrix(const PresenceMatrix& predicted, ScoreMode mode) {
  if (mode == ScoreMode::Soft) return similarity_level(predicted);
  int agree = 0;
  for (const auto& row : predicted.rows) {
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    agree += best == static_cast<int>(PairStatus::BothPresent) ||
             best == static_cast<int>(PairStatus::NeitherPresent);
  }
  return agree;
}

namespace {

void check_kinds(const Model& model, const EmbeddingSequence& query, const EmbeddingSequence& db) {
  if (query.kind != db.kind)
    throw DataError("feature-kind mismatch: " + query.clip_id + " is " + to_string(query.kind) +
                    ", " + db.clip_id + " is " + to_string(db.kind));
  if (model.feature_kind && *model.feature_kind != query.kind)
    throw DataError("feature-kind mismatch: model expects " +
                    std::string(to_string(*model.feature_kind)) + " features, got " +
                    to_string(query.kind));
}

}  // namespace

double score_pair(const Model& model, const EmbeddingSequence& query, const EmbeddingSequence& db,
                  ScoreMode mode) {
  check_kinds(model, query, db);
  const auto trace = forward(model.params, model.config, query, db, PassOptions::inference());
  return similarity_from_matrix(pooled_matrix(trace, 0), mode);
}

std::vector<double> score_many(const Model& model, const EmbeddingSequence& query,
                               std::span<const EmbeddingSequence* const> database, ScoreMode mode,
                               int batch_size) {
  std::vector<double> scores;
  scores.reserve(database.size());
  std::vector<PairInput> batch;
  for (std::size_t start = 0; start < database.size(); start += batch_size) {
    const std::size_t end = std::min(database.size(), start + static_cast<std::size_t>(batch_size));
    batch.clear();
    for (std::size_t i = start; i < end; ++i) {
      check_kinds(model, query, *database[i]);
      batch.push_back({&query, database[i]});
    }
    const auto trace = forward(model.params, model.config, batch, PassOptions::inference());
    for (int b = 0; b < trace.batch; ++b)
      scores.push_back(similarity_from_matrix(pooled_matrix(trace, b), mode));
  }
  return scores;
}

bool ranks_before(const RankedItem& x, const RankedItem& y) {
  if (x.predicted_similarity != y.predicted_similarity)
    return x.predicted_similarity > y.predicted_similarity;
  return x.db_id < y.db_id;
}

RetrievalResult retrieve(const Model& model, const std::string& query_id,
                         std::span<const std::string> database, const EmbeddingStore& store,
                         std::size_t k, const std::map<std::string, LabelVector>* labels,
                         ScoreMode mode) {
  if (k < 1) throw UsageError("retrieve: k must be at least 1");
  const EmbeddingSequence& query = store.at(query_id);
  std::vector<std::string> ids;
  std::vector<const EmbeddingSequence*> db;
  for (const auto& id : database) {
    if (id == query_id) continue;
    ids.push_back(id);
    db.push_back(&store.at(id));
  }
  const std::vector<double> scores = score_many(model, query, db, mode);

  const LabelVector* query_labels = nullptr;
  if (labels) {
    const auto it = labels->find(query_id);
    if (it != labels->end()) query_labels = &it->second;
  }
  RetrievalResult result{query_id, {}, k};
  result.ranked.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    RankedItem item{ids[i], scores[i], -1};
    if (query_labels) {
      const auto it = labels->find(ids[i]);
      if (it != labels->end()) item.agreement = ground_truth_agreement(*query_labels, it->second);
    }
    result.ranked.push_back(std::move(item));
  }
  std::sort(result.ranked.begin(), result.ranked.end(), ranks_before);
  if (result.ranked.size() > k) result.ranked.resize(k);
  return result;
}

void write_retrieval_report(const std::filesystem::path& path,
                            std::span<const RetrievalResult> results) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "query_id\trank\tdb_id\tpredicted_similarity\tr\n";
  char score[64];
  for (const auto& res : results) {
    for (std::size_t i = 0; i < res.ranked.size(); ++i) {
      const auto& item = res.ranked[i];
      std::snprintf(score, sizeof score, "%.6f", item.predicted_similarity);
      out << res.query_id << '\t' << (i + 1) << '\t' << item.db_id << '\t' << score << '\t';
      if (item.agreement >= 0) out << item.agreement;
      else out << '-';
      out << '\n';
    }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<RetrievalResult> read_retrieval_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::vector<RetrievalResult> results;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream fields(line);
    std::string query, rank, db, score, r;
    if (!std::getline(fields, query, '\t') || !std::getline(fields, rank, '\t') ||
        !std::getline(fields, db, '\t') || !std::getline(fields, score, '\t') ||
        !std::getline(fields, r, '\t'))
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 5 columns");
    if (results.empty() || results.back().query_id != query) results.push_back({query, {}, 0});
    RankedItem item;
    item.db_id = db;
    try {
      item.predicted_similarity = std::stod(score);
      item.agreement = r == "-" ? -1 : std::stoi(r);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
    results.back().ranked.push_back(std::move(item));
    results.back().k = results.back().ranked.size();
  }
  return results;
}

}  // namespace ser
