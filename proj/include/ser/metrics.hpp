#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ser/presence.hpp"
#include "ser/retrieval.hpp"

namespace ser {

struct EvalConfig {
  std::vector<int> thresholds{7, 8};
  std::vector<std::size_t> ks{1, 5, 10, 30, 50, 100};
  std::uint64_t baseline_seed = 0;
  int baseline_trials = 10;

  void validate() const;
};

/// AP_s@K over the first K entries of `agreements` (K clamps to the list
/// length). A hit is r >= s. Returns 0 when the top K has no hit.
double average_precision(std::span<const int> agreements, int s, std::size_t k);

/// mAP_s@K: unweighted mean of AP over the queries. Throws DataError for an
/// empty query set or results lacking ground-truth agreement.
double map_at_k(std::span<const RetrievalResult> results, int s, std::size_t k);

enum class QueryClass { SingleLabel, MultiLabel, All };

const char* to_string(QueryClass c);
/// SingleLabel for exactly one present category, MultiLabel for two or more.
/// Clips with no category belong only to All.
bool in_class(const LabelVector& labels, QueryClass c);

struct MetricRow {
  QueryClass query_class = QueryClass::All;
  int s = 0;
  std::size_t k = 0;
  std::string system;
  double value = 0.0;
  std::size_t queries = 0;
};

struct MetricTable {
  std::vector<MetricRow> rows;

  /// Throws DataError when absent.
  const MetricRow& at(QueryClass c, int s, std::size_t k, const std::string& system) const;
  void append(const MetricTable& other);
};

/// Random ranking baseline: per trial and query, a seeded uniform
/// permutation of the database (the query excluded); mAP averaged over trials.
MetricTable random_baseline(std::span<const std::string> queries,
                            std::span<const std::string> database,
                            const std::map<std::string, LabelVector>& labels, const EvalConfig& cfg);

/// Full grid (query class x threshold x K) for one system's results.
MetricTable evaluate_system(std::span<const RetrievalResult> results,
                            const std::map<std::string, LabelVector>& labels,
                            const EvalConfig& cfg, const std::string& system);

/// evaluate_system for the model plus the random baseline over `database`.
MetricTable evaluate(std::span<const RetrievalResult> results, std::span<const std::string> database,
                     const std::map<std::string, LabelVector>& labels, const EvalConfig& cfg,
                     const std::string& system = "model");

/// TSV: query_class, s, K, system, mAP.
void write_metric_table(const std::filesystem::path& path, const MetricTable& table);
std::string format_summary(const MetricTable& table);
/// CSV with one row per (query_class, s, system) and one column per K.
void write_plot_csv(const std::filesystem::path& path, const MetricTable& table);

}  // namespace ser
