#include "ser/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ser/error.hpp"
#include "ser/rng.hpp"

namespace ser {

void EvalConfig::validate() const {
  if (thresholds.empty()) throw UsageError("at least one similarity threshold is required");
  if (ks.empty()) throw UsageError("at least one K is required");
  for (std::size_t k : ks)
    if (k < 1) throw UsageError("K must be at least 1");
  if (baseline_trials < 1) throw UsageError("baseline_trials must be at least 1");
}

double average_precision(std::span<const int> agreements, int s, std::size_t k) {
  const std::size_t n = std::min(k, agreements.size());
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (agreements[i] >= s) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

namespace {

std::vector<int> agreements_of(const RetrievalResult& r) {
  std::vector<int> out;
  out.reserve(r.ranked.size());
  for (const auto& item : r.ranked) {
    if (item.agreement < 0)
      throw DataError("retrieval result for " + r.query_id + " lacks ground-truth agreement");
    out.push_back(item.agreement);
  }
  return out;
}

constexpr QueryClass kClasses[] = {QueryClass::SingleLabel, QueryClass::MultiLabel, QueryClass::All};

const LabelVector& labels_of(const std::map<std::string, LabelVector>& labels, const std::string& id) {
  const auto it = labels.find(id);
  if (it == labels.end()) throw DataError("no labels for clip " + id);
  return it->second;
}

}  // namespace

double map_at_k(std::span<const RetrievalResult> results, int s, std::size_t k) {
  if (results.empty()) throw DataError("empty query set");
  double total = 0.0;
  for (const auto& r : results) total += average_precision(agreements_of(r), s, k);
  return total / static_cast<double>(results.size());
}

const char* to_string(QueryClass c) {
  switch (c) {
    case QueryClass::SingleLabel: return "single";
    case QueryClass::MultiLabel: return "multi";
    case QueryClass::All: return "all";
  }
  return "all";
}

bool in_class(const LabelVector& labels, QueryClass c) {
  switch (c) {
    case QueryClass::SingleLabel: return labels.count() == 1;
    case QueryClass::MultiLabel: return labels.count() >= 2;
    case QueryClass::All: return true;
  }
  return false;
}

const MetricRow& MetricTable::at(QueryClass c, int s, std::size_t k, const std::string& system) const {
  for (const auto& row : rows)
    if (row.query_class == c && row.s == s && row.k == k && row.system == system) return row;
  throw DataError(std::string("no metric row for ") + to_string(c) + " s=" + std::to_string(s) +
                  " K=" + std::to_string(k) + " system=" + system);
}

void MetricTable::append(const MetricTable& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

MetricTable random_baseline(std::span<const std::string> queries,
                            std::span<const std::string> database,
                            const std::map<std::string, LabelVector>& labels, const EvalConfig& cfg) {
  cfg.validate();
  if (queries.empty()) throw DataError("empty query set");
  const std::size_t max_k = *std::max_element(cfg.ks.begin(), cfg.ks.end());
  const std::size_t nt = cfg.thresholds.size(), nk = cfg.ks.size();

  // sums[class][threshold][k]
  std::vector<double> sums(3 * nt * nk, 0.0);
  std::array<std::size_t, 3> counts{};
  std::vector<std::string> pool;
  std::vector<int> r;
  for (int trial = 0; trial < cfg.baseline_trials; ++trial) {
    Rng rng(derive_seed(cfg.baseline_seed, static_cast<std::uint64_t>(trial)));
    for (const auto& q : queries) {
      const LabelVector& ql = labels_of(labels, q);
      pool.clear();
      for (const auto& d : database)
        if (d != q) pool.push_back(d);
      rng.shuffle(std::span(pool));
      const std::size_t n = std::min(max_k, pool.size());
      r.clear();
      for (std::size_t i = 0; i < n; ++i) r.push_back(ground_truth_agreement(ql, labels_of(labels, pool[i])));
      for (int c = 0; c < 3; ++c) {
        if (!in_class(ql, kClasses[c])) continue;
        if (trial == 0) ++counts[c];
        for (std::size_t si = 0; si < nt; ++si)
          for (std::size_t ki = 0; ki < nk; ++ki)
            sums[(c * nt + si) * nk + ki] += average_precision(r, cfg.thresholds[si], cfg.ks[ki]);
      }
    }
  }
  MetricTable table;
  for (int c = 0; c < 3; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t si = 0; si < nt; ++si)
      for (std::size_t ki = 0; ki < nk; ++ki)
        table.rows.push_back({kClasses[c], cfg.thresholds[si], cfg.ks[ki], "baseline",
                              sums[(c * nt + si) * nk + ki] /
                                  (static_cast<double>(counts[c]) * cfg.baseline_trials),
                              counts[c]});
  }
  return table;
}

MetricTable evaluate_system(std::span<const RetrievalResult> results,
                            const std::map<std::string, LabelVector>& labels,
                            const EvalConfig& cfg, const std::string& system) {
  cfg.validate();
  if (results.empty()) throw DataError("empty query set");
  MetricTable table;
  for (QueryClass c : kClasses) {
    std::vector<RetrievalResult> subset;
    for (const auto& r : results)
      if (in_class(labels_of(labels, r.query_id), c)) subset.push_back(r);
    if (subset.empty()) continue;
    for (int s : cfg.thresholds)
      for (std::size_t k : cfg.ks)
        table.rows.push_back({c, s, k, system, map_at_k(subset, s, k), subset.size()});
  }
  return table;
}

MetricTable evaluate(std::span<const RetrievalResult> results, std::span<const std::string> database,
                     const std::map<std::string, LabelVector>& labels, const EvalConfig& cfg,
                     const std::string& system) {
  MetricTable table = evaluate_system(results, labels, cfg, system);
  std::vector<std::string> queries;
  for (const auto& r : results) queries.push_back(r.query_id);
  table.append(random_baseline(queries, database, labels, cfg));
  return table;
}

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void write_metric_table(const std::filesystem::path& path, const MetricTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "query_class\ts\tK\tsystem\tmAP\n";
  for (const auto& row : table.rows)
    out << to_string(row.query_class) << '\t' << row.s << '\t' << row.k << '\t' << row.system << '\t'
        << fixed(row.value) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::string format_summary(const MetricTable& table) {
  std::vector<std::size_t> ks;
  std::vector<std::tuple<QueryClass, int, std::string>> lines;
  for (const auto& row : table.rows) {
    if (std::find(ks.begin(), ks.end(), row.k) == ks.end()) ks.push_back(row.k);
    const auto key = std::make_tuple(row.query_class, row.s, row.system);
    if (std::find(lines.begin(), lines.end(), key) == lines.end()) lines.push_back(key);
  }
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-7s %-3s %-10s %-6s", "queries", "s", "system", "n");
  out << buf;
  for (std::size_t k : ks) {
    std::snprintf(buf, sizeof buf, " %8s", ("K=" + std::to_string(k)).c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& [c, s, system] : lines) {
    std::size_t n = 0;
    for (const auto& row : table.rows)
      if (row.query_class == c && row.s == s && row.system == system) n = row.queries;
    std::snprintf(buf, sizeof buf, "%-7s %-3d %-10s %-6zu", to_string(c), s, system.c_str(), n);
    out << buf;
    for (std::size_t k : ks) {
      std::string cell = "-";
      for (const auto& row : table.rows)
        if (row.query_class == c && row.s == s && row.system == system && row.k == k)
          cell = fixed(row.value, 4);
      std::snprintf(buf, sizeof buf, " %8s", cell.c_str());
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

void write_plot_csv(const std::filesystem::path& path, const MetricTable& table) {
  std::vector<std::size_t> ks;
  std::vector<std::tuple<QueryClass, int, std::string>> lines;
  for (const auto& row : table.rows) {
    if (std::find(ks.begin(), ks.end(), row.k) == ks.end()) ks.push_back(row.k);
    const auto key = std::make_tuple(row.query_class, row.s, row.system);
    if (std::find(lines.begin(), lines.end(), key) == lines.end()) lines.push_back(key);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "query_class,s,system";
  for (std::size_t k : ks) out << ",K" << k;
  out << '\n';
  for (const auto& [c, s, system] : lines) {
    out << to_string(c) << ',' << s << ',' << system;
    for (std::size_t k : ks) {
      out << ',';
      for (const auto& row : table.rows)
        if (row.query_class == c && row.s == s && row.system == system && row.k == k)
          out << fixed(row.value);
    }
    out << '\n';
  }
}

}  // namespace ser
