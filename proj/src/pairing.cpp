#include "ser/pairing.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "ser/error.hpp"
#include "ser/rng.hpp"

namespace ser {

const char* to_string(PairSampling mode) {
  return mode == PairSampling::SharedOrder ? "shared-order" : "independent";
}

PairSampling parse_pair_sampling(const std::string& name) {
  if (name == "shared-order") return PairSampling::SharedOrder;
  if (name == "independent") return PairSampling::Independent;
  throw UsageError("unknown pair sampling '" + name + "' (expected shared-order or independent)");
}

namespace {

std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

// Up to `count` entries of `pool` other than `exclude`, in pool order.
void take_first(const std::vector<std::uint32_t>& pool, std::uint32_t exclude, int count,
                std::vector<std::uint32_t>& out) {
  out.clear();
  for (std::uint32_t j : pool) {
    if (static_cast<int>(out.size()) == count) break;
    if (j != exclude) out.push_back(j);
  }
}

// Uniform sample of up to `count` entries (without replacement, excluding
// `exclude`) via a partial Fisher-Yates over a scratch copy.
void take_random(const std::vector<std::uint32_t>& pool, std::uint32_t exclude, int count,
                 Rng& rng, std::vector<std::uint32_t>& scratch, std::vector<std::uint32_t>& out) {
  scratch.clear();
  for (std::uint32_t j : pool)
    if (j != exclude) scratch.push_back(j);
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(count), scratch.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.uniform_index(scratch.size() - i);
    std::swap(scratch[i], scratch[j]);
  }
  out.assign(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(n));
}

}  // namespace

PairGeneration generate_training_pairs(std::span<const LabeledClip> train_set,
                                       const PairingOptions& options) {
  if (options.per_side < 1) throw UsageError("per_side must be at least 1");
  if (train_set.size() < 2) throw DataError("pair generation needs at least two clips");
  {
    std::unordered_set<std::string> seen;
    for (const auto& c : train_set)
      if (!seen.insert(c.clip_id).second) throw DataError("duplicate clip id " + c.clip_id);
  }

  const auto n = static_cast<std::uint32_t>(train_set.size());
  Rng rng(options.seed);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  if (options.sampling == PairSampling::SharedOrder) rng.shuffle(std::span(order));

  PairGeneration result;
  std::vector<std::uint64_t> all_keys;
  all_keys.reserve(static_cast<std::size_t>(n) * kCategories * 2 * options.per_side);
  std::vector<std::uint32_t> picked, scratch;

  for (int k = 0; k < kCategories; ++k) {
    // Candidate pools by presence of category k, in shared-order sequence.
    std::array<std::vector<std::uint32_t>, 2> pools;
    for (std::uint32_t j : order) pools[train_set[j].labels[k] ? 1 : 0].push_back(j);

    std::size_t empty_same = 0, empty_opposite = 0;
    std::vector<std::uint64_t> category_keys;
    for (std::uint32_t i = 0; i < n; ++i) {
      const int present = train_set[i].labels[k] ? 1 : 0;
      for (int side = 0; side < 2; ++side) {
        const auto& pool = pools[side == 0 ? present : 1 - present];
        if (options.sampling == PairSampling::SharedOrder)
          take_first(pool, i, options.per_side, picked);
        else
          take_random(pool, i, options.per_side, rng, scratch, picked);
        if (picked.empty()) ++(side == 0 ? empty_same : empty_opposite);
        for (std::uint32_t j : picked) category_keys.push_back(pair_key(i, j));
      }
    }
    result.draws_before_dedup += category_keys.size();
    all_keys.insert(all_keys.end(), category_keys.begin(), category_keys.end());

    std::sort(category_keys.begin(), category_keys.end());
    category_keys.erase(std::unique(category_keys.begin(), category_keys.end()), category_keys.end());
    for (std::uint64_t key : category_keys) {
      const auto a = static_cast<std::uint32_t>(key >> 32);
      const auto b = static_cast<std::uint32_t>(key & 0xFFFFFFFFu);
      if (train_set[a].labels[k] == train_set[b].labels[k])
        ++result.balance[k].same;
      else
        ++result.balance[k].opposite;
    }
    if (empty_same > 0)
      result.warnings.push_back("category " + std::to_string(k) + ": " +
                                std::to_string(empty_same) +
                                " targets had an empty same-status pool");
    if (empty_opposite > 0)
      result.warnings.push_back("category " + std::to_string(k) + ": " +
                                std::to_string(empty_opposite) +
                                " targets had an empty opposite-status pool");
  }

  std::sort(all_keys.begin(), all_keys.end());
  all_keys.erase(std::unique(all_keys.begin(), all_keys.end()), all_keys.end());

  result.pairs.reserve(all_keys.size());
  for (std::uint64_t key : all_keys) {
    const auto& a = train_set[key >> 32];
    const auto& b = train_set[key & 0xFFFFFFFFu];
    const bool a_first = a.clip_id < b.clip_id;
    const auto& first = a_first ? a : b;
    const auto& second = a_first ? b : a;
    result.pairs.push_back({first.clip_id, second.clip_id, encode(first.labels, second.labels)});
  }
  std::sort(result.pairs.begin(), result.pairs.end(), [](const PairRecord& x, const PairRecord& y) {
    return std::tie(x.id_a, x.id_b) < std::tie(y.id_a, y.id_b);
  });
  return result;
}

std::vector<IdPair> generate_eval_pairs(std::span<const std::string> queries,
                                        std::span<const std::string> database) {
  if (queries.empty() || database.empty())
    throw DataError("evaluation pairs need non-empty query and database lists");
  std::vector<IdPair> out;
  out.reserve(queries.size() * database.size());
  for (const auto& q : queries)
    for (const auto& d : database) out.emplace_back(q, d);
  return out;
}

void write_pair_list(const std::filesystem::path& path, std::span<const PairRecord> pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id_a\tid_b\n";
  for (const auto& p : pairs) out << p.id_a << '\t' << p.id_b << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<IdPair> read_pair_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::vector<IdPair> out;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "id_a\tid_b") throw DataError(path.string() + ": missing id_a/id_b header");
      continue;
    }
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected two columns");
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

std::vector<PairRecord> attach_targets(std::span<const IdPair> ids,
                                       const std::map<std::string, LabelVector>& labels) {
  std::vector<PairRecord> out;
  out.reserve(ids.size());
  for (const auto& [a, b] : ids) {
    if (a == b) throw DataError("self pair " + a);
    const auto ia = labels.find(a);
    const auto ib = labels.find(b);
    if (ia == labels.end()) throw DataError("pair references unknown clip " + a);
    if (ib == labels.end()) throw DataError("pair references unknown clip " + b);
    out.push_back({a, b, encode(ia->second, ib->second)});
  }
  return out;
}

}  // namespace ser
