#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ser/presence.hpp"

namespace ser {

struct LabeledClip {
  std::string clip_id;
  LabelVector labels;
};

/// Unordered training pair; id_a < id_b lexicographically.
struct PairRecord {
  std::string id_a;
  std::string id_b;
  PresenceMatrix target;
};

/// How the per-side draws for each (category, target clip) are taken.
///
/// SharedOrder draws one seeded permutation of the training set and, for every
/// target, takes the first per_side eligible clips in that order. Each draw is
/// still a uniform sample without replacement from its pool; draws for
/// different targets are coupled through the shared order, so popular
/// candidates recur and the global dedup pass removes more pairs.
/// Independent reshuffles every pool for every draw.
enum class PairSampling { SharedOrder, Independent };

const char* to_string(PairSampling mode);
PairSampling parse_pair_sampling(const std::string& name);

struct PairingOptions {
  int per_side = 30;
  std::uint64_t seed = 0;
  PairSampling sampling = PairSampling::SharedOrder;
};

/// Same-status vs opposite-status counts among the distinct pairs drawn for
/// one category.
struct CategoryBalance {
  std::size_t same = 0;
  std::size_t opposite = 0;

  double imbalance() const {
    const double total = static_cast<double>(same + opposite);
    return total > 0 ? std::abs(static_cast<double>(same) - static_cast<double>(opposite)) / total
                     : 0.0;
  }
};

struct PairGeneration {
  std::vector<PairRecord> pairs;  // sorted by (id_a, id_b), no duplicates
  std::size_t draws_before_dedup = 0;
  std::array<CategoryBalance, kCategories> balance{};
  std::vector<std::string> warnings;
};

/// Balanced training pairs: for every category and every target clip (in
/// input order), per_side clips with the same status for that category and
/// per_side with the opposite status, followed by a global dedup.
/// Throws DataError if fewer than two clips are given or ids repeat.
PairGeneration generate_training_pairs(std::span<const LabeledClip> train_set,
                                       const PairingOptions& options);

using IdPair = std::pair<std::string, std::string>;

/// Full query x database cross product, query-major.
std::vector<IdPair> generate_eval_pairs(std::span<const std::string> queries,
                                        std::span<const std::string> database);

/// TSV with header "id_a\tid_b".
void write_pair_list(const std::filesystem::path& path, std::span<const PairRecord> pairs);
std::vector<IdPair> read_pair_list(const std::filesystem::path& path);

/// Recomputes targets from labels. Throws DataError for unknown ids or self pairs.
std::vector<PairRecord> attach_targets(std::span<const IdPair> ids,
                                       const std::map<std::string, LabelVector>& labels);

}  // namespace ser
