#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <string>

namespace ser {

constexpr int kCategories = 8;
constexpr int kStatuses = 3;

/// Coarse-category presence for one clip. Bit k follows the category order
/// declared in the manifest header.
struct LabelVector {
  std::bitset<kCategories> bits;

  bool operator[](int k) const { return bits[static_cast<std::size_t>(k)]; }
  int count() const { return static_cast<int>(bits.count()); }
  bool operator==(const LabelVector&) const = default;

  static LabelVector from_mask(std::uint8_t mask) { return LabelVector{mask}; }
  std::uint8_t mask() const { return static_cast<std::uint8_t>(bits.to_ulong()); }
};

/// Parses an 8-character 0/1 string; character k is category k.
/// Throws DataError on any other input.
LabelVector parse_labels(const std::string& text);
std::string format_labels(const LabelVector& labels);

/// Column order of the pairwise presence matrix.
enum class PairStatus : int { BothPresent = 0, NeitherPresent = 1, OnePresent = 2 };

PairStatus pair_status(const LabelVector& a, const LabelVector& b, int category);

struct PresenceMatrix {
  enum class Mode { OneHot, Probabilistic };

  std::array<std::array<double, kStatuses>, kCategories> rows{};
  Mode mode = Mode::Probabilistic;

  double operator()(int k, int c) const { return rows[k][c]; }
  bool operator==(const PresenceMatrix&) const = default;
};

/// One-hot matrix: row k marks both / neither / exactly-one presence.
PresenceMatrix encode(const LabelVector& a, const LabelVector& b);

/// Sum of the both-present and neither-present columns over all rows.
double similarity_level(const PresenceMatrix& m);

/// Number of categories on which the two clips agree, in [0, 8].
int ground_truth_agreement(const LabelVector& a, const LabelVector& b);

/// True when every row is a distribution (entries in [0,1], sum 1 within tol)
/// and, for OneHot matrices, each row holds exactly one 1.
bool is_valid(const PresenceMatrix& m, double tol = 1e-6);

/// Eight lines of three space-separated decimals.
std::string format_matrix(const PresenceMatrix& m, int precision = 6);

}  // namespace ser
