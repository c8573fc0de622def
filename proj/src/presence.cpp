#include "ser/presence.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "ser/error.hpp"

namespace ser {

LabelVector parse_labels(const std::string& text) {
  if (text.size() != kCategories)
    throw DataError("label string must have 8 characters, got '" + text + "'");
  LabelVector out;
  for (int k = 0; k < kCategories; ++k) {
    if (text[k] != '0' && text[k] != '1')
      throw DataError("label string must contain only 0/1, got '" + text + "'");
    out.bits[k] = text[k] == '1';
  }
  return out;
}

std::string format_labels(const LabelVector& labels) {
  std::string s(kCategories, '0');
  for (int k = 0; k < kCategories; ++k)
    if (labels[k]) s[k] = '1';
  return s;
}

PairStatus pair_status(const LabelVector& a, const LabelVector& b, int category) {
  if (a[category] && b[category]) return PairStatus::BothPresent;
  if (!a[category] && !b[category]) return PairStatus::NeitherPresent;
  return PairStatus::OnePresent;
}

PresenceMatrix encode(const LabelVector& a, const LabelVector& b) {
  PresenceMatrix m;
  m.mode = PresenceMatrix::Mode::OneHot;
  for (int k = 0; k < kCategories; ++k) m.rows[k][static_cast<int>(pair_status(a, b, k))] = 1.0;
  return m;
}

double similarity_level(const PresenceMatrix& m) {
  double total = 0.0;
  for (const auto& row : m.rows) total += row[0] + row[1];
  return total;
}

int ground_truth_agreement(const LabelVector& a, const LabelVector& b) {
  return static_cast<int>(std::lround(similarity_level(encode(a, b))));
}

bool is_valid(const PresenceMatrix& m, double tol) {
  for (const auto& row : m.rows) {
    double sum = 0.0;
    int ones = 0, zeros = 0;
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0)) return false;
      sum += v;
      ones += v == 1.0;
      zeros += v == 0.0;
    }
    if (std::abs(sum - 1.0) > tol) return false;
    if (m.mode == PresenceMatrix::Mode::OneHot && (ones != 1 || zeros != kStatuses - 1))
      return false;
  }
  return true;
}

std::string format_matrix(const PresenceMatrix& m, int precision) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision);
  for (const auto& row : m.rows) out << row[0] << ' ' << row[1] << ' ' << row[2] << '\n';
  return out.str();
}

}  // namespace ser
