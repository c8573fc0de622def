#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ser/network.hpp"

namespace ser {

struct GradCheckOptions {
  int batch = 2;
  int steps = 3;
  double step = 1e-4;  // central-difference step
  double tolerance = 1e-3;
  /// Denominator floor of the relative error, so parameters whose true
  /// gradient is zero are compared by absolute difference.
  double magnitude_floor = 1e-7;
  /// Entries checked per tensor (all entries when the tensor is smaller).
  int samples_per_tensor = 16;
  /// Batch-norm with batch statistics instead of running statistics.
  bool batch_stats = false;
  /// Fault injection: analytic gradients are scaled by (1 + perturb).
  double perturb = 0.0;
  std::uint64_t seed = 0;
};

struct TensorCheck {
  std::string name;
  int checked = 0;
  int kinks = 0;  // entries skipped because a probe moved a ReLU input across zero
  double max_rel_error = 0.0;
  double analytic = 0.0;  // values at the worst entry
  double numeric = 0.0;
};

struct GradCheckResult {
  std::vector<TensorCheck> tensors;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Random parameters (non-trivial batch-norm scales, shifts and running
/// statistics), random T x D inputs and one-hot targets; compares backward()
/// with central finite differences of batch_loss with dropout off. Entries
/// whose probes flip the sign of any ReLU input are replaced by other entries
/// of the same tensor.
GradCheckResult gradient_check(const NetworkConfig& cfg, const GradCheckOptions& options);

}  // namespace ser
