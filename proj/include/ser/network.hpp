#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ser/features.hpp"
#include "ser/presence.hpp"
#include "ser/rng.hpp"

namespace ser {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Variant : std::uint32_t { SingleModel = 0, MultiModel = 1 };

const char* to_string(Variant v);
Variant parse_variant(const std::string& name);

struct NetworkConfig {
  Variant variant = Variant::SingleModel;
  bool siamese = true;
  bool attention = true;
  std::vector<int> branch_units{128, 128, 128};
  std::vector<int> mlp_units{256, 128};
  double dropout_rate = 0.5;
  int categories = kCategories;
  int statuses = kStatuses;
  int input_dim = 128;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;

  int subnetworks() const { return variant == Variant::MultiModel ? categories : 1; }
  int rows_per_subnetwork() const { return variant == Variant::MultiModel ? 1 : categories; }
  /// Throws UsageError for out-of-range fields.
  void validate() const;
  std::string describe() const;
  bool operator==(const NetworkConfig&) const = default;
};

/// dense -> batch-norm -> ReLU -> dropout. Vectors are stored as 1 x n.
struct DenseBnLayer {
  Matrix weight;  // in x out
  Matrix bias;
  Matrix gamma;
  Matrix beta;
  Matrix running_mean;
  Matrix running_var;
  bool operator==(const DenseBnLayer&) const = default;
};

struct AffineMap {
  Matrix weight;  // in x out
  Matrix bias;
  bool operator==(const AffineMap&) const = default;
};

/// One full network. SingleModel has one of these predicting all category
/// rows; MultiModel has one per category, each predicting a single row.
/// The branch layers are the shared Siamese tower: both inputs of a pair run
/// through this one parameter set.
struct SubNetwork {
  std::vector<DenseBnLayer> branch;  // empty without the Siamese structure
  std::vector<DenseBnLayer> mlp;
  AffineMap attention_v;  // per-step attention score for each category row
  AffineMap attention_f;  // per-step status logits
  bool operator==(const SubNetwork&) const = default;
};

struct NetworkParams {
  std::vector<SubNetwork> subnets;
  bool operator==(const NetworkParams&) const = default;
};

enum class TensorRole { Trainable, RunningStat };

/// Visits every tensor in a fixed order with a stable dotted name such as
/// "sub0.mlp1.gamma". Works on const and non-const params.
template <typename Params, typename Fn>
void for_each_tensor(Params& params, Fn&& fn) {
  for (std::size_t s = 0; s < params.subnets.size(); ++s) {
    auto& sub = params.subnets[s];
    const std::string prefix = "sub" + std::to_string(s) + ".";
    auto layers = [&](auto& stack, const char* kind) {
      for (std::size_t i = 0; i < stack.size(); ++i) {
        const std::string p = prefix + kind + std::to_string(i) + ".";
        fn(p + "weight", stack[i].weight, TensorRole::Trainable);
        fn(p + "bias", stack[i].bias, TensorRole::Trainable);
        fn(p + "gamma", stack[i].gamma, TensorRole::Trainable);
        fn(p + "beta", stack[i].beta, TensorRole::Trainable);
        fn(p + "running_mean", stack[i].running_mean, TensorRole::RunningStat);
        fn(p + "running_var", stack[i].running_var, TensorRole::RunningStat);
      }
    };
    layers(sub.branch, "branch");
    layers(sub.mlp, "mlp");
    fn(prefix + "attention_v.weight", sub.attention_v.weight, TensorRole::Trainable);
    fn(prefix + "attention_v.bias", sub.attention_v.bias, TensorRole::Trainable);
    fn(prefix + "attention_f.weight", sub.attention_f.weight, TensorRole::Trainable);
    fn(prefix + "attention_f.bias", sub.attention_f.bias, TensorRole::Trainable);
  }
}

/// He-style uniform initialization (limit sqrt(6 / fan_in)), zero biases,
/// unit batch-norm scale, running variance 1. Values are float32-representable.
NetworkParams init_params(const NetworkConfig& cfg, std::uint64_t seed);

/// Same shapes as `params`, all zero. Used as the gradient container.
NetworkParams zeros_like(const NetworkParams& params);

/// Rounds every tensor to the nearest float32 value; parameters are kept at
/// float32 precision so checkpoints round-trip exactly.
void round_to_float(NetworkParams& params);

std::size_t trainable_count(const NetworkParams& params);

/// Throws DataError if params do not have the shapes cfg implies.
void check_shapes(const NetworkParams& params, const NetworkConfig& cfg);

// --- forward ---------------------------------------------------------------

struct PassOptions {
  bool batch_stats = false;  // batch-norm uses batch statistics (training)
  bool dropout = false;      // apply dropout at cfg.dropout_rate
  Rng* rng = nullptr;        // dropout masks; required when dropout is on

  static PassOptions inference() { return {}; }
  static PassOptions training(Rng& rng) { return {true, true, &rng}; }
};

struct PairInput {
  const EmbeddingSequence* a = nullptr;
  const EmbeddingSequence* b = nullptr;
};

struct LayerCache {
  Matrix input;
  Matrix normalized;  // (z - mean) * inv_std
  Matrix mean;        // 1 x n statistics used for normalization
  Matrix var;
  Matrix inv_std;
  Matrix activated;   // gamma * normalized + beta, before ReLU
  Matrix mask;        // inverted-dropout multipliers; empty when dropout is off
  Matrix output;
};

struct SubTrace {
  std::vector<LayerCache> branch;
  std::vector<LayerCache> mlp;
  Matrix hidden;        // h_t, (batch * steps) x hidden
  Matrix scores;        // attention_v(h_t) before exponentiation, one column per row
  Matrix step_probs;    // f(h_t): per-row softmax over statuses
  Matrix time_weights;  // v(h_t) normalized over time (uniform without attention)
  Matrix pooled;        // batch x (rows * statuses)
};

/// Forward record for a batch of pairs; row b * steps + t is step t of pair b.
struct ForwardTrace {
  int batch = 0;
  int steps = 0;
  PassOptions options;
  std::vector<SubTrace> subs;
  Matrix pooled;  // batch x (categories * statuses)
};

/// Runs the network on a batch of pairs. Every embedding must have the same
/// T and D = cfg.input_dim. Throws DataError on shape mismatch and
/// NumericError naming the layer when an activation becomes non-finite.
ForwardTrace forward(const NetworkParams& params, const NetworkConfig& cfg,
                     std::span<const PairInput> batch, const PassOptions& options);

ForwardTrace forward(const NetworkParams& params, const NetworkConfig& cfg,
                     const EmbeddingSequence& ea, const EmbeddingSequence& eb,
                     const PassOptions& options);

PresenceMatrix pooled_matrix(const ForwardTrace& trace, int pair);

constexpr double kProbabilityClamp = 1e-12;

/// Sum over categories of -log(max(y[k, true status], 1e-12)).
double loss(const PresenceMatrix& predicted, const PresenceMatrix& target);

/// Summed loss over the batch.
double batch_loss(const ForwardTrace& trace, std::span<const PresenceMatrix> targets);

/// Exact gradient of batch_loss with respect to every trainable tensor, reusing
/// the dropout masks and batch statistics recorded in the trace. Running-stat
/// entries of the result are zero.
NetworkParams backward(const NetworkParams& params, const NetworkConfig& cfg,
                       const ForwardTrace& trace, std::span<const PresenceMatrix> targets);

/// Folds the batch statistics recorded in a training trace into the running
/// statistics (momentum cfg.bn_momentum).
void update_running_stats(NetworkParams& params, const NetworkConfig& cfg,
                          const ForwardTrace& trace);

}  // namespace ser
