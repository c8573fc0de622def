#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ser/embedding_store.hpp"
#include "ser/network.hpp"
#include "ser/pairing.hpp"

namespace ser {

/// RMSProp: s <- decay * s + (1 - decay) * g^2; theta <- theta - lr * g / (sqrt(s) + eps).
struct RmspropConfig {
  double learning_rate = 1e-3;
  double decay = 0.9;
  double epsilon = 1e-8;
};

class Rmsprop {
 public:
  explicit Rmsprop(RmspropConfig cfg) : cfg_(cfg) {}

  /// Elementwise update of one tensor; `accumulator` holds s.
  void step(std::span<double> params, std::span<const double> grads,
            std::span<double> accumulator) const;

  /// Updates every trainable tensor of `params`; running statistics are left alone.
  void step(NetworkParams& params, const NetworkParams& grads, NetworkParams& accumulator) const;

  const RmspropConfig& config() const { return cfg_; }

 private:
  RmspropConfig cfg_;
};

struct TrainConfig {
  RmspropConfig optimizer;
  int batch_size = 128;
  int max_epochs = 50;
  double validation_fraction = 0.10;
  std::uint64_t seed = 0;
  /// Also evaluate the training pairs in inference mode after every epoch.
  bool eval_train_loss = true;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;                 // 1-based
  double train_loss = 0.0;       // mean per-pair loss over the epoch's minibatches
  double train_eval_loss = 0.0;  // mean per-pair loss on the training pairs, inference mode
  double validation_loss = 0.0;  // phase 1 only; NaN when there is no validation split
};

struct TrainReport {
  std::size_t train_pairs = 0;
  std::size_t validation_pairs = 0;
  std::vector<EpochStats> selection;  // phase 1, held-out validation
  int best_epoch = 0;                 // e*
  std::vector<EpochStats> final_fit;  // phase 2, all pairs for e* epochs
  std::uint64_t seed = 0;
  std::string config_echo;

  /// Structured text: key=value header lines and one row per epoch.
  std::string to_text() const;
};

struct TrainResult {
  NetworkParams params;
  TrainReport report;
};

/// Resolves every pair's embeddings; throws DataError naming the missing clip.
std::vector<PairInput> resolve_pairs(std::span<const PairRecord> pairs, const EmbeddingStore& store);

/// Mean per-pair loss in inference mode.
double evaluate_loss(const NetworkParams& params, const NetworkConfig& cfg,
                     std::span<const PairInput> inputs, std::span<const PresenceMatrix> targets,
                     int batch_size);

/// Two-phase protocol: train on (1 - validation_fraction) of the pairs for
/// max_epochs and pick the epoch with the lowest validation loss; then train
/// from a fresh initialization on all pairs for exactly that many epochs.
/// With validation_fraction 0 the selection phase is skipped and e* = max_epochs.
/// Throws NumericError identifying phase, epoch and batch on divergence.
TrainResult train(std::span<const PairRecord> pairs, const EmbeddingStore& store,
                  const NetworkConfig& cfg, const TrainConfig& tcfg);

}  // namespace ser
