#include "ser/training.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "ser/error.hpp"

namespace ser {

void Rmsprop::step(std::span<double> params, std::span<const double> grads,
                   std::span<double> accumulator) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    accumulator[i] = cfg_.decay * accumulator[i] + (1.0 - cfg_.decay) * g * g;
    params[i] -= cfg_.learning_rate * g / (std::sqrt(accumulator[i]) + cfg_.epsilon);
  }
}

namespace {

template <typename Params>
std::vector<Matrix*> trainable_tensors(Params& params) {
  std::vector<Matrix*> out;
  for_each_tensor(params, [&](const std::string&, auto& t, TensorRole role) {
    if (role == TensorRole::Trainable) out.push_back(const_cast<Matrix*>(&t));
  });
  return out;
}

std::span<double> as_span(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

}  // namespace

void Rmsprop::step(NetworkParams& params, const NetworkParams& grads,
                   NetworkParams& accumulator) const {
  const auto p = trainable_tensors(params);
  const auto g = trainable_tensors(grads);
  const auto s = trainable_tensors(accumulator);
  for (std::size_t i = 0; i < p.size(); ++i) step(as_span(*p[i]), as_span(*g[i]), as_span(*s[i]));
}

void TrainConfig::validate() const {
  if (!(optimizer.learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (!(optimizer.decay >= 0.0 && optimizer.decay < 1.0)) throw UsageError("rmsprop decay must be in [0, 1)");
  if (!(optimizer.epsilon > 0.0)) throw UsageError("rmsprop epsilon must be positive");
  if (batch_size < 1) throw UsageError("batch_size must be at least 1");
  if (max_epochs < 0) throw UsageError("max_epochs must be non-negative");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw UsageError("validation_fraction must be in [0, 1)");
}

std::string TrainReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "seed=" << seed << '\n';
  out << "config=" << config_echo << '\n';
  out << "train_pairs=" << train_pairs << '\n';
  out << "validation_pairs=" << validation_pairs << '\n';
  out << "best_epoch=" << best_epoch << '\n';
  out << "phase\tepoch\ttrain_loss\ttrain_eval_loss\tvalidation_loss\n";
  for (const auto& e : selection)
    out << "select\t" << e.epoch << '\t' << e.train_loss << '\t' << e.train_eval_loss << '\t'
        << e.validation_loss << '\n';
  for (const auto& e : final_fit)
    out << "final\t" << e.epoch << '\t' << e.train_loss << '\t' << e.train_eval_loss << "\t-\n";
  return out.str();
}

std::vector<PairInput> resolve_pairs(std::span<const PairRecord> pairs, const EmbeddingStore& store) {
  std::vector<PairInput> inputs;
  inputs.reserve(pairs.size());
  for (const auto& p : pairs) inputs.push_back({&store.at(p.id_a), &store.at(p.id_b)});
  return inputs;
}

double evaluate_loss(const NetworkParams& params, const NetworkConfig& cfg,
                     std::span<const PairInput> inputs, std::span<const PresenceMatrix> targets,
                     int batch_size) {
  if (inputs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (std::size_t start = 0; start < inputs.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, inputs.size() - start);
    const auto trace = forward(params, cfg, inputs.subspan(start, n), PassOptions::inference());
    total += batch_loss(trace, targets.subspan(start, n));
  }
  return total / static_cast<double>(inputs.size());
}

namespace {

struct Dataset {
  std::vector<PairInput> inputs;
  std::vector<PresenceMatrix> targets;
};

Dataset select(std::span<const PairInput> inputs, std::span<const PairRecord> pairs,
               std::span<const std::size_t> indices) {
  Dataset d;
  for (std::size_t i : indices) {
    d.inputs.push_back(inputs[i]);
    d.targets.push_back(pairs[i].target);
  }
  return d;
}

class Trainer {
 public:
  Trainer(const NetworkConfig& cfg, const TrainConfig& tcfg, std::uint64_t init_seed)
      : cfg_(cfg), tcfg_(tcfg), optimizer_(tcfg.optimizer),
        params_(init_params(cfg, init_seed)), accumulator_(zeros_like(params_)) {}

  EpochStats run_epoch(const Dataset& data, int epoch, Rng& rng, const char* phase) {
    std::vector<std::size_t> order(data.inputs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span(order));

    std::vector<PairInput> batch;
    std::vector<PresenceMatrix> targets;
    double total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += tcfg_.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tcfg_.batch_size));
      batch.clear();
      targets.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(data.inputs[order[i]]);
        targets.push_back(data.targets[order[i]]);
      }
      const std::string where = std::string(phase) + " epoch " + std::to_string(epoch) +
                                " batch " + std::to_string(batch_index);
      ForwardTrace trace;
      try {
        trace = forward(params_, cfg_, batch, PassOptions::training(rng));
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " (" + where + ")");
      }
      const double l = batch_loss(trace, targets);
      if (!std::isfinite(l)) throw NumericError("non-finite loss in " + where);
      total += l;
      const NetworkParams grads = backward(params_, cfg_, trace, targets);
      optimizer_.step(params_, grads, accumulator_);
      update_running_stats(params_, cfg_, trace);
      round_to_float(params_);
      if (!std::isfinite(params_.subnets.front().attention_f.weight.sum()))
        throw NumericError("parameters diverged in " + where);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = total / static_cast<double>(order.size());
    stats.train_eval_loss = tcfg_.eval_train_loss
                                ? evaluate_loss(params_, cfg_, data.inputs, data.targets,
                                                std::max(tcfg_.batch_size, 256))
                                : std::numeric_limits<double>::quiet_NaN();
    return stats;
  }

  const NetworkParams& params() const { return params_; }
  NetworkParams take() { return std::move(params_); }

 private:
  const NetworkConfig& cfg_;
  const TrainConfig& tcfg_;
  Rmsprop optimizer_;
  NetworkParams params_;
  NetworkParams accumulator_;
};

std::string echo(const NetworkConfig& cfg, const TrainConfig& tcfg) {
  std::ostringstream out;
  out << cfg.describe() << " dropout=" << cfg.dropout_rate << " lr=" << tcfg.optimizer.learning_rate
      << " decay=" << tcfg.optimizer.decay << " batch_size=" << tcfg.batch_size
      << " max_epochs=" << tcfg.max_epochs << " validation_fraction=" << tcfg.validation_fraction;
  return out.str();
}

}  // namespace

TrainResult train(std::span<const PairRecord> pairs, const EmbeddingStore& store,
                  const NetworkConfig& cfg, const TrainConfig& tcfg) {
  cfg.validate();
  tcfg.validate();
  if (pairs.empty()) throw DataError("training needs at least one pair");
  const std::vector<PairInput> inputs = resolve_pairs(pairs, store);

  const std::uint64_t init_seed = derive_seed(tcfg.seed, 0);
  TrainReport report;
  report.seed = tcfg.seed;
  report.config_echo = echo(cfg, tcfg);

  // Phase 1: seeded hold-out split and epoch selection.
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(tcfg.seed, 1));
  split_rng.shuffle(std::span(order));
  std::size_t n_val = 0;
  if (pairs.size() >= 2 && tcfg.validation_fraction > 0.0) {
    n_val = static_cast<std::size_t>(std::llround(tcfg.validation_fraction * pairs.size()));
    n_val = std::clamp<std::size_t>(n_val, 1, pairs.size() - 1);
  }
  const Dataset validation = select(inputs, pairs, std::span(order).first(n_val));
  const Dataset fit = select(inputs, pairs, std::span(order).subspan(n_val));
  report.train_pairs = fit.inputs.size();
  report.validation_pairs = validation.inputs.size();

  // Without a validation split there is nothing to select; e* = max_epochs.
  report.best_epoch = tcfg.max_epochs;
  if (tcfg.max_epochs > 0 && n_val > 0) {
    Trainer trainer(cfg, tcfg, init_seed);
    Rng rng(derive_seed(tcfg.seed, 2));
    double best = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
      EpochStats stats = trainer.run_epoch(fit, epoch, rng, "selection");
      stats.validation_loss = evaluate_loss(trainer.params(), cfg, validation.inputs,
                                            validation.targets, std::max(tcfg.batch_size, 256));
      if (stats.validation_loss < best) {
        best = stats.validation_loss;
        report.best_epoch = epoch;
      }
      report.selection.push_back(stats);
    }
  }

  // Phase 2: fresh initialization, all pairs, e* epochs.
  const Dataset all = select(inputs, pairs, order);
  Trainer trainer(cfg, tcfg, init_seed);
  Rng rng(derive_seed(tcfg.seed, 3));
  for (int epoch = 1; epoch <= report.best_epoch; ++epoch)
    report.final_fit.push_back(trainer.run_epoch(all, epoch, rng, "final"));
  return {trainer.take(), std::move(report)};
}

}  // namespace ser
