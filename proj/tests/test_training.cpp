#include <doctest.h>

#include <cmath>

#include "ser/pairing.hpp"
#include "ser/training.hpp"
#include "synthetic.hpp"

using namespace ser;

namespace {

struct Small {
  sertest::SyntheticData data;
  std::vector<PairRecord> pairs;

  Small() {
    sertest::SyntheticSpec spec;
    spec.train_clips = 30;
    spec.test_clips = 0;
    spec.steps = 3;
    spec.noise = 0.5;
    data = sertest::make_synthetic(spec);
    pairs = generate_training_pairs(data.manifest.labeled(Split::Train), {1, 1, PairSampling::SharedOrder}).pairs;
  }
};

TrainConfig quick(int epochs, double validation = 0.1) {
  TrainConfig t;
  t.max_epochs = epochs;
  t.validation_fraction = validation;
  t.batch_size = 32;
  t.seed = 5;
  return t;
}

}  // namespace

TEST_CASE("training drives the loss down") {
  Small s;
  const auto r = train(s.pairs, s.data.store, NetworkConfig{}, quick(25, 0.0));
  REQUIRE(r.report.final_fit.size() == 25);
  CHECK(r.report.selection.empty());
  const double first = r.report.final_fit.front().train_eval_loss;
  const double last = r.report.final_fit.back().train_eval_loss;
  CHECK(last < 0.5 * first);
  CHECK(std::isfinite(r.report.final_fit.back().train_loss));
}

TEST_CASE("training is deterministic in its seed") {
  Small s;
  const auto a = train(s.pairs, s.data.store, NetworkConfig{}, quick(3));
  const auto b = train(s.pairs, s.data.store, NetworkConfig{}, quick(3));
  auto other = quick(3);
  other.seed = 6;
  const auto c = train(s.pairs, s.data.store, NetworkConfig{}, other);
  CHECK(a.params == b.params);
  CHECK(a.report.to_text() == b.report.to_text());
  CHECK(!(a.params == c.params));
}

TEST_CASE("epoch selection picks the first validation minimum and refits on all pairs") {
  Small s;
  const auto r = train(s.pairs, s.data.store, NetworkConfig{}, quick(6));
  const std::size_t n = s.pairs.size();
  CHECK(r.report.validation_pairs == static_cast<std::size_t>(std::llround(0.1 * n)));
  CHECK(r.report.train_pairs + r.report.validation_pairs == n);
  REQUIRE(r.report.selection.size() == 6);
  int best = 1;
  for (const auto& e : r.report.selection)
    if (e.validation_loss < r.report.selection[best - 1].validation_loss) best = e.epoch;
  CHECK(r.report.best_epoch == best);
  CHECK(r.report.final_fit.size() == static_cast<std::size_t>(best));
  const auto text = r.report.to_text();
  CHECK(text.find("best_epoch=" + std::to_string(best)) != std::string::npos);
  CHECK(text.find("select\t6\t") != std::string::npos);
}

TEST_CASE("zero epochs returns the seeded initialization") {
  Small s;
  const auto r = train(s.pairs, s.data.store, NetworkConfig{}, quick(0));
  CHECK(r.report.best_epoch == 0);
  CHECK(r.report.final_fit.empty());
  CHECK(r.params == init_params(NetworkConfig{}, derive_seed(5, 0)));
}

TEST_CASE("running statistics are updated during training") {
  Small s;
  const auto r = train(s.pairs, s.data.store, NetworkConfig{}, quick(1, 0.0));
  CHECK(r.params.subnets[0].branch[0].running_mean.cwiseAbs().maxCoeff() > 0.0);
  for_each_tensor(r.params, [](const std::string&, const Matrix& t, TensorRole) {
    for (Eigen::Index i = 0; i < t.size(); ++i)
      REQUIRE(static_cast<double>(static_cast<float>(t.data()[i])) == t.data()[i]);
  });
}

TEST_CASE("divergence is reported with its location") {
  Small s;
  EmbeddingStore store = s.data.store;
  auto bad = store.at(s.pairs.front().id_a);
  bad.frames(0, 0) = std::numeric_limits<float>::quiet_NaN();
  EmbeddingStore poisoned;
  for (const auto& row : s.data.manifest.rows)
    poisoned.insert(row.clip_id == bad.clip_id ? bad : store.at(row.clip_id));
  CHECK_THROWS_WITH_AS(train(s.pairs, poisoned, NetworkConfig{}, quick(1, 0.0)),
                       doctest::Contains("final epoch 1 batch"), NumericError);
}

TEST_CASE("training input errors") {
  Small s;
  CHECK_THROWS_AS(train({}, s.data.store, NetworkConfig{}, quick(1)), DataError);
  EmbeddingStore empty;
  CHECK_THROWS_WITH_AS(train(s.pairs, empty, NetworkConfig{}, quick(1)), doctest::Contains("missing embedding"), DataError);
  auto t = quick(1);
  t.batch_size = 0;
  CHECK_THROWS_AS(train(s.pairs, s.data.store, NetworkConfig{}, t), UsageError);
  t = quick(1);
  t.validation_fraction = 1.0;
  CHECK_THROWS_AS(t.validate(), UsageError);
  t = quick(1);
  t.optimizer.learning_rate = -1;
  CHECK_THROWS_AS(t.validate(), UsageError);
}
