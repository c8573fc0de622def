#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ser/gradcheck.hpp"
#include "ser/network.hpp"
#include "ser/training.hpp"
#include "synthetic.hpp"

using namespace ser;

namespace {

std::vector<NetworkConfig> all_variants() {
  std::vector<NetworkConfig> out;
  for (auto v : {Variant::SingleModel, Variant::MultiModel})
    for (bool siamese : {true, false})
      for (bool attention : {true, false}) {
        NetworkConfig c;
        c.variant = v;
        c.siamese = siamese;
        c.attention = attention;
        out.push_back(c);
      }
  return out;
}

// Straightforward inference-mode evaluation of one pair, loop by loop.
Matrix ref_layer(const Matrix& x, const DenseBnLayer& l, double eps) {
  Matrix out(x.rows(), l.weight.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j) {
      double z = l.bias(0, j);
      for (Eigen::Index i = 0; i < x.cols(); ++i) z += x(r, i) * l.weight(i, j);
      const double n = (z - l.running_mean(0, j)) / std::sqrt(l.running_var(0, j) + eps);
      out(r, j) = std::max(0.0, l.gamma(0, j) * n + l.beta(0, j));
    }
  return out;
}

Matrix affine(const Matrix& x, const AffineMap& m) {
  Matrix out(x.rows(), m.weight.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index j = 0; j < m.weight.cols(); ++j) {
      double z = m.bias(0, j);
      for (Eigen::Index i = 0; i < x.cols(); ++i) z += x(r, i) * m.weight(i, j);
      out(r, j) = z;
    }
  return out;
}

PresenceMatrix reference_forward(const NetworkParams& p, const NetworkConfig& cfg,
                                 const EmbeddingSequence& a, const EmbeddingSequence& b) {
  const Eigen::Index steps = a.steps();
  PresenceMatrix y;
  for (std::size_t s = 0; s < p.subnets.size(); ++s) {
    const auto& sub = p.subnets[s];
    Matrix xa = a.frames.cast<double>(), xb = b.frames.cast<double>();
    for (const auto& l : sub.branch) {
      xa = ref_layer(xa, l, cfg.bn_epsilon);
      xb = ref_layer(xb, l, cfg.bn_epsilon);
    }
    Matrix h(steps, xa.cols() + xb.cols());
    h << xa, xb;
    for (const auto& l : sub.mlp) h = ref_layer(h, l, cfg.bn_epsilon);
    const Matrix scores = affine(h, sub.attention_v);
    const Matrix logits = affine(h, sub.attention_f);
    for (int r = 0; r < cfg.rows_per_subnetwork(); ++r) {
      const int k = static_cast<int>(s) * cfg.rows_per_subnetwork() + r;
      double weight_sum = 0.0;
      std::array<double, 3> acc{};
      for (Eigen::Index t = 0; t < steps; ++t) {
        const double v = cfg.attention ? std::exp(scores(t, r)) : 1.0;
        double z = 0.0;
        for (int c = 0; c < 3; ++c) z += std::exp(logits(t, 3 * r + c));
        for (int c = 0; c < 3; ++c) acc[c] += v * std::exp(logits(t, 3 * r + c)) / z;
        weight_sum += v;
      }
      for (int c = 0; c < 3; ++c) y.rows[k][c] = acc[c] / weight_sum;
    }
  }
  return y;
}

void jitter_batch_norm(NetworkParams& p, Rng& rng) {
  for_each_tensor(p, [&](const std::string& name, Matrix& t, TensorRole) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      if (name.ends_with("gamma")) t.data()[i] = rng.uniform(0.5, 1.5);
      if (name.ends_with("beta") || name.ends_with("bias")) t.data()[i] = rng.uniform(-0.2, 0.2);
      if (name.ends_with("running_mean")) t.data()[i] = rng.uniform(-0.3, 0.3);
      if (name.ends_with("running_var")) t.data()[i] = rng.uniform(0.5, 2.0);
    }
  });
}

double max_abs_diff(const PresenceMatrix& x, const PresenceMatrix& y) {
  double m = 0.0;
  for (int k = 0; k < kCategories; ++k)
    for (int c = 0; c < kStatuses; ++c) m = std::max(m, std::abs(x(k, c) - y(k, c)));
  return m;
}

}  // namespace

TEST_CASE("forward matches a loop-by-loop reference for every variant") {
  Rng rng(21);
  for (const auto& cfg : all_variants()) {
    INFO(cfg.describe());
    auto p = init_params(cfg, 3);
    jitter_batch_norm(p, rng);
    const auto a = sertest::random_embedding("a", 5, 128, rng);
    const auto b = sertest::random_embedding("b", 5, 128, rng);
    const auto trace = forward(p, cfg, a, b, PassOptions::inference());
    CHECK(max_abs_diff(pooled_matrix(trace, 0), reference_forward(p, cfg, a, b)) < 1e-12);
  }
}

TEST_CASE("pooled rows are distributions and scores stay in [0, 8]") {
  Rng rng(4);
  for (const auto& cfg : all_variants()) {
    auto p = init_params(cfg, 9);
    jitter_batch_norm(p, rng);
    for (int trial = 0; trial < 5; ++trial) {
      const int steps = 1 + static_cast<int>(rng.uniform_index(8));
      const auto a = sertest::random_embedding("a", steps, 128, rng);
      const auto b = sertest::random_embedding("b", steps, 128, rng);
      const auto m = pooled_matrix(forward(p, cfg, a, b, PassOptions::inference()), 0);
      REQUIRE(is_valid(m, 1e-6));
      const double s = similarity_level(m);
      REQUIRE(s >= 0.0);
      REQUIRE(s <= 8.0);
    }
  }
}

TEST_CASE("one time step: pooled output is f(h_1) whatever the attention scores") {
  Rng rng(8);
  for (const auto& cfg : all_variants()) {
    auto p = init_params(cfg, 1);
    jitter_batch_norm(p, rng);
    const auto a = sertest::random_embedding("a", 1, 128, rng);
    const auto b = sertest::random_embedding("b", 1, 128, rng);
    const auto trace = forward(p, cfg, a, b, PassOptions::inference());
    for (const auto& st : trace.subs)
      for (Eigen::Index u = 0; u < st.pooled.cols(); ++u) CHECK(st.pooled(0, u) == doctest::Approx(st.step_probs(0, u)).epsilon(1e-14));
  }
}

TEST_CASE("equal attention scores reduce pooling to the mean over time") {
  Rng rng(10);
  for (auto variant : {Variant::SingleModel, Variant::MultiModel}) {
    NetworkConfig with;
    with.variant = variant;
    NetworkConfig without = with;
    without.attention = false;
    for (int trial = 0; trial < 20; ++trial) {
      auto p = init_params(with, 100 + trial);
      jitter_batch_norm(p, rng);
      for (auto& sub : p.subnets) {
        sub.attention_v.weight.setZero();
        sub.attention_v.bias.setConstant(rng.uniform(-3.0, 3.0));
      }
      const auto a = sertest::random_embedding("a", 6, 128, rng);
      const auto b = sertest::random_embedding("b", 6, 128, rng);
      const auto pooled = forward(p, with, a, b, PassOptions::inference());
      const auto mean = forward(p, without, a, b, PassOptions::inference());
      REQUIRE((pooled.pooled - mean.pooled).cwiseAbs().maxCoeff() < 1e-12);
      for (const auto& st : pooled.subs) {
        const Eigen::RowVectorXd m = st.step_probs.colwise().mean();
        REQUIRE((st.pooled.row(0) - m).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("the Siamese branch shares weights across both inputs") {
  Rng rng(12);
  NetworkConfig cfg;
  auto p = init_params(cfg, 5);
  jitter_batch_norm(p, rng);
  const auto a = sertest::random_embedding("a", 4, 128, rng);
  const auto trace = forward(p, cfg, a, a, PassOptions::inference());
  const Matrix& joined = trace.subs[0].mlp[0].input;
  REQUIRE(joined.cols() == 256);
  CHECK(joined.leftCols(128) == joined.rightCols(128));
  CHECK(p.subnets[0].branch.size() == 3);

  NetworkConfig plain = cfg;
  plain.siamese = false;
  const auto q = init_params(plain, 5);
  CHECK(q.subnets[0].branch.empty());
  CHECK(q.subnets[0].mlp[0].weight.rows() == 256);
}

TEST_CASE("parameter layout per variant") {
  NetworkConfig single;
  const auto p = init_params(single, 0);
  REQUIRE(p.subnets.size() == 1);
  CHECK(p.subnets[0].attention_f.weight.rows() == 128);
  CHECK(p.subnets[0].attention_f.weight.cols() == 24);
  CHECK(p.subnets[0].attention_v.weight.cols() == 8);
  CHECK(p.subnets[0].mlp[0].weight.cols() == 256);
  CHECK(p.subnets[0].mlp[1].weight.cols() == 128);

  NetworkConfig multi;
  multi.variant = Variant::MultiModel;
  const auto m = init_params(multi, 0);
  REQUIRE(m.subnets.size() == 8);
  CHECK(m.subnets[3].attention_f.weight.cols() == 3);
  CHECK(m.subnets[3].attention_v.weight.cols() == 1);
  CHECK(!(m.subnets[0] == m.subnets[1]));
  CHECK(trainable_count(m) == 8 * trainable_count(init_params(single, 0)) - 8 * 128 * 28 - 8 * 28);

  CHECK(init_params(single, 7) == init_params(single, 7));
  CHECK(!(init_params(single, 7) == init_params(single, 8)));
  for_each_tensor(p, [](const std::string&, const Matrix& t, TensorRole) {
    for (Eigen::Index i = 0; i < t.size(); ++i)
      REQUIRE(static_cast<double>(static_cast<float>(t.data()[i])) == t.data()[i]);
  });
  CHECK_NOTHROW(check_shapes(p, single));
  CHECK_THROWS_AS(check_shapes(p, multi), DataError);
}

TEST_CASE("loss values") {
  PresenceMatrix uniform;
  for (auto& row : uniform.rows) row = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  const auto target = encode(parse_labels("10100000"), parse_labels("10000000"));
  CHECK(loss(uniform, target) == doctest::Approx(8.0 * std::log(3.0)).epsilon(1e-14));

  PresenceMatrix half = target;
  half.rows[2] = {0.25, 0.25, 0.5};
  CHECK(loss(half, target) == doctest::Approx(std::numbers::ln2).epsilon(1e-14));
  CHECK(loss(target, target) == 0.0);

  PresenceMatrix wrong = target;
  wrong.rows[0] = {0.0, 1.0, 0.0};
  CHECK(loss(wrong, target) == doctest::Approx(-std::log(1e-12)).epsilon(1e-14));

  NetworkConfig cfg;
  auto p = init_params(cfg, 2);
  p.subnets[0].attention_f.weight.setZero();
  p.subnets[0].attention_f.bias.setZero();
  Rng rng(1);
  const auto a = sertest::random_embedding("a", 3, 128, rng);
  const auto trace = forward(p, cfg, a, a, PassOptions::inference());
  const std::vector<PresenceMatrix> targets{target};
  CHECK(batch_loss(trace, targets) == doctest::Approx(8.0 * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("analytic gradients match finite differences") {
  for (const auto& cfg : all_variants()) {
    if (cfg.variant == Variant::MultiModel) continue;
    for (bool batch_stats : {false, true}) {
      GradCheckOptions opt;
      opt.batch_stats = batch_stats;
      opt.seed = 3;
      const auto r = gradient_check(cfg, opt);
      INFO(cfg.describe() << (batch_stats ? " batch statistics" : " running statistics"));
      CHECK(r.passed);
      CHECK(r.max_rel_error < 1e-3);
      for (const auto& t : r.tensors) CHECK(t.checked > 0);
    }
  }
}

TEST_CASE("a scaled analytic gradient is caught") {
  GradCheckOptions opt;
  opt.perturb = 0.01;
  const auto r = gradient_check(NetworkConfig{}, opt);
  CHECK(!r.passed);
  CHECK(r.max_rel_error > 5e-3);
}

TEST_CASE("attention parameters get no gradient with a single time step") {
  Rng rng(6);
  NetworkConfig cfg;
  const auto p = init_params(cfg, 4);
  const auto a = sertest::random_embedding("a", 1, 128, rng);
  const auto b = sertest::random_embedding("b", 1, 128, rng);
  const auto trace = forward(p, cfg, a, b, PassOptions::inference());
  const std::vector<PresenceMatrix> targets{encode(parse_labels("11000000"), parse_labels("10000001"))};
  const auto g = backward(p, cfg, trace, targets);
  CHECK(g.subnets[0].attention_v.weight.cwiseAbs().maxCoeff() < 1e-15);
  CHECK(g.subnets[0].attention_v.bias.cwiseAbs().maxCoeff() < 1e-15);
  CHECK(g.subnets[0].attention_f.weight.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("a duplicated pair doubles the inference-mode gradient") {
  Rng rng(7);
  for (const auto& cfg : all_variants()) {
    const auto p = init_params(cfg, 6);
    const auto a = sertest::random_embedding("a", 3, 128, rng);
    const auto b = sertest::random_embedding("b", 3, 128, rng);
    const std::vector<PairInput> one{{&a, &b}}, two{{&a, &b}, {&a, &b}};
    const auto target = encode(parse_labels("01100000"), parse_labels("00100001"));
    const std::vector<PresenceMatrix> t1{target}, t2{target, target};
    const auto g1 = backward(p, cfg, forward(p, cfg, one, PassOptions::inference()), t1);
    const auto g2 = backward(p, cfg, forward(p, cfg, two, PassOptions::inference()), t2);
    std::vector<const Matrix*> first;
    for_each_tensor(g1, [&](const std::string&, const Matrix& t, TensorRole) { first.push_back(&t); });
    std::size_t i = 0;
    for_each_tensor(g2, [&](const std::string& name, const Matrix& t, TensorRole) {
      const Matrix& ref = *first[i++];
      INFO(name);
      REQUIRE((t - 2.0 * ref).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + ref.cwiseAbs().maxCoeff()));
    });
  }
}

TEST_CASE("RMSProp matches a hand-rolled update over five steps") {
  const RmspropConfig c{0.01, 0.9, 1e-8};
  const Rmsprop opt(c);
  std::vector<double> theta{0.5, -1.0, 2.0}, s(3, 0.0);
  double t0 = 0.5, t1 = -1.0, t2 = 2.0, s0 = 0, s1 = 0, s2 = 0;
  const double grads[5][3] = {{0.1, -0.2, 0.0}, {0.3, 0.1, 1e-3}, {-0.5, 0.0, 2.0}, {0.2, 0.2, 0.2}, {1.0, -1.0, 0.5}};
  for (const auto& g : grads) {
    opt.step(theta, std::span<const double>(g, 3), s);
    s0 = 0.9 * s0 + 0.1 * g[0] * g[0];
    t0 -= 0.01 * g[0] / (std::sqrt(s0) + 1e-8);
    s1 = 0.9 * s1 + 0.1 * g[1] * g[1];
    t1 -= 0.01 * g[1] / (std::sqrt(s1) + 1e-8);
    s2 = 0.9 * s2 + 0.1 * g[2] * g[2];
    t2 -= 0.01 * g[2] / (std::sqrt(s2) + 1e-8);
  }
  CHECK(theta[0] == doctest::Approx(t0).epsilon(1e-15));
  CHECK(theta[1] == doctest::Approx(t1).epsilon(1e-15));
  CHECK(theta[2] == doctest::Approx(t2).epsilon(1e-15));
  CHECK(s[2] == doctest::Approx(s2).epsilon(1e-15));
}

TEST_CASE("RMSProp leaves running statistics alone") {
  NetworkConfig cfg;
  auto p = init_params(cfg, 1);
  const auto before = p;
  auto g = zeros_like(p);
  for_each_tensor(g, [](const std::string&, Matrix& t, TensorRole) { t.setConstant(0.5); });
  auto acc = zeros_like(p);
  Rmsprop(RmspropConfig{}).step(p, g, acc);
  CHECK(p.subnets[0].branch[0].running_mean == before.subnets[0].branch[0].running_mean);
  CHECK(p.subnets[0].branch[0].running_var == before.subnets[0].branch[0].running_var);
  CHECK(!(p.subnets[0].branch[0].weight == before.subnets[0].branch[0].weight));
}

TEST_CASE("training-mode batch norm stays finite for a single frame") {
  Rng rng(3);
  NetworkConfig cfg;
  auto p = init_params(cfg, 2);
  const auto a = sertest::random_embedding("a", 1, 128, rng);
  const auto b = sertest::random_embedding("b", 1, 128, rng);
  PassOptions opt;
  opt.batch_stats = true;
  const auto trace = forward(p, cfg, a, b, opt);
  CHECK(trace.pooled.allFinite());
  const std::vector<PresenceMatrix> t{encode(LabelVector{}, LabelVector{})};
  const auto g = backward(p, cfg, trace, t);
  for_each_tensor(g, [](const std::string&, const Matrix& m, TensorRole) { REQUIRE(m.allFinite()); });
  update_running_stats(p, cfg, trace);
  CHECK(p.subnets[0].mlp[1].running_var.allFinite());
}

TEST_CASE("running statistics follow the momentum update") {
  Rng rng(5);
  NetworkConfig cfg;
  auto p = init_params(cfg, 2);
  const auto a = sertest::random_embedding("a", 4, 128, rng);
  const auto b = sertest::random_embedding("b", 4, 128, rng);
  PassOptions opt;
  opt.batch_stats = true;
  const auto trace = forward(p, cfg, a, b, opt);
  const Matrix& mean = trace.subs[0].branch[0].mean;
  const Matrix& var = trace.subs[0].branch[0].var;
  const Matrix before_mean = p.subnets[0].branch[0].running_mean;
  const Matrix before_var = p.subnets[0].branch[0].running_var;
  update_running_stats(p, cfg, trace);
  CHECK((p.subnets[0].branch[0].running_mean - (0.99 * before_mean + 0.01 * mean)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((p.subnets[0].branch[0].running_var - (0.99 * before_var + 0.01 * var)).cwiseAbs().maxCoeff() < 1e-15);

  // The branch statistics are taken jointly over both inputs' frames.
  Matrix stacked(8, 128);
  stacked << a.frames.cast<double>(), b.frames.cast<double>();
  Matrix z = stacked * p.subnets[0].branch[0].weight;
  z.rowwise() += p.subnets[0].branch[0].bias.row(0);
  CHECK((z.colwise().mean() - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dropout is active only when requested") {
  Rng rng(9);
  NetworkConfig cfg;
  const auto p = init_params(cfg, 2);
  const auto a = sertest::random_embedding("a", 3, 128, rng);
  const auto b = sertest::random_embedding("b", 3, 128, rng);
  const auto infer = forward(p, cfg, a, b, PassOptions::inference());
  CHECK(infer.subs[0].branch[0].mask.size() == 0);
  Rng drop(1);
  const auto train = forward(p, cfg, a, b, PassOptions::training(drop));
  const Matrix& mask = train.subs[0].mlp[0].mask;
  REQUIRE(mask.size() > 0);
  const double kept = (mask.array() > 0).cast<double>().mean();
  CHECK(kept > 0.35);
  CHECK(kept < 0.65);
  CHECK(mask.maxCoeff() == 2.0);
  CHECK(is_valid(pooled_matrix(train, 0), 1e-6));
}

TEST_CASE("forward rejects bad inputs") {
  Rng rng(1);
  NetworkConfig cfg;
  auto p = init_params(cfg, 2);
  const auto a = sertest::random_embedding("a", 3, 128, rng);
  const auto shorter = sertest::random_embedding("s", 2, 128, rng);
  const auto narrow = sertest::random_embedding("n", 3, 64, rng);
  CHECK_THROWS_AS(forward(p, cfg, a, shorter, PassOptions::inference()), DataError);
  CHECK_THROWS_AS(forward(p, cfg, a, narrow, PassOptions::inference()), DataError);
  p.subnets[0].mlp[0].weight(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(forward(p, cfg, a, a, PassOptions::inference()),
                       doctest::Contains("sub0.mlp0"), NumericError);
}

TEST_CASE("configuration validation and names") {
  NetworkConfig c;
  CHECK_NOTHROW(c.validate());
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = NetworkConfig{};
  c.mlp_units.clear();
  CHECK_THROWS_AS(c.validate(), UsageError);
  CHECK(parse_variant("multi") == Variant::MultiModel);
  CHECK(parse_variant("single") == Variant::SingleModel);
  CHECK_THROWS_AS(parse_variant("double"), UsageError);
  CHECK(NetworkConfig{}.describe() == "single+siamese+attention");
}
