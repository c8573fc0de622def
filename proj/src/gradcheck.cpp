#include "ser/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "ser/rng.hpp"

namespace ser {

namespace {

void randomize(NetworkParams& params, Rng& rng) {
  for_each_tensor(params, [&](const std::string& name, Matrix& t, TensorRole) {
    auto fill = [&](double lo, double hi) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    };
    if (name.ends_with(".gamma")) fill(0.5, 1.5);
    else if (name.ends_with(".beta")) fill(-0.5, 0.5);
    else if (name.ends_with(".bias")) fill(-0.1, 0.1);
    else if (name.ends_with(".running_mean")) fill(-0.5, 0.5);
    else if (name.ends_with(".running_var")) fill(0.5, 2.0);
  });
}

// Candidate order: the largest-magnitude analytic entry, then the rest shuffled.
std::vector<Eigen::Index> candidate_order(const Matrix& analytic, Rng& rng) {
  const Eigen::Index n = analytic.size();
  Eigen::Index argmax = 0;
  Eigen::Map<const Eigen::VectorXd>(analytic.data(), n).cwiseAbs().maxCoeff(&argmax);
  std::vector<Eigen::Index> rest;
  for (Eigen::Index i = 0; i < n; ++i)
    if (i != argmax) rest.push_back(i);
  rng.shuffle(std::span(rest));
  std::vector<Eigen::Index> out{argmax};
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

std::vector<bool> relu_pattern(const ForwardTrace& trace) {
  std::vector<bool> bits;
  auto add = [&](const std::vector<LayerCache>& layers) {
    for (const auto& l : layers)
      for (Eigen::Index i = 0; i < l.activated.size(); ++i) bits.push_back(l.activated.data()[i] > 0.0);
  };
  for (const auto& sub : trace.subs) {
    add(sub.branch);
    add(sub.mlp);
  }
  return bits;
}

}  // namespace

GradCheckResult gradient_check(const NetworkConfig& cfg, const GradCheckOptions& options) {
  Rng rng(options.seed);
  NetworkParams params = init_params(cfg, derive_seed(options.seed, 0));
  randomize(params, rng);

  std::vector<EmbeddingSequence> clips;
  for (int i = 0; i < 2 * options.batch; ++i) {
    EmbeddingSequence e{"clip" + std::to_string(i), FrameMatrix(options.steps, cfg.input_dim),
                        FeatureKind::VGGish};
    for (Eigen::Index j = 0; j < e.frames.size(); ++j)
      e.frames.data()[j] = static_cast<float>(rng.normal());
    clips.push_back(std::move(e));
  }
  std::vector<PairInput> batch;
  std::vector<PresenceMatrix> targets;
  for (int b = 0; b < options.batch; ++b) {
    batch.push_back({&clips[2 * b], &clips[2 * b + 1]});
    PresenceMatrix t;
    t.mode = PresenceMatrix::Mode::OneHot;
    for (int k = 0; k < kCategories; ++k) t.rows[k][rng.uniform_index(kStatuses)] = 1.0;
    targets.push_back(t);
  }

  PassOptions pass;
  pass.batch_stats = options.batch_stats;
  const ForwardTrace trace = forward(params, cfg, batch, pass);
  const std::vector<bool> pattern = relu_pattern(trace);
  bool kink = false;
  auto loss_at = [&](const NetworkParams& p) {
    const ForwardTrace probe_trace = forward(p, cfg, batch, pass);
    if (relu_pattern(probe_trace) != pattern) kink = true;
    return batch_loss(probe_trace, targets);
  };

  NetworkParams grads = backward(params, cfg, trace, targets);

  std::vector<Matrix*> grad_tensors;
  for_each_tensor(grads, [&](const std::string&, Matrix& t, TensorRole) { grad_tensors.push_back(&t); });

  GradCheckResult result;
  NetworkParams probe = params;
  std::size_t index = 0;
  for_each_tensor(probe, [&](const std::string& name, Matrix& t, TensorRole role) {
    const Matrix& analytic = *grad_tensors[index++];
    if (role != TensorRole::Trainable) return;
    TensorCheck check{name};
    for (Eigen::Index i : candidate_order(analytic, rng)) {
      if (check.checked >= options.samples_per_tensor) break;
      const double original = t.data()[i];
      kink = false;
      t.data()[i] = original + options.step;
      const double plus = loss_at(probe);
      t.data()[i] = original - options.step;
      const double minus = loss_at(probe);
      t.data()[i] = original;
      if (kink) {
        ++check.kinks;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic.data()[i] * (1.0 + options.perturb);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.magnitude_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++check.checked;
      if (rel >= check.max_rel_error) {
        check.max_rel_error = rel;
        check.analytic = a;
        check.numeric = numeric;
      }
    }
    result.max_rel_error = std::max(result.max_rel_error, check.max_rel_error);
    result.tensors.push_back(std::move(check));
  });
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace ser
