#include "ser/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ser/error.hpp"

namespace ser {

const char* to_string(Variant v) { return v == Variant::MultiModel ? "multi" : "single"; }

Variant parse_variant(const std::string& name) {
  if (name == "single") return Variant::SingleModel;
  if (name == "multi") return Variant::MultiModel;
  throw UsageError("unknown variant '" + name + "' (expected single or multi)");
}

void NetworkConfig::validate() const {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("dropout_rate must be in [0, 1)");
  if (mlp_units.empty()) throw UsageError("the MLP needs at least one layer");
  for (int u : branch_units)
    if (u <= 0) throw UsageError("branch layer sizes must be positive");
  for (int u : mlp_units)
    if (u <= 0) throw UsageError("MLP layer sizes must be positive");
  if (categories <= 0 || statuses <= 0 || input_dim <= 0)
    throw UsageError("categories, statuses and input_dim must be positive");
  if (siamese && branch_units.empty()) throw UsageError("the Siamese branch needs at least one layer");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw UsageError("bn_momentum must be in [0, 1)");
  if (!(bn_epsilon > 0.0)) throw UsageError("bn_epsilon must be positive");
}

std::string NetworkConfig::describe() const {
  std::ostringstream out;
  out << to_string(variant) << (siamese ? "+siamese" : "-siamese")
      << (attention ? "+attention" : "-attention");
  return out.str();
}

namespace {

Matrix uniform(int rows, int cols, double limit, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<float>(rng.uniform(-limit, limit));
  return m;
}

DenseBnLayer make_layer(int in, int out, Rng& rng) {
  DenseBnLayer l;
  l.weight = uniform(in, out, std::sqrt(6.0 / in), rng);
  l.bias = Matrix::Zero(1, out);
  l.gamma = Matrix::Ones(1, out);
  l.beta = Matrix::Zero(1, out);
  l.running_mean = Matrix::Zero(1, out);
  l.running_var = Matrix::Ones(1, out);
  return l;
}

AffineMap make_affine(int in, int out, Rng& rng) {
  return {uniform(in, out, std::sqrt(6.0 / in), rng), Matrix::Zero(1, out)};
}

}  // namespace

NetworkParams init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  NetworkParams params;
  const int outputs = cfg.rows_per_subnetwork() * cfg.statuses;
  for (int s = 0; s < cfg.subnetworks(); ++s) {
    SubNetwork sub;
    int width = cfg.input_dim;
    if (cfg.siamese) {
      for (int units : cfg.branch_units) {
        sub.branch.push_back(make_layer(width, units, rng));
        width = units;
      }
    }
    width *= 2;
    for (int units : cfg.mlp_units) {
      sub.mlp.push_back(make_layer(width, units, rng));
      width = units;
    }
    sub.attention_v = make_affine(width, cfg.rows_per_subnetwork(), rng);
    sub.attention_f = make_affine(width, outputs, rng);
    params.subnets.push_back(std::move(sub));
  }
  return params;
}

NetworkParams zeros_like(const NetworkParams& params) {
  NetworkParams z = params;
  for_each_tensor(z, [](const std::string&, Matrix& t, TensorRole) { t.setZero(); });
  return z;
}

void round_to_float(NetworkParams& params) {
  for_each_tensor(params, [](const std::string&, Matrix& t, TensorRole) {
    for (Eigen::Index i = 0; i < t.size(); ++i)
      t.data()[i] = static_cast<double>(static_cast<float>(t.data()[i]));
  });
}

std::size_t trainable_count(const NetworkParams& params) {
  std::size_t n = 0;
  for_each_tensor(params, [&](const std::string&, const Matrix& t, TensorRole role) {
    if (role == TensorRole::Trainable) n += static_cast<std::size_t>(t.size());
  });
  return n;
}

void check_shapes(const NetworkParams& params, const NetworkConfig& cfg) {
  const NetworkParams expected = init_params(cfg, 0);
  if (params.subnets.size() != expected.subnets.size())
    throw DataError("parameter set has " + std::to_string(params.subnets.size()) +
                    " sub-networks, configuration expects " +
                    std::to_string(expected.subnets.size()));
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  for_each_tensor(expected, [&](const std::string&, const Matrix& t, TensorRole) {
    shapes.emplace_back(t.rows(), t.cols());
  });
  std::size_t i = 0;
  bool ok = true;
  for_each_tensor(params, [&](const std::string&, const Matrix& t, TensorRole) {
    if (i >= shapes.size() || shapes[i] != std::make_pair(t.rows(), t.cols())) ok = false;
    ++i;
  });
  if (!ok || i != shapes.size()) throw DataError("parameter shapes do not match the configuration");
}

// --- forward ---------------------------------------------------------------

namespace {

void require_finite(const Matrix& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite activation in " + where);
}

Matrix dense_bn_forward(const DenseBnLayer& layer, Matrix input, const NetworkConfig& cfg,
                        const PassOptions& opt, LayerCache& cache, const std::string& where) {
  cache.input = std::move(input);
  Matrix z = cache.input * layer.weight;
  z.rowwise() += layer.bias.row(0);
  if (opt.batch_stats) {
    cache.mean = z.colwise().mean();
    z.rowwise() -= cache.mean.row(0);
    cache.var = z.array().square().colwise().mean();
  } else {
    cache.mean = layer.running_mean;
    cache.var = layer.running_var;
    z.rowwise() -= cache.mean.row(0);
  }
  cache.inv_std = (cache.var.array() + cfg.bn_epsilon).rsqrt();
  z.array().rowwise() *= cache.inv_std.row(0).array();
  cache.normalized = std::move(z);
  cache.activated = cache.normalized;
  cache.activated.array().rowwise() *= layer.gamma.row(0).array();
  cache.activated.rowwise() += layer.beta.row(0);
  Matrix out = cache.activated.cwiseMax(0.0);
  if (opt.dropout && cfg.dropout_rate > 0.0) {
    const double keep = 1.0 - cfg.dropout_rate;
    cache.mask.resize(out.rows(), out.cols());
    for (Eigen::Index i = 0; i < cache.mask.size(); ++i)
      cache.mask.data()[i] = opt.rng->uniform01() < keep ? 1.0 / keep : 0.0;
    out.array() *= cache.mask.array();
  } else {
    cache.mask.resize(0, 0);
  }
  require_finite(out, where);
  return out;
}

// Backward through one dense -> batch-norm -> ReLU -> dropout layer. Returns the
// gradient with respect to the layer input (skipped when `need_input_grad` is false).
Matrix dense_bn_backward(const DenseBnLayer& layer, const LayerCache& cache, Matrix grad,
                         bool batch_stats, DenseBnLayer& g, bool need_input_grad) {
  if (cache.mask.size() > 0) grad.array() *= cache.mask.array();
  grad = (cache.activated.array() > 0.0).select(grad, 0.0);
  g.gamma += (grad.array() * cache.normalized.array()).colwise().sum().matrix();
  g.beta += grad.colwise().sum();
  grad.array().rowwise() *= layer.gamma.row(0).array();  // d normalized
  if (batch_stats) {
    const double n = static_cast<double>(grad.rows());
    const Matrix sum_g = grad.colwise().sum();
    const Matrix sum_gx = (grad.array() * cache.normalized.array()).colwise().sum();
    Matrix dz = grad * n;
    dz.rowwise() -= sum_g.row(0);
    dz.array() -= cache.normalized.array().rowwise() * sum_gx.row(0).array();
    dz.array().rowwise() *= cache.inv_std.row(0).array() / n;
    grad = std::move(dz);
  } else {
    grad.array().rowwise() *= cache.inv_std.row(0).array();
  }
  g.weight.noalias() += cache.input.transpose() * grad;
  g.bias += grad.colwise().sum();
  if (!need_input_grad) return {};
  return grad * layer.weight.transpose();
}

Matrix to_double_rows(std::span<const PairInput> batch, bool side_a, int steps, int dim) {
  Matrix out(static_cast<Eigen::Index>(batch.size()) * steps, dim);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const EmbeddingSequence& e = side_a ? *batch[b].a : *batch[b].b;
    out.middleRows(static_cast<Eigen::Index>(b) * steps, steps) = e.frames.cast<double>();
  }
  return out;
}

}  // namespace

ForwardTrace forward(const NetworkParams& params, const NetworkConfig& cfg,
                     std::span<const PairInput> batch, const PassOptions& options) {
  if (batch.empty()) throw DataError("forward: empty batch");
  if (options.dropout && options.rng == nullptr)
    throw UsageError("forward: dropout requires a random generator");
  const auto steps = static_cast<int>(batch.front().a->steps());
  for (const auto& p : batch) {
    for (const EmbeddingSequence* e : {p.a, p.b}) {
      if (e->steps() != steps)
        throw DataError("shape mismatch: clip " + e->clip_id + " has T=" +
                        std::to_string(e->steps()) + ", batch uses T=" + std::to_string(steps));
      if (e->dim() != cfg.input_dim)
        throw DataError("shape mismatch: clip " + e->clip_id + " has D=" +
                        std::to_string(e->dim()) + ", network expects D=" +
                        std::to_string(cfg.input_dim));
    }
  }
  if (steps < 1) throw DataError("shape mismatch: embeddings have no frames");

  ForwardTrace trace;
  trace.batch = static_cast<int>(batch.size());
  trace.steps = steps;
  trace.options = options;
  const Eigen::Index rows = static_cast<Eigen::Index>(trace.batch) * steps;
  const int outputs = cfg.rows_per_subnetwork() * cfg.statuses;
  trace.pooled.resize(trace.batch, cfg.categories * cfg.statuses);

  const Matrix side_a = to_double_rows(batch, true, steps, cfg.input_dim);
  const Matrix side_b = to_double_rows(batch, false, steps, cfg.input_dim);

  trace.subs.resize(params.subnets.size());
  for (std::size_t s = 0; s < params.subnets.size(); ++s) {
    const SubNetwork& sub = params.subnets[s];
    SubTrace& st = trace.subs[s];
    const std::string name = "sub" + std::to_string(s) + ".";

    Matrix joined;
    if (cfg.siamese) {
      // Both sides go through the same branch weights in one stacked pass.
      Matrix x(2 * rows, cfg.input_dim);
      x.topRows(rows) = side_a;
      x.bottomRows(rows) = side_b;
      st.branch.resize(sub.branch.size());
      for (std::size_t i = 0; i < sub.branch.size(); ++i)
        x = dense_bn_forward(sub.branch[i], std::move(x), cfg, options, st.branch[i],
                             name + "branch" + std::to_string(i));
      joined.resize(rows, 2 * x.cols());
      joined.leftCols(x.cols()) = x.topRows(rows);
      joined.rightCols(x.cols()) = x.bottomRows(rows);
    } else {
      joined.resize(rows, 2 * cfg.input_dim);
      joined.leftCols(cfg.input_dim) = side_a;
      joined.rightCols(cfg.input_dim) = side_b;
    }

    st.mlp.resize(sub.mlp.size());
    for (std::size_t i = 0; i < sub.mlp.size(); ++i)
      joined = dense_bn_forward(sub.mlp[i], std::move(joined), cfg, options, st.mlp[i],
                                name + "mlp" + std::to_string(i));
    st.hidden = std::move(joined);

    st.scores = st.hidden * sub.attention_v.weight;
    st.scores.rowwise() += sub.attention_v.bias.row(0);
    st.step_probs = st.hidden * sub.attention_f.weight;
    st.step_probs.rowwise() += sub.attention_f.bias.row(0);
    require_finite(st.scores, name + "attention_v");
    require_finite(st.step_probs, name + "attention_f");

    // Per-step softmax over statuses within each category row.
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (int k = 0; k < outputs; k += cfg.statuses) {
        auto group = st.step_probs.row(r).segment(k, cfg.statuses);
        const double m = group.maxCoeff();
        group = (group.array() - m).exp();
        group /= group.sum();
      }
    }

    // y = sum_t v(h_t) f(h_t) / sum_t v(h_t) with v = exp(score), one weight per
    // category row shared by its statuses; the max shift leaves the ratio unchanged.
    const int row_count = cfg.rows_per_subnetwork();
    st.time_weights.resize(rows, row_count);
    st.pooled.resize(trace.batch, outputs);
    for (int b = 0; b < trace.batch; ++b) {
      auto w = st.time_weights.middleRows(static_cast<Eigen::Index>(b) * steps, steps);
      if (cfg.attention) {
        const auto sc = st.scores.middleRows(static_cast<Eigen::Index>(b) * steps, steps);
        const Eigen::RowVectorXd m = sc.colwise().maxCoeff();
        w = (sc.rowwise() - m).array().exp().matrix();
        const Eigen::RowVectorXd denom = w.colwise().sum();
        w.array().rowwise() /= denom.array();
      } else {
        w.setConstant(1.0 / steps);
      }
      const auto f = st.step_probs.middleRows(static_cast<Eigen::Index>(b) * steps, steps);
      for (int k = 0; k < row_count; ++k)
        st.pooled.row(b).segment(k * cfg.statuses, cfg.statuses) =
            w.col(k).transpose() * f.middleCols(k * cfg.statuses, cfg.statuses);
    }
    trace.pooled.middleCols(static_cast<Eigen::Index>(s) * outputs, outputs) = st.pooled;
  }
  require_finite(trace.pooled, "pooled output");
  return trace;
}

ForwardTrace forward(const NetworkParams& params, const NetworkConfig& cfg,
                     const EmbeddingSequence& ea, const EmbeddingSequence& eb,
                     const PassOptions& options) {
  const PairInput pair{&ea, &eb};
  return forward(params, cfg, std::span(&pair, 1), options);
}

PresenceMatrix pooled_matrix(const ForwardTrace& trace, int pair) {
  PresenceMatrix m;
  m.mode = PresenceMatrix::Mode::Probabilistic;
  for (int k = 0; k < kCategories; ++k)
    for (int c = 0; c < kStatuses; ++c) m.rows[k][c] = trace.pooled(pair, k * kStatuses + c);
  return m;
}

double loss(const PresenceMatrix& predicted, const PresenceMatrix& target) {
  double total = 0.0;
  for (int k = 0; k < kCategories; ++k)
    for (int c = 0; c < kStatuses; ++c)
      if (target.rows[k][c] != 0.0)
        total -= target.rows[k][c] * std::log(std::max(predicted.rows[k][c], kProbabilityClamp));
  return total;
}

double batch_loss(const ForwardTrace& trace, std::span<const PresenceMatrix> targets) {
  if (targets.size() != static_cast<std::size_t>(trace.batch))
    throw UsageError("batch_loss: one target per pair required");
  double total = 0.0;
  for (int b = 0; b < trace.batch; ++b) total += loss(pooled_matrix(trace, b), targets[b]);
  return total;
}

NetworkParams backward(const NetworkParams& params, const NetworkConfig& cfg,
                       const ForwardTrace& trace, std::span<const PresenceMatrix> targets) {
  if (targets.size() != static_cast<std::size_t>(trace.batch))
    throw UsageError("backward: one target per pair required");
  NetworkParams grads = zeros_like(params);
  const int steps = trace.steps;
  const Eigen::Index rows = static_cast<Eigen::Index>(trace.batch) * steps;
  const int outputs = cfg.rows_per_subnetwork() * cfg.statuses;
  const bool batch_stats = trace.options.batch_stats;

  for (std::size_t s = 0; s < params.subnets.size(); ++s) {
    const SubNetwork& sub = params.subnets[s];
    const SubTrace& st = trace.subs[s];
    SubNetwork& g = grads.subnets[s];

    // d loss / d pooled (one-hot targets, clamped log).
    Matrix d_pooled = Matrix::Zero(trace.batch, outputs);
    for (int b = 0; b < trace.batch; ++b) {
      for (int r = 0; r < cfg.rows_per_subnetwork(); ++r) {
        const int k = static_cast<int>(s) * cfg.rows_per_subnetwork() + r;
        for (int c = 0; c < cfg.statuses; ++c) {
          const double t = targets[b].rows[k][c];
          const double y = st.pooled(b, r * cfg.statuses + c);
          if (t != 0.0 && y > kProbabilityClamp) d_pooled(b, r * cfg.statuses + c) = -t / y;
        }
      }
    }

    Matrix d_probs(rows, outputs);
    Matrix d_scores = Matrix::Zero(rows, cfg.rows_per_subnetwork());
    for (int b = 0; b < trace.batch; ++b) {
      for (int t = 0; t < steps; ++t) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * steps + t;
        for (int k = 0; k < cfg.rows_per_subnetwork(); ++k) {
          const double w = st.time_weights(r, k);
          double ds = 0.0;
          for (int c = 0; c < cfg.statuses; ++c) {
            const int u = k * cfg.statuses + c;
            const double dy = d_pooled(b, u);
            d_probs(r, u) = dy * w;
            ds += dy * (st.step_probs(r, u) - st.pooled(b, u));
          }
          if (cfg.attention) d_scores(r, k) = w * ds;
        }
      }
    }
    // Back through the per-row status softmax.
    Matrix d_logits(rows, outputs);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (int k = 0; k < outputs; k += cfg.statuses) {
        const auto f = st.step_probs.row(r).segment(k, cfg.statuses);
        const auto df = d_probs.row(r).segment(k, cfg.statuses);
        const double dot = f.dot(df);
        d_logits.row(r).segment(k, cfg.statuses) = (f.array() * (df.array() - dot)).matrix();
      }
    }

    g.attention_f.weight.noalias() += st.hidden.transpose() * d_logits;
    g.attention_f.bias += d_logits.colwise().sum();
    Matrix d_hidden = d_logits * sub.attention_f.weight.transpose();
    if (cfg.attention) {
      g.attention_v.weight.noalias() += st.hidden.transpose() * d_scores;
      g.attention_v.bias += d_scores.colwise().sum();
      d_hidden.noalias() += d_scores * sub.attention_v.weight.transpose();
    }

    for (std::size_t i = sub.mlp.size(); i-- > 0;) {
      const bool need = i > 0 || cfg.siamese;
      d_hidden = dense_bn_backward(sub.mlp[i], st.mlp[i], std::move(d_hidden), batch_stats,
                                   g.mlp[i], need);
    }
    if (!cfg.siamese) continue;

    const Eigen::Index half = d_hidden.cols() / 2;
    Matrix d_branch(2 * rows, half);
    d_branch.topRows(rows) = d_hidden.leftCols(half);
    d_branch.bottomRows(rows) = d_hidden.rightCols(half);
    for (std::size_t i = sub.branch.size(); i-- > 0;)
      d_branch = dense_bn_backward(sub.branch[i], st.branch[i], std::move(d_branch), batch_stats,
                                   g.branch[i], i > 0);
  }
  return grads;
}

void update_running_stats(NetworkParams& params, const NetworkConfig& cfg,
                          const ForwardTrace& trace) {
  if (!trace.options.batch_stats) return;
  const double m = cfg.bn_momentum;
  auto fold = [m](DenseBnLayer& layer, const LayerCache& cache) {
    layer.running_mean = m * layer.running_mean + (1.0 - m) * cache.mean;
    layer.running_var = m * layer.running_var + (1.0 - m) * cache.var;
  };
  for (std::size_t s = 0; s < params.subnets.size(); ++s) {
    for (std::size_t i = 0; i < params.subnets[s].branch.size(); ++i)
      fold(params.subnets[s].branch[i], trace.subs[s].branch[i]);
    for (std::size_t i = 0; i < params.subnets[s].mlp.size(); ++i)
      fold(params.subnets[s].mlp[i], trace.subs[s].mlp[i]);
  }
}

}  // namespace ser
