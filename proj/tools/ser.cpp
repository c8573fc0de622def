#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <iostream>
#include <optional>
#include <sstream>

#include "ser/error.hpp"
#include "ser/pipeline.hpp"

namespace {

std::string join(const std::vector<int>& values) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
  return out.str();
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string manifest;
  std::string out_dir = "run";
  std::string features_dir, pairs, checkpoint, retrieval;
  std::string features;
  std::string variant;
  bool no_siamese = false;
  bool no_attention = false;
  std::vector<int> ks;
  std::vector<int> thresholds;
  std::optional<int> min_annotators;
  std::optional<int> max_epochs;
  std::vector<std::string> overrides;
  std::string annotations, audio_dir;
  double perturb = 0.0;
  bool batch_stats = false;
  int steps = 3;
};

ser::RunConfig build_config(const Options& o, const std::string& command) {
  ser::RunConfig cfg = o.config.empty() ? ser::RunConfig{} : ser::load_config(o.config);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ser::UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.set("seed", std::to_string(*o.seed));
  if (!o.features.empty()) cfg.set("features", o.features);
  if (!o.variant.empty()) cfg.set("variant", o.variant);
  if (o.no_siamese) cfg.set("siamese", "false");
  if (o.no_attention) cfg.set("attention", "false");
  if (o.min_annotators) cfg.set("min_annotators", std::to_string(*o.min_annotators));
  if (o.max_epochs) cfg.set("max_epochs", std::to_string(*o.max_epochs));
  if (!o.thresholds.empty()) cfg.set("thresholds", join(o.thresholds));
  if (!o.ks.empty()) {
    if (command == "retrieve") {
      if (o.ks.size() != 1) throw ser::UsageError("retrieve takes a single --k");
      cfg.set("retrieve_k", std::to_string(o.ks.front()));
    } else {
      cfg.set("ks", join(o.ks));
    }
  }
  cfg.validate();
  return cfg;
}

ser::RunPaths build_paths(const Options& o) {
  ser::RunPaths p;
  p.manifest = o.manifest;
  p.out_dir = o.out_dir;
  p.features_dir = o.features_dir;
  p.pairs = o.pairs;
  p.checkpoint = o.checkpoint;
  p.retrieval = o.retrieval;
  return p.resolved();
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates many short-lived multi-megabyte traces; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  CLI::App app{"Siamese sound-event retrieval: features, pairs, training, retrieval, evaluation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();
    sub->add_option("--set", o.overrides, "override a configuration key (key=value)");
  };
  auto data = [&](CLI::App* sub) {
    sub->add_option("--manifest", o.manifest, "clip manifest (TSV)")->required();
    sub->add_option("--features-dir", o.features_dir, "feature directory (default <out-dir>/features)");
    sub->add_option("--features", o.features, "feature kind: logmel or vggish");
  };
  auto network = [&](CLI::App* sub) {
    sub->add_option("--variant", o.variant, "single or multi");
    sub->add_flag("--no-siamese", o.no_siamese, "concatenate raw frames instead of shared branches");
    sub->add_flag("--no-attention", o.no_attention, "mean pooling over time");
  };

  auto* ingest = app.add_subcommand("ingest", "build a manifest from a DCASE annotation CSV");
  common(ingest);
  ingest->add_option("--annotations", o.annotations, "annotations.csv")->required()->check(CLI::ExistingFile);
  ingest->add_option("--audio-dir", o.audio_dir, "directory holding the audio files");
  ingest->add_option("--manifest", o.manifest, "manifest to write")->required();
  ingest->add_option("--min-annotators", o.min_annotators, "votes needed for a positive label");

  auto* features = app.add_subcommand("features", "extract or import per-clip embeddings");
  common(features);
  data(features);

  auto* pairs = app.add_subcommand("pairs", "sample balanced training pairs");
  common(pairs);
  data(pairs);
  pairs->add_option("--pairs", o.pairs, "pair list to write (default <out-dir>/pairs.tsv)");

  auto* train = app.add_subcommand("train", "train a network on the pair list");
  common(train);
  data(train);
  network(train);
  train->add_option("--pairs", o.pairs, "pair list (default <out-dir>/pairs.tsv)");
  train->add_option("--checkpoint", o.checkpoint, "checkpoint to write (default <out-dir>/model.ckpt)");
  train->add_option("--max-epochs", o.max_epochs, "epoch budget for model selection");

  auto* retrieve = app.add_subcommand("retrieve", "rank the train split for every test query");
  common(retrieve);
  data(retrieve);
  retrieve->add_option("--checkpoint", o.checkpoint, "checkpoint (default <out-dir>/model.ckpt)");
  retrieve->add_option("--retrieval", o.retrieval, "report to write (default <out-dir>/retrieval.tsv)");
  retrieve->add_option("--k", o.ks, "ranked list length");

  auto* evaluate = app.add_subcommand("evaluate", "mAP_s@K tables for the model and a random baseline");
  common(evaluate);
  data(evaluate);
  evaluate->add_option("--retrieval", o.retrieval, "retrieval report (default <out-dir>/retrieval.tsv)");
  evaluate->add_option("--k", o.ks, "cut-offs")->delimiter(',');
  evaluate->add_option("--s", o.thresholds, "similarity thresholds")->delimiter(',');

  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and numerical gradients");
  common(gradcheck);
  network(gradcheck);
  gradcheck->add_option("--perturb", o.perturb, "scale every analytic gradient by (1 + perturb)");
  gradcheck->add_flag("--batch-stats", o.batch_stats, "check training-mode batch normalization");
  gradcheck->add_option("--steps", o.steps, "time steps per input")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ser::ExitCode::Usage);
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    const ser::RunConfig cfg = build_config(o, name);
    const ser::RunPaths paths = build_paths(o);
    if (name == "ingest") ser::cmd_ingest(o.annotations, o.audio_dir, cfg, paths, std::cerr);
    else if (name == "features") ser::cmd_features(cfg, paths, std::cerr);
    else if (name == "pairs") ser::cmd_pairs(cfg, paths, std::cerr);
    else if (name == "train") ser::cmd_train(cfg, paths, std::cerr);
    else if (name == "retrieve") ser::cmd_retrieve(cfg, paths, std::cerr);
    else if (name == "evaluate") ser::cmd_evaluate(cfg, paths, std::cout);
    else if (name == "gradcheck") {
      ser::GradCheckOptions g;
      g.perturb = o.perturb;
      g.batch_stats = o.batch_stats;
      g.steps = o.steps;
      g.seed = cfg.seed;
      if (!ser::cmd_gradcheck(cfg, g, std::cout)) return static_cast<int>(ser::ExitCode::Numeric);
    }
  } catch (const ser::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ser::ExitCode::Data);
  }
  return 0;
}
