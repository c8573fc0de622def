#include "ser/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include "ser/binary_io.hpp"
#include "ser/checkpoint.hpp"
#include "ser/error.hpp"

namespace fs = std::filesystem;

namespace ser {

namespace {

std::string sha1_hex(const std::string& prefix, const std::vector<unsigned char>& payload) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), prefix.data(), prefix.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), payload.data(), payload.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw Error(ExitCode::Data, "sha1 computation failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i)
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return out.str();
}

std::string blob_hash(const std::vector<unsigned char>& bytes) {
  std::string prefix = "blob " + std::to_string(bytes.size());
  prefix.push_back('\0');
  return sha1_hex(prefix, bytes);
}

}  // namespace

std::string content_hash(const fs::path& file) { return blob_hash(binary::read_file(file.string())); }

std::string directory_hash(const fs::path& dir) {
  std::vector<std::string> lines;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file())
      lines.push_back(entry.path().filename().string() + " " + content_hash(entry.path()) + "\n");
  std::sort(lines.begin(), lines.end());
  std::string listing;
  for (const auto& l : lines) listing += l;
  return blob_hash({listing.begin(), listing.end()});
}

RunPaths RunPaths::resolved() const {
  RunPaths p = *this;
  if (p.out_dir.empty()) p.out_dir = "run";
  if (p.features_dir.empty()) p.features_dir = p.out_dir / "features";
  if (p.pairs.empty()) p.pairs = p.out_dir / "pairs.tsv";
  if (p.checkpoint.empty()) p.checkpoint = p.out_dir / "model.ckpt";
  if (p.retrieval.empty()) p.retrieval = p.out_dir / "retrieval.tsv";
  return p;
}

namespace {

class RunSummary {
 public:
  RunSummary(std::string command, const RunConfig& cfg, const fs::path& out_dir)
      : command_(std::move(command)), out_dir_(out_dir) {
    text_ << "command=" << command_ << '\n' << "seed=" << cfg.seed << '\n' << "[config]\n"
          << cfg.to_text();
  }

  void input(const fs::path& p) { entry("input", p); }
  void output(const fs::path& p) { entry("output", p); }
  void note(const std::string& key, const std::string& value) { notes_ << key << '=' << value << '\n'; }

  void write() {
    const auto path = out_dir_ / ("run_" + command_ + ".txt");
    std::ofstream out(path, std::ios::trunc);
    out << text_.str() << "[files]\n" << files_.str() << "[results]\n" << notes_.str();
    if (!out) throw DataError("cannot write " + path.string());
  }

 private:
  void entry(const char* kind, const fs::path& p) {
    const std::string hash = fs::is_directory(p) ? directory_hash(p) : content_hash(p);
    std::string shown = p.string();
    const auto rel = p.lexically_relative(out_dir_);
    if (!rel.empty() && !rel.string().starts_with("..")) shown = rel.string();
    files_ << kind << '\t' << shown << '\t' << hash << '\n';
  }

  std::string command_;
  fs::path out_dir_;
  std::ostringstream text_, files_, notes_;
};

Manifest load_valid_manifest(const RunPaths& paths, const FeatureKind* kind) {
  if (paths.manifest.empty()) throw UsageError("--manifest is required");
  Manifest m = read_manifest(paths.manifest);
  validate_manifest(m, paths.manifest.parent_path(), kind);
  return m;
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<std::string> all_ids(const Manifest& m) {
  std::vector<std::string> ids;
  for (const auto& r : m.rows) ids.push_back(r.clip_id);
  return ids;
}

}  // namespace

Manifest cmd_ingest(const fs::path& annotations, const fs::path& audio_dir, const RunConfig& cfg,
                    const RunPaths& raw, std::ostream& log) {
  const RunPaths paths = raw.resolved();
  if (paths.manifest.empty()) throw UsageError("--manifest (output path) is required");
  prepare_out_dir(paths.out_dir);
  if (paths.manifest.has_parent_path()) prepare_out_dir(paths.manifest.parent_path());
  // Audio paths are stored relative to the manifest's directory.
  const fs::path manifest_dir = fs::absolute(paths.manifest).parent_path();
  const fs::path audio_rel = fs::absolute(audio_dir).lexically_normal().lexically_proximate(manifest_dir);
  const Manifest m = ingest(annotations, {audio_rel, cfg.min_annotators});
  validate_manifest(m, paths.manifest.parent_path(), nullptr);
  write_manifest(m, paths.manifest);
  log << "ingested " << m.ids(Split::Train).size() << " train and " << m.ids(Split::Test).size()
      << " test clips\n";
  RunSummary summary("ingest", cfg, paths.out_dir);
  summary.input(annotations);
  summary.output(paths.manifest);
  summary.note("train_clips", std::to_string(m.ids(Split::Train).size()));
  summary.note("test_clips", std::to_string(m.ids(Split::Test).size()));
  summary.write();
  return m;
}

void cmd_features(const RunConfig& cfg, const RunPaths& raw, std::ostream& log) {
  const RunPaths paths = raw.resolved();
  const Manifest m = load_valid_manifest(paths, &cfg.features);
  prepare_out_dir(paths.out_dir);
  prepare_out_dir(paths.features_dir);
  const fs::path base = paths.manifest.parent_path();
  std::size_t done = 0;
  for (const auto& row : m.rows) {
    EmbeddingSequence e;
    if (cfg.features == FeatureKind::LogMel) {
      AudioClip clip = read_wav(resolve_path(base, row.audio_path));
      clip.clip_id = row.clip_id;
      clip = fit_duration(resample(clip, kFeatureSampleRate), kClipSeconds);
      e = log_mel(clip);
    } else {
      e = load_embedding(resolve_path(base, row.embedding_path), FeatureKind::VGGish);
      e.clip_id = row.clip_id;
    }
    validate(e);
    store_embedding(e, paths.features_dir / (row.clip_id + ".sere"));
    if (++done % 500 == 0) log << "features: " << done << "/" << m.rows.size() << '\n';
  }
  log << "wrote " << done << " " << to_string(cfg.features) << " feature files to "
      << paths.features_dir.string() << '\n';
  RunSummary summary("features", cfg, paths.out_dir);
  summary.input(paths.manifest);
  summary.output(paths.features_dir);
  summary.note("clips", std::to_string(done));
  summary.write();
}

PairGeneration cmd_pairs(const RunConfig& cfg, const RunPaths& raw, std::ostream& log) {
  const RunPaths paths = raw.resolved();
  const Manifest m = load_valid_manifest(paths, nullptr);
  prepare_out_dir(paths.out_dir);
  const auto train_set = m.labeled(Split::Train);
  PairGeneration gen = generate_training_pairs(train_set, cfg.pairing_options());
  for (const auto& w : gen.warnings) log << "warning: " << w << '\n';
  write_pair_list(paths.pairs, gen.pairs);
  log << "generated " << gen.pairs.size() << " pairs (" << gen.draws_before_dedup
      << " draws before dedup)\n";
  RunSummary summary("pairs", cfg, paths.out_dir);
  summary.input(paths.manifest);
  summary.output(paths.pairs);
  summary.note("pairs", std::to_string(gen.pairs.size()));
  summary.note("draws_before_dedup", std::to_string(gen.draws_before_dedup));
  for (int k = 0; k < kCategories; ++k) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "same=%zu opposite=%zu imbalance=%.4f", gen.balance[k].same,
                  gen.balance[k].opposite, gen.balance[k].imbalance());
    summary.note("balance." + m.categories[k], buf);
  }
  summary.write();
  return gen;
}

TrainResult cmd_train(const RunConfig& cfg, const RunPaths& raw, std::ostream& log) {
  cfg.validate();
  const RunPaths paths = raw.resolved();
  const Manifest m = load_valid_manifest(paths, nullptr);
  prepare_out_dir(paths.out_dir);
  const auto pairs = attach_targets(read_pair_list(paths.pairs), m.label_map());
  std::vector<std::string> ids;
  for (const auto& p : pairs) {
    ids.push_back(p.id_a);
    ids.push_back(p.id_b);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const EmbeddingStore store = EmbeddingStore::load(paths.features_dir, ids, cfg.features);
  log << "training " << cfg.network.describe() << " on " << pairs.size() << " pairs\n";
  TrainResult result = train(pairs, store, cfg.network, cfg.train_config());
  save_checkpoint(result.params, cfg.network, paths.checkpoint);
  const fs::path report = paths.out_dir / "train_report.txt";
  {
    std::ofstream out(report, std::ios::trunc);
    out << result.report.to_text();
    if (!out) throw DataError("cannot write " + report.string());
  }
  log << "best epoch " << result.report.best_epoch << ", checkpoint " << paths.checkpoint.string()
      << '\n';
  RunSummary summary("train", cfg, paths.out_dir);
  summary.input(paths.manifest);
  summary.input(paths.pairs);
  summary.input(paths.features_dir);
  summary.output(paths.checkpoint);
  summary.output(report);
  summary.note("best_epoch", std::to_string(result.report.best_epoch));
  summary.write();
  return result;
}

void cmd_retrieve(const RunConfig& cfg, const RunPaths& raw, std::ostream& log) {
  const RunPaths paths = raw.resolved();
  const Manifest m = load_valid_manifest(paths, nullptr);
  prepare_out_dir(paths.out_dir);
  Checkpoint ck = load_checkpoint(paths.checkpoint);
  const Model model{std::move(ck.params), ck.config, cfg.features};
  const auto queries = m.ids(Split::Test);
  const auto database = m.ids(Split::Train);
  if (queries.empty() || database.empty())
    throw DataError("retrieval needs test queries and a train database");
  const EmbeddingStore store = EmbeddingStore::load(paths.features_dir, all_ids(m), cfg.features);
  const auto labels = m.label_map();
  std::vector<RetrievalResult> results;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    results.push_back(retrieve(model, queries[i], database, store, cfg.retrieve_k, &labels,
                               cfg.score_mode));
    if ((i + 1) % 50 == 0) log << "retrieve: " << (i + 1) << "/" << queries.size() << '\n';
  }
  write_retrieval_report(paths.retrieval, results);
  log << "wrote " << results.size() << " ranked lists to " << paths.retrieval.string() << '\n';
  RunSummary summary("retrieve", cfg, paths.out_dir);
  summary.input(paths.manifest);
  summary.input(paths.checkpoint);
  summary.input(paths.features_dir);
  summary.output(paths.retrieval);
  summary.note("queries", std::to_string(results.size()));
  summary.write();
}

MetricTable cmd_evaluate(const RunConfig& cfg, const RunPaths& raw, std::ostream& log) {
  const RunPaths paths = raw.resolved();
  const Manifest m = load_valid_manifest(paths, nullptr);
  prepare_out_dir(paths.out_dir);
  const auto results = read_retrieval_report(paths.retrieval);
  const auto labels = m.label_map();
  const MetricTable table = evaluate(results, m.ids(Split::Train), labels, cfg.eval_config(), "model");
  const fs::path tsv = paths.out_dir / "metrics.tsv";
  const fs::path summary_txt = paths.out_dir / "summary.txt";
  const fs::path plot = paths.out_dir / "plot.csv";
  write_metric_table(tsv, table);
  write_plot_csv(plot, table);
  const std::string text = format_summary(table);
  {
    std::ofstream out(summary_txt, std::ios::trunc);
    out << text;
  }
  log << text;
  RunSummary summary("evaluate", cfg, paths.out_dir);
  summary.input(paths.manifest);
  summary.input(paths.retrieval);
  summary.output(tsv);
  summary.output(summary_txt);
  summary.output(plot);
  summary.write();
  return table;
}

bool cmd_gradcheck(const RunConfig& cfg, const GradCheckOptions& options, std::ostream& log) {
  cfg.network.validate();
  const GradCheckResult r = gradient_check(cfg.network, options);
  log << "gradient check " << cfg.network.describe() << " (T=" << options.steps
      << ", batch-norm " << (options.batch_stats ? "batch" : "running") << " statistics)\n";
  char buf[256];
  for (const auto& t : r.tensors) {
    std::snprintf(buf, sizeof buf, "  %-28s n=%-3d kinks=%-2d max_rel=%.3e analytic=% .6e numeric=% .6e%s\n",
                  t.name.c_str(), t.checked, t.kinks, t.max_rel_error, t.analytic, t.numeric,
                  t.max_rel_error < options.tolerance ? "" : "  FAIL");
    log << buf;
  }
  std::snprintf(buf, sizeof buf, "max relative error %.3e (tolerance %.1e): %s\n", r.max_rel_error,
                options.tolerance, r.passed ? "PASS" : "FAIL");
  log << buf;
  return r.passed;
}

}  // namespace ser
