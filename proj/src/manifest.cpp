#include "ser/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_map>

#include "ser/error.hpp"

namespace ser {

const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::vector<std::string> Manifest::ids(Split split) const {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (r.split == split) out.push_back(r.clip_id);
  return out;
}

std::vector<LabeledClip> Manifest::labeled(Split split) const {
  std::vector<LabeledClip> out;
  for (const auto& r : rows)
    if (r.split == split) out.push_back({r.clip_id, r.labels});
  return out;
}

std::map<std::string, LabelVector> Manifest::label_map() const {
  std::map<std::string, LabelVector> out;
  for (const auto& r : rows) out.emplace(r.clip_id, r.labels);
  return out;
}

const ManifestRow& Manifest::row(const std::string& clip_id) const {
  for (const auto& r : rows)
    if (r.clip_id == clip_id) return r;
  throw DataError("clip " + clip_id + " is not in the manifest");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw DataError(path.string() + ":" + std::to_string(line) + ": " + what);
}

constexpr const char* kColumnHeader = "clip_id\tsplit\taudio_path\tembedding_path\tlabels";

}  // namespace

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  bool have_categories = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.starts_with("#categories:")) {
      auto names = split_tabs(line.substr(12));
      if (!names.empty() && names.front().empty()) names.erase(names.begin());
      if (names.size() != kCategories) fail(path, line_no, "expected 8 category names");
      std::copy(names.begin(), names.end(), m.categories.begin());
      have_categories = true;
      continue;
    }
    if (line.starts_with("#")) continue;
    if (line == kColumnHeader) continue;
    if (!have_categories) fail(path, line_no, "missing #categories: header line");
    const auto f = split_tabs(line);
    if (f.size() != 5) fail(path, line_no, "expected 5 tab-separated columns");
    ManifestRow row;
    row.clip_id = f[0];
    if (row.clip_id.empty()) fail(path, line_no, "empty clip id");
    if (f[1] == "train") row.split = Split::Train;
    else if (f[1] == "test") row.split = Split::Test;
    else fail(path, line_no, "split must be train or test");
    row.audio_path = f[2] == "-" ? "" : f[2];
    row.embedding_path = f[3] == "-" ? "" : f[3];
    try {
      row.labels = parse_labels(f[4]);
    } catch (const DataError& err) {
      fail(path, line_no, err.what());
    }
    m.rows.push_back(std::move(row));
  }
  if (!have_categories) throw DataError(path.string() + ": missing #categories: header line");
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "#categories:";
  for (const auto& c : manifest.categories) out << '\t' << c;
  out << '\n' << kColumnHeader << '\n';
  for (const auto& r : manifest.rows)
    out << r.clip_id << '\t' << to_string(r.split) << '\t'
        << (r.audio_path.empty() ? "-" : r.audio_path) << '\t'
        << (r.embedding_path.empty() ? "-" : r.embedding_path) << '\t' << format_labels(r.labels)
        << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& path) {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : base / p;
}

void validate_manifest(const Manifest& manifest, const std::filesystem::path& base,
                       const FeatureKind* kind) {
  std::set<std::string> seen;
  for (const auto& r : manifest.rows) {
    if (!seen.insert(r.clip_id).second) throw DataError("duplicate clip id " + r.clip_id);
    if (!kind) continue;
    const std::string& ref = *kind == FeatureKind::LogMel ? r.audio_path : r.embedding_path;
    const char* what = *kind == FeatureKind::LogMel ? "audio" : "embedding";
    if (ref.empty()) throw DataError("clip " + r.clip_id + " has no " + what + " path");
    if (!std::filesystem::exists(resolve_path(base, ref)))
      throw DataError("clip " + r.clip_id + ": " + what + " file not found: " + ref);
  }
}

namespace {

// Splits one CSV record; handles double-quoted fields with "" escapes.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

}  // namespace

Manifest ingest(const std::filesystem::path& annotations, const IngestOptions& options) {
  if (options.min_annotators < 1) throw UsageError("min_annotators must be at least 1");
  std::ifstream in(annotations);
  if (!in) throw DataError("cannot open annotations " + annotations.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(annotations.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);

  int split_col = -1, file_col = -1;
  std::array<int, kCategories> cat_col;
  cat_col.fill(-1);
  const std::regex coarse(R"(^(\d+)_([A-Za-z-]+)_presence$)");
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    const std::string& name = header[i];
    if (name == "split") split_col = i;
    else if (name == "audio_filename") file_col = i;
    std::smatch m;
    if (std::regex_match(name, m, coarse)) {
      const auto it = std::find(kCoarseCategories.begin(), kCoarseCategories.end(), m[2].str());
      if (it == kCoarseCategories.end())
        throw DataError(annotations.string() + ":1: unknown category column '" + name + "'");
      cat_col[it - kCoarseCategories.begin()] = i;
    }
  }
  if (split_col < 0 || file_col < 0)
    throw DataError(annotations.string() + ":1: missing split or audio_filename column");
  for (int k = 0; k < kCategories; ++k)
    if (cat_col[k] < 0)
      throw DataError(annotations.string() + ":1: missing presence column for category " +
                      kCoarseCategories[k]);

  struct Aggregate {
    Split split = Split::Train;
    std::string file;
    std::array<int, kCategories> votes{};
  };
  std::vector<Aggregate> clips;
  std::unordered_map<std::string, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size())
      throw DataError(annotations.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
    Split split;
    if (f[split_col] == "train") split = Split::Train;
    else if (f[split_col] == "validate" || f[split_col] == "test") split = Split::Test;
    else
      throw DataError(annotations.string() + ":" + std::to_string(line_no) + ": unknown split '" +
                      f[split_col] + "'");
    const std::string& file = f[file_col];
    if (file.empty()) throw DataError(annotations.string() + ":" + std::to_string(line_no) + ": empty audio_filename");
    auto [it, inserted] = index.emplace(file, clips.size());
    if (inserted) clips.push_back({split, file, {}});
    Aggregate& agg = clips[it->second];
    if (agg.split != split)
      throw DataError(annotations.string() + ":" + std::to_string(line_no) + ": clip " + file +
                      " appears in two splits");
    for (int k = 0; k < kCategories; ++k) {
      const std::string& v = f[cat_col[k]];
      double value = 0.0;
      if (!v.empty()) {
        try {
          std::size_t used = 0;
          value = std::stod(v, &used);
          if (used != v.size()) throw std::invalid_argument(v);
        } catch (const std::exception&) {
          throw DataError(annotations.string() + ":" + std::to_string(line_no) +
                          ": malformed presence value '" + v + "'");
        }
      }
      if (value >= 0.5) ++agg.votes[k];
    }
  }

  Manifest m;
  for (const auto& agg : clips) {
    ManifestRow row;
    row.clip_id = std::filesystem::path(agg.file).stem().string();
    row.split = agg.split;
    row.audio_path = (options.audio_dir / agg.file).string();
    for (int k = 0; k < kCategories; ++k) row.labels.bits[k] = agg.votes[k] >= options.min_annotators;
    m.rows.push_back(std::move(row));
  }
  return m;
}

}  // namespace ser
