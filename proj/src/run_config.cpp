#include "ser/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "ser/error.hpp"

namespace ser {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size())
    throw UsageError("invalid value '" + value + "' for " + key);
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("invalid value '" + value + "' for " + key);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw UsageError("invalid boolean '" + value + "' for " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw UsageError("empty list for " + key);
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + std::to_string(items[i]);
  return out;
}

std::string num(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "features") features = parse_feature_kind(value);
  else if (key == "variant") network.variant = parse_variant(value);
  else if (key == "siamese") network.siamese = parse_bool(key, value);
  else if (key == "attention") network.attention = parse_bool(key, value);
  else if (key == "branch_units") network.branch_units = parse_list<int>(key, value);
  else if (key == "mlp_units") network.mlp_units = parse_list<int>(key, value);
  else if (key == "dropout_rate") network.dropout_rate = parse_double(key, value);
  else if (key == "categories") network.categories = parse_number<int>(key, value);
  else if (key == "statuses") network.statuses = parse_number<int>(key, value);
  else if (key == "input_dim") network.input_dim = parse_number<int>(key, value);
  else if (key == "bn_momentum") network.bn_momentum = parse_double(key, value);
  else if (key == "bn_epsilon") network.bn_epsilon = parse_double(key, value);
  else if (key == "learning_rate") train.optimizer.learning_rate = parse_double(key, value);
  else if (key == "rmsprop_decay") train.optimizer.decay = parse_double(key, value);
  else if (key == "rmsprop_epsilon") train.optimizer.epsilon = parse_double(key, value);
  else if (key == "batch_size") train.batch_size = parse_number<int>(key, value);
  else if (key == "max_epochs") train.max_epochs = parse_number<int>(key, value);
  else if (key == "validation_fraction") train.validation_fraction = parse_double(key, value);
  else if (key == "eval_train_loss") train.eval_train_loss = parse_bool(key, value);
  else if (key == "thresholds") eval.thresholds = parse_list<int>(key, value);
  else if (key == "ks") eval.ks = parse_list<std::size_t>(key, value);
  else if (key == "baseline_seed") baseline_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "baseline_trials") eval.baseline_trials = parse_number<int>(key, value);
  else if (key == "per_side") per_side = parse_number<int>(key, value);
  else if (key == "pair_sampling") pair_sampling = parse_pair_sampling(value);
  else if (key == "min_annotators") min_annotators = parse_number<int>(key, value);
  else if (key == "retrieve_k") retrieve_k = parse_number<std::size_t>(key, value);
  else if (key == "score_mode") score_mode = parse_score_mode(value);
  else throw UsageError("unknown configuration key '" + key + "'");
}

void RunConfig::validate() const {
  network.validate();
  if (network.categories != kCategories || network.statuses != kStatuses)
    throw UsageError("categories must be 8 and statuses 3");
  train_config().validate();
  eval_config().validate();
  for (int s : eval.thresholds)
    if (s < 0 || s > kCategories + 1) throw UsageError("thresholds must lie in [0, 9]");
  if (per_side < 1) throw UsageError("per_side must be at least 1");
  if (min_annotators < 1) throw UsageError("min_annotators must be at least 1");
  if (retrieve_k < 1) throw UsageError("retrieve_k must be at least 1");
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig e = eval;
  e.baseline_seed = baseline_seed.value_or(seed);
  return e;
}

PairingOptions RunConfig::pairing_options() const { return {per_side, seed, pair_sampling}; }

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "seed=" << seed << '\n'
      << "features=" << to_string(features) << '\n'
      << "variant=" << to_string(network.variant) << '\n'
      << "siamese=" << (network.siamese ? "true" : "false") << '\n'
      << "attention=" << (network.attention ? "true" : "false") << '\n'
      << "branch_units=" << join(network.branch_units) << '\n'
      << "mlp_units=" << join(network.mlp_units) << '\n'
      << "dropout_rate=" << num(network.dropout_rate) << '\n'
      << "categories=" << network.categories << '\n'
      << "statuses=" << network.statuses << '\n'
      << "input_dim=" << network.input_dim << '\n'
      << "bn_momentum=" << num(network.bn_momentum) << '\n'
      << "bn_epsilon=" << num(network.bn_epsilon) << '\n'
      << "learning_rate=" << num(train.optimizer.learning_rate) << '\n'
      << "rmsprop_decay=" << num(train.optimizer.decay) << '\n'
      << "rmsprop_epsilon=" << num(train.optimizer.epsilon) << '\n'
      << "batch_size=" << train.batch_size << '\n'
      << "max_epochs=" << train.max_epochs << '\n'
      << "validation_fraction=" << num(train.validation_fraction) << '\n'
      << "eval_train_loss=" << (train.eval_train_loss ? "true" : "false") << '\n'
      << "thresholds=" << join(eval.thresholds) << '\n'
      << "ks=" << join(eval.ks) << '\n'
      << "baseline_seed=" << baseline_seed.value_or(seed) << '\n'
      << "baseline_trials=" << eval.baseline_trials << '\n'
      << "per_side=" << per_side << '\n'
      << "pair_sampling=" << to_string(pair_sampling) << '\n'
      << "min_annotators=" << min_annotators << '\n'
      << "retrieve_k=" << retrieve_k << '\n'
      << "score_mode=" << to_string(score_mode) << '\n';
  return out.str();
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace ser
