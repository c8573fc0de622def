#include "ser/checkpoint.hpp"

#include <cmath>

#include "ser/binary_io.hpp"

namespace ser {

namespace {

void put_units(std::vector<unsigned char>& out, const std::vector<int>& units) {
  binary::put_u32(out, static_cast<std::uint32_t>(units.size()));
  for (int u : units) binary::put_u32(out, static_cast<std::uint32_t>(u));
}

[[noreturn]] void corrupt(const std::string& what) {
  throw CheckpointError(CheckpointError::Kind::Corrupt, "corrupt checkpoint: " + what);
}

std::uint32_t read_u32(binary::Reader& in, const char* field) {
  std::uint32_t v = 0;
  if (!in.u32(v)) corrupt(std::string("truncated at ") + field);
  return v;
}

float read_f32(binary::Reader& in, const char* field) {
  float v = 0;
  if (!in.f32(v)) corrupt(std::string("truncated at ") + field);
  return v;
}

double read_f64(binary::Reader& in, const char* field) {
  double v = 0;
  if (!in.f64(v)) corrupt(std::string("truncated at ") + field);
  return v;
}

std::vector<int> read_units(binary::Reader& in, const char* field) {
  const std::uint32_t n = read_u32(in, field);
  if (n > 64) corrupt(std::string("implausible layer count in ") + field);
  std::vector<int> units(n);
  for (auto& u : units) u = static_cast<int>(read_u32(in, field));
  return units;
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const NetworkParams& params, const NetworkConfig& cfg) {
  check_shapes(params, cfg);
  std::vector<unsigned char> out;
  binary::put_bytes(out, "SERM");
  binary::put_u32(out, kCheckpointVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(cfg.variant));
  binary::put_u32(out, cfg.siamese ? 1 : 0);
  binary::put_u32(out, cfg.attention ? 1 : 0);
  put_units(out, cfg.branch_units);
  put_units(out, cfg.mlp_units);
  binary::put_f64(out, cfg.dropout_rate);
  binary::put_u32(out, static_cast<std::uint32_t>(cfg.categories));
  binary::put_u32(out, static_cast<std::uint32_t>(cfg.statuses));
  binary::put_u32(out, static_cast<std::uint32_t>(cfg.input_dim));
  binary::put_f64(out, cfg.bn_momentum);
  binary::put_f64(out, cfg.bn_epsilon);
  std::uint32_t count = 0;
  for_each_tensor(params, [&](const std::string&, const Matrix&, TensorRole) { ++count; });
  binary::put_u32(out, count);
  for_each_tensor(params, [&](const std::string& name, const Matrix& t, TensorRole) {
    binary::put_u32(out, static_cast<std::uint32_t>(name.size()));
    binary::put_bytes(out, name);
    binary::put_u32(out, static_cast<std::uint32_t>(t.rows()));
    binary::put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) binary::put_f32(out, static_cast<float>(t.data()[i]));
  });
  return out;
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  binary::Reader in(bytes);
  std::string magic;
  if (!in.bytes(4, magic) || magic != "SERM")
    throw CheckpointError(CheckpointError::Kind::BadMagic, "not a checkpoint (bad magic)");
  const std::uint32_t version = read_u32(in, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          "checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  NetworkConfig cfg;
  const std::uint32_t variant = read_u32(in, "variant");
  if (variant > 1) corrupt("unknown variant");
  cfg.variant = static_cast<Variant>(variant);
  cfg.siamese = read_u32(in, "siamese") != 0;
  cfg.attention = read_u32(in, "attention") != 0;
  cfg.branch_units = read_units(in, "branch_units");
  cfg.mlp_units = read_units(in, "mlp_units");
  cfg.dropout_rate = read_f64(in, "dropout_rate");
  cfg.categories = static_cast<int>(read_u32(in, "categories"));
  cfg.statuses = static_cast<int>(read_u32(in, "statuses"));
  cfg.input_dim = static_cast<int>(read_u32(in, "input_dim"));
  cfg.bn_momentum = read_f64(in, "bn_momentum");
  cfg.bn_epsilon = read_f64(in, "bn_epsilon");
  if (cfg.categories != kCategories || cfg.statuses != kStatuses) corrupt("unsupported output shape");
  try {
    cfg.validate();
  } catch (const UsageError& err) {
    corrupt(err.what());
  }

  Checkpoint ck{init_params(cfg, 0), cfg};
  const std::uint32_t count = read_u32(in, "tensor count");
  std::uint32_t seen = 0;
  for_each_tensor(ck.params, [&](const std::string& name, Matrix& t, TensorRole) {
    ++seen;
    if (seen > count) corrupt("missing tensor " + name);
    std::string stored;
    const std::uint32_t len = read_u32(in, "tensor name");
    if (!in.bytes(len, stored)) corrupt("truncated tensor name");
    if (stored != name) corrupt("expected tensor " + name + ", found " + stored);
    const std::uint32_t rows = read_u32(in, "tensor shape");
    const std::uint32_t cols = read_u32(in, "tensor shape");
    if (rows != t.rows() || cols != t.cols()) corrupt("shape mismatch for " + name);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const float v = read_f32(in, "tensor payload");
      if (!std::isfinite(v)) corrupt("non-finite value in " + name);
      t.data()[i] = v;
    }
  });
  if (seen != count) corrupt("unexpected tensor count");
  if (in.remaining() != 0) corrupt("trailing bytes");
  return ck;
}

void save_checkpoint(const NetworkParams& params, const NetworkConfig& cfg,
                     const std::filesystem::path& path) {
  binary::write_file(path.string(), encode_checkpoint(params, cfg));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  try {
    bytes = binary::read_file(path.string());
  } catch (const Error& err) {
    throw CheckpointError(CheckpointError::Kind::Io, err.what());
  }
  return decode_checkpoint(bytes);
}

}  // namespace ser
