#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ser/error.hpp"
#include "ser/network.hpp"

namespace ser {

class CheckpointError : public DataError {
 public:
  enum class Kind { BadMagic, VersionMismatch, Corrupt, Io };
  CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NetworkParams params;
  NetworkConfig config;
};

/// "SERM", version, serialized NetworkConfig, then named tensors
/// (name, rows, cols, float32 payload), all little-endian.
std::vector<unsigned char> encode_checkpoint(const NetworkParams& params, const NetworkConfig& cfg);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const NetworkParams& params, const NetworkConfig& cfg,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ser
