#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ser/error.hpp"

namespace ser {

struct AudioClip {
  std::string clip_id;
  std::vector<float> samples;  // mono, amplitudes in [-1, 1]
  int sample_rate = 0;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

enum class FeatureKind : std::uint32_t { LogMel = 0, VGGish = 1 };

const char* to_string(FeatureKind kind);
FeatureKind parse_feature_kind(const std::string& name);

using FrameMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// T x D frame features for one clip.
struct EmbeddingSequence {
  std::string clip_id;
  FrameMatrix frames;
  FeatureKind kind = FeatureKind::VGGish;

  Eigen::Index steps() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

constexpr Eigen::Index kEmbeddingDim = 128;

/// Throws DataError when T or D is zero, an entry is non-finite, or D does not
/// match the feature kind (128 for both kinds).
void validate(const EmbeddingSequence& e);

// --- audio -----------------------------------------------------------------

constexpr int kFeatureSampleRate = 22050;
constexpr double kClipSeconds = 10.0;

/// Linear-interpolation resampling. Throws DataError("empty audio").
AudioClip resample(const AudioClip& clip, int target_rate);

/// Zero-pads or truncates to exactly `seconds` of audio.
AudioClip fit_duration(const AudioClip& clip, double seconds = kClipSeconds);

struct MelConfig {
  int window = 4096;
  int hop = 2048;
  int n_mels = 128;
  double log_floor = 1e-10;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular HTK-scale filterbank, n_mels x (window/2 + 1), peak-normalized,
/// spanning 0 Hz to sample_rate / 2.
Eigen::MatrixXd mel_filterbank(int sample_rate, int window, int n_mels);

/// Log-Mel spectrogram: centred zero-padded Hann STFT magnitudes, mel
/// filterbank, natural log with floor. T = ceil(samples / hop).
/// Throws DataError("clip too short") when the clip is shorter than one hop.
EmbeddingSequence log_mel(const AudioClip& clip, const MelConfig& cfg = {});

// --- embedding files --------------------------------------------------------

/// Failure modes of load_embedding; each is a distinct variant.
class EmbeddingFormatError : public DataError {
 public:
  enum class Kind { BadMagic, UnsupportedVersion, EmptyEmbedding, Truncated, NonFinite, Io };
  EmbeddingFormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

constexpr std::uint32_t kEmbeddingFormatVersion = 1;
constexpr std::size_t kEmbeddingHeaderBytes = 16;

std::vector<unsigned char> encode_embedding(const EmbeddingSequence& e);

/// Embedding file: "SERE", version, T, D (u32 LE), then T*D float32 row-major.
/// The clip id is taken from the file stem; the kind from `kind`. Only the
/// container is checked here; use validate() for the per-kind shape.
EmbeddingSequence load_embedding(const std::filesystem::path& path,
                                 FeatureKind kind = FeatureKind::VGGish);
void store_embedding(const EmbeddingSequence& e, const std::filesystem::path& path);

// --- WAV ---------------------------------------------------------------------

/// Reads RIFF/WAVE PCM16 or float32, mono or stereo (stereo is averaged).
AudioClip read_wav(const std::filesystem::path& path);

enum class WavEncoding { Pcm16, Float32 };
void write_wav(const AudioClip& clip, const std::filesystem::path& path,
               WavEncoding encoding = WavEncoding::Pcm16, int channels = 1);

}  // namespace ser
