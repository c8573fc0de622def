#include "ser/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>

#include "ser/binary_io.hpp"

namespace ser {

const char* to_string(FeatureKind kind) {
  return kind == FeatureKind::LogMel ? "logmel" : "vggish";
}

FeatureKind parse_feature_kind(const std::string& name) {
  if (name == "logmel") return FeatureKind::LogMel;
  if (name == "vggish") return FeatureKind::VGGish;
  throw UsageError("unknown feature kind '" + name + "' (expected logmel or vggish)");
}

void validate(const EmbeddingSequence& e) {
  if (e.steps() < 1 || e.dim() < 1) throw DataError("empty embedding: " + e.clip_id);
  if (!e.frames.allFinite()) throw DataError("non-finite embedding values: " + e.clip_id);
  if (e.dim() != kEmbeddingDim)
    throw DataError("embedding " + e.clip_id + " has D=" + std::to_string(e.dim()) +
                    ", " + to_string(e.kind) + " features require D=128");
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw UsageError("target sample rate must be positive");
  if (clip.samples.empty()) throw DataError("empty audio");
  if (clip.sample_rate <= 0) throw DataError("invalid sample rate for " + clip.clip_id);
  if (clip.sample_rate == target_rate) return clip;

  const std::size_t n = clip.samples.size();
  const double ratio = static_cast<double>(clip.sample_rate) / target_rate;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * target_rate / clip.sample_rate));

  AudioClip out{clip.clip_id, {}, target_rate};
  out.samples.resize(std::max<std::size_t>(out_len, 1));
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double pos = static_cast<double>(i) * ratio;
    const auto idx = std::min(static_cast<std::size_t>(pos), n - 1);
    const std::size_t next = std::min(idx + 1, n - 1);
    const double frac = pos - static_cast<double>(idx);
    const double x0 = clip.samples[idx];
    // x0 + frac * (x1 - x0) keeps constant signals exactly constant.
    out.samples[i] = static_cast<float>(x0 + frac * (clip.samples[next] - x0));
  }
  return out;
}

AudioClip fit_duration(const AudioClip& clip, double seconds) {
  AudioClip out = clip;
  const auto target = static_cast<std::size_t>(std::llround(seconds * clip.sample_rate));
  out.samples.resize(target, 0.0f);
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::MatrixXd mel_filterbank(int sample_rate, int window, int n_mels) {
  const int bins = window / 2 + 1;
  const double max_mel = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (int m = 0; m < n_mels + 2; ++m)
    edges[m] = mel_to_hz(max_mel * m / (n_mels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / window;
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb(m, k) = w;
    }
  }
  return fb;
}

namespace {

// FFTW's planner is not re-entrant; executing a plan is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(int n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_.get(), out_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_.get(); }
  void execute() { fftw_execute(plan_); }
  double magnitude(int k) const { return std::hypot(out_.get()[k][0], out_.get()[k][1]); }

 private:
  int n_;
  std::unique_ptr<double, FftwDeleter> in_;
  std::unique_ptr<fftw_complex, FftwDeleter> out_;
  fftw_plan plan_ = nullptr;
};

}  // namespace

EmbeddingSequence log_mel(const AudioClip& clip, const MelConfig& cfg) {
  if (cfg.window <= 0 || cfg.hop <= 0 || cfg.n_mels <= 0)
    throw UsageError("log_mel: window, hop and n_mels must be positive");
  const auto n = static_cast<std::ptrdiff_t>(clip.samples.size());
  if (n < cfg.hop) throw DataError("clip too short");

  const std::ptrdiff_t steps = (n + cfg.hop - 1) / cfg.hop;
  const int bins = cfg.window / 2 + 1;
  const Eigen::MatrixXd fb = mel_filterbank(clip.sample_rate, cfg.window, cfg.n_mels);

  std::vector<double> hann(cfg.window);
  for (int i = 0; i < cfg.window; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg.window);

  RealFft fft(cfg.window);
  Eigen::VectorXd magnitude(bins);
  EmbeddingSequence out{clip.clip_id, FrameMatrix(steps, cfg.n_mels), FeatureKind::LogMel};
  const std::ptrdiff_t half = cfg.window / 2;
  for (std::ptrdiff_t t = 0; t < steps; ++t) {
    // Frame t is centred on sample t * hop; samples outside the clip are zero.
    const std::ptrdiff_t start = t * cfg.hop - half;
    double* buf = fft.input();
    for (int i = 0; i < cfg.window; ++i) {
      const std::ptrdiff_t src = start + i;
      buf[i] = (src >= 0 && src < n) ? clip.samples[src] * hann[i] : 0.0;
    }
    fft.execute();
    for (int k = 0; k < bins; ++k) magnitude[k] = fft.magnitude(k);
    const Eigen::VectorXd mel = fb * magnitude;
    for (int m = 0; m < cfg.n_mels; ++m)
      out.frames(t, m) = static_cast<float>(std::log(std::max(mel[m], cfg.log_floor)));
  }
  return out;
}

std::vector<unsigned char> encode_embedding(const EmbeddingSequence& e) {
  std::vector<unsigned char> bytes;
  bytes.reserve(kEmbeddingHeaderBytes + 4 * e.frames.size());
  binary::put_bytes(bytes, "SERE");
  binary::put_u32(bytes, kEmbeddingFormatVersion);
  binary::put_u32(bytes, static_cast<std::uint32_t>(e.steps()));
  binary::put_u32(bytes, static_cast<std::uint32_t>(e.dim()));
  for (Eigen::Index t = 0; t < e.steps(); ++t)
    for (Eigen::Index d = 0; d < e.dim(); ++d) binary::put_f32(bytes, e.frames(t, d));
  return bytes;
}

EmbeddingSequence load_embedding(const std::filesystem::path& path, FeatureKind kind) {
  using Kind = EmbeddingFormatError::Kind;
  std::vector<unsigned char> bytes;
  try {
    bytes = binary::read_file(path.string());
  } catch (const Error& err) {
    throw EmbeddingFormatError(Kind::Io, err.what());
  }
  const std::string where = path.string() + ": ";
  binary::Reader in(bytes);
  std::string magic;
  if (!in.bytes(4, magic) || magic != "SERE")
    throw EmbeddingFormatError(Kind::BadMagic, where + "bad magic");
  std::uint32_t version = 0, steps = 0, dim = 0;
  if (!in.u32(version) || !in.u32(steps) || !in.u32(dim))
    throw EmbeddingFormatError(Kind::Truncated, where + "truncated header");
  if (version != kEmbeddingFormatVersion)
    throw EmbeddingFormatError(Kind::UnsupportedVersion,
                               where + "unsupported version " + std::to_string(version));
  if (steps == 0 || dim == 0) throw EmbeddingFormatError(Kind::EmptyEmbedding, where + "empty embedding");
  const std::uint64_t expected = 4ULL * steps * dim;
  if (in.remaining() < expected)
    throw EmbeddingFormatError(Kind::Truncated, where + "truncated payload");

  EmbeddingSequence e{path.stem().string(), FrameMatrix(steps, dim), kind};
  for (std::uint32_t t = 0; t < steps; ++t)
    for (std::uint32_t d = 0; d < dim; ++d) {
      float v = 0.0f;
      in.f32(v);
      if (!std::isfinite(v))
        throw EmbeddingFormatError(Kind::NonFinite, where + "non-finite value at frame " +
                                                        std::to_string(t));
      e.frames(t, d) = v;
    }
  return e;
}

void store_embedding(const EmbeddingSequence& e, const std::filesystem::path& path) {
  if (e.steps() < 1 || e.dim() < 1) throw DataError("empty embedding: " + e.clip_id);
  if (!e.frames.allFinite()) throw DataError("non-finite embedding values: " + e.clip_id);
  binary::write_file(path.string(), encode_embedding(e));
}

namespace binary {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  // Write to a sibling temp file and rename so readers never see partial output.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp + ": " + ec.message());
}

}  // namespace binary

}  // namespace ser
