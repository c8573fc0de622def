#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "ser/binary_io.hpp"
#include "ser/features.hpp"
#include "synthetic.hpp"

using namespace ser;
using sertest::TempDir;

namespace {

const double kMelScale = 2595.0 / std::log(10.0);
double htk_mel(double hz) { return kMelScale * std::log1p(hz / 700.0); }
double htk_hz(double mel) { return 700.0 * std::expm1(mel / kMelScale); }

EmbeddingFormatError::Kind load_failure(const std::filesystem::path& p) {
  try {
    load_embedding(p);
  } catch (const EmbeddingFormatError& e) {
    return e.kind();
  }
  FAIL("load_embedding accepted a malformed file");
  return EmbeddingFormatError::Kind::Io;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("ten seconds at 22050 Hz gives 108 x 128 log-mel frames") {
  const auto clip = sertest::tone("a", 440.0, 10.0, kFeatureSampleRate);
  const auto e = log_mel(clip);
  CHECK(e.steps() == 108);
  CHECK(e.dim() == 128);
  CHECK(e.kind == FeatureKind::LogMel);
  CHECK(e.frames.allFinite());
}

TEST_CASE("frame count is ceil(samples / hop)") {
  for (int n : {2048, 2049, 4095, 4096, 10000, 220500}) {
    AudioClip clip{"x", std::vector<float>(static_cast<std::size_t>(n), 0.1f), kFeatureSampleRate};
    CHECK(log_mel(clip).steps() == (n + 2047) / 2048);
  }
  AudioClip tiny{"x", std::vector<float>(100, 0.1f), kFeatureSampleRate};
  CHECK_THROWS_AS(log_mel(tiny), DataError);
}

TEST_CASE("silence maps to the log floor") {
  AudioClip clip{"z", std::vector<float>(22050, 0.0f), kFeatureSampleRate};
  const auto e = log_mel(clip);
  const float floor_value = static_cast<float>(std::log(1e-10));
  for (Eigen::Index i = 0; i < e.frames.size(); ++i) REQUIRE(e.frames.data()[i] == floor_value);
}

TEST_CASE("mel scale helpers agree with the natural-log HTK form") {
  for (double hz : {0.0, 100.0, 700.0, 1000.0, 4000.0, 11025.0}) {
    CHECK(hz_to_mel(hz) == doctest::Approx(htk_mel(hz)).epsilon(1e-12));
    CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz).epsilon(1e-12));
  }
}

TEST_CASE("filterbank triangles peak at one and tile the spectrum") {
  const Eigen::MatrixXd fb = mel_filterbank(kFeatureSampleRate, 4096, 128);
  CHECK(fb.rows() == 128);
  CHECK(fb.cols() == 2049);
  CHECK(fb.minCoeff() >= 0.0);
  CHECK(fb.maxCoeff() <= 1.0);
  for (int m = 0; m < 128; ++m) CHECK(fb.row(m).maxCoeff() > 0.3);
}

TEST_CASE("a 1 kHz tone peaks in the band centred nearest 1 kHz") {
  const auto e = log_mel(sertest::tone("k", 1000.0, 2.0, kFeatureSampleRate));
  const double top = htk_mel(kFeatureSampleRate / 2.0);
  int expected = 0;
  double best = 1e300;
  for (int m = 0; m < 128; ++m) {
    const double centre = htk_hz(top * (m + 1) / 129.0);
    if (std::abs(centre - 1000.0) < best) {
      best = std::abs(centre - 1000.0);
      expected = m;
    }
  }
  for (Eigen::Index t = 2; t < e.steps() - 2; ++t) {
    Eigen::Index arg = 0;
    e.frames.row(t).maxCoeff(&arg);
    CHECK(std::abs(static_cast<int>(arg) - expected) <= 1);
  }
}

TEST_CASE("frame t only depends on samples inside its window") {
  sertest::TempDir dir("frames");
  Rng rng(5);
  AudioClip clip{"r", std::vector<float>(20000), kFeatureSampleRate};
  for (auto& s : clip.samples) s = static_cast<float>(rng.uniform(-0.5, 0.5));
  const auto base = log_mel(clip);
  const int t = 4;
  AudioClip changed = clip;
  const int first = t * 2048 - 2048, last = t * 2048 + 2048;
  for (int i = 0; i < static_cast<int>(changed.samples.size()); ++i)
    if (i < first || i >= last) changed.samples[i] *= -3.0f;
  const auto other = log_mel(changed);
  CHECK(base.frames.row(t) == other.frames.row(t));
  CHECK(base.frames.row(t + 2) != other.frames.row(t + 2));
}

TEST_CASE("resampling") {
  AudioClip clip = sertest::tone("s", 300.0, 1.0, 44100);
  SUBCASE("same rate is the identity") {
    const auto out = resample(clip, 44100);
    CHECK(out.samples == clip.samples);
  }
  SUBCASE("sample count scales with the rate ratio") {
    CHECK(resample(clip, 22050).samples.size() == 22050);
    CHECK(resample(clip, 16000).samples.size() == 16000);
    CHECK(resample(clip, 48000).samples.size() == 48000);
    AudioClip odd{"o", std::vector<float>(1001, 0.0f), 8000};
    CHECK(resample(odd, 22050).samples.size() == static_cast<std::size_t>(std::llround(1001 * 22050.0 / 8000)));
  }
  SUBCASE("a constant signal stays exactly constant") {
    AudioClip c{"c", std::vector<float>(777, 0.3f), 32000};
    for (float v : resample(c, 22050).samples) REQUIRE(v == 0.3f);
    for (float v : resample(c, 44100).samples) REQUIRE(v == 0.3f);
  }
  SUBCASE("interpolation matches a direct formula") {
    AudioClip ramp{"r", {0.0f, 1.0f, 2.0f, 3.0f}, 4};
    const auto up = resample(ramp, 8);
    REQUIRE(up.samples.size() == 8);
    CHECK(up.samples[1] == doctest::Approx(0.5));
    CHECK(up.samples[5] == doctest::Approx(2.5));
    CHECK(up.samples[7] == doctest::Approx(3.0));
  }
  SUBCASE("errors") {
    AudioClip empty{"e", {}, 22050};
    CHECK_THROWS_WITH_AS(resample(empty, 22050), "empty audio", DataError);
    CHECK_THROWS_AS(resample(clip, 0), UsageError);
  }
}

TEST_CASE("fit_duration pads with zeros or truncates") {
  AudioClip shortc{"s", std::vector<float>(1000, 1.0f), 1000};
  const auto padded = fit_duration(shortc, 2.0);
  REQUIRE(padded.samples.size() == 2000);
  CHECK(padded.samples[999] == 1.0f);
  CHECK(padded.samples[1000] == 0.0f);
  CHECK(fit_duration(shortc, 0.5).samples.size() == 500);
}

TEST_CASE("embedding files round-trip bit-exactly for any shape") {
  TempDir dir("sere");
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int steps = 1 + static_cast<int>(rng.uniform_index(200));
    const int dim = 1 + static_cast<int>(rng.uniform_index(256));
    auto e = sertest::random_embedding("c" + std::to_string(trial), steps, dim, rng);
    e.frames(0, 0) = -0.0f;
    e.frames(steps - 1, dim - 1) = 3.4e38f;
    const auto path = dir / (e.clip_id + ".sere");
    store_embedding(e, path);
    const auto back = load_embedding(path);
    REQUIRE(back.steps() == steps);
    REQUIRE(back.dim() == dim);
    CHECK(back.clip_id == e.clip_id);
    CHECK(std::memcmp(back.frames.data(), e.frames.data(), sizeof(float) * e.frames.size()) == 0);
    CHECK(std::filesystem::file_size(path) == 16 + 4ull * steps * dim);
  }
}

TEST_CASE("a full log-mel clip file is 16 + 108 * 128 * 4 bytes") {
  TempDir dir("size");
  const auto e = log_mel(sertest::tone("t", 200.0, 10.0, kFeatureSampleRate));
  store_embedding(e, dir / "t.sere");
  CHECK(std::filesystem::file_size(dir / "t.sere") == 16 + 108 * 128 * 4);
  const auto bytes = binary::read_file((dir / "t.sere").string());
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SERE");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 108);
  CHECK(bytes[12] == 128);
}

TEST_CASE("malformed embedding files fail with distinct error kinds") {
  using Kind = EmbeddingFormatError::Kind;
  TempDir dir("bad");
  Rng rng(3);
  const auto good = encode_embedding(sertest::random_embedding("g", 3, 4, rng));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  write_bytes(dir / "magic.sere", bad_magic);
  CHECK(load_failure(dir / "magic.sere") == Kind::BadMagic);

  auto version = good;
  version[4] = 2;
  write_bytes(dir / "version.sere", version);
  CHECK(load_failure(dir / "version.sere") == Kind::UnsupportedVersion);

  auto empty = good;
  empty.resize(16);
  empty[8] = 0;
  write_bytes(dir / "empty.sere", empty);
  CHECK(load_failure(dir / "empty.sere") == Kind::EmptyEmbedding);

  auto truncated = good;
  truncated.pop_back();
  write_bytes(dir / "trunc.sere", truncated);
  CHECK(load_failure(dir / "trunc.sere") == Kind::Truncated);
  write_bytes(dir / "header.sere", {'S', 'E', 'R', 'E', 1, 0});
  CHECK(load_failure(dir / "header.sere") == Kind::Truncated);

  auto nan = good;
  const float q = std::nanf("");
  std::memcpy(nan.data() + 16 + 4 * 5, &q, 4);
  write_bytes(dir / "nan.sere", nan);
  CHECK(load_failure(dir / "nan.sere") == Kind::NonFinite);

  CHECK(load_failure(dir / "missing.sere") == Kind::Io);
}

TEST_CASE("validate enforces D = 128 and finite values") {
  Rng rng(2);
  auto e = sertest::random_embedding("v", 10, 128, rng);
  CHECK_NOTHROW(validate(e));
  CHECK_THROWS_AS(validate(sertest::random_embedding("w", 10, 64, rng)), DataError);
  e.frames(3, 3) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(validate(e), DataError);
  CHECK_THROWS_AS(store_embedding(e, "/tmp/never.sere"), DataError);
  EmbeddingSequence empty{"e", FrameMatrix(0, 128), FeatureKind::VGGish};
  CHECK_THROWS_AS(validate(empty), DataError);
}

TEST_CASE("wav files") {
  TempDir dir("wav");
  const auto clip = sertest::tone("w", 440.0, 0.5, 22050, 0.8);
  SUBCASE("float32 round-trips exactly") {
    write_wav(clip, dir / "f.wav", WavEncoding::Float32);
    const auto back = read_wav(dir / "f.wav");
    CHECK(back.sample_rate == 22050);
    CHECK(back.samples == clip.samples);
    CHECK(back.clip_id == "f");
  }
  SUBCASE("pcm16 within quantization error") {
    write_wav(clip, dir / "p.wav", WavEncoding::Pcm16);
    const auto back = read_wav(dir / "p.wav");
    REQUIRE(back.samples.size() == clip.samples.size());
    for (std::size_t i = 0; i < clip.samples.size(); ++i)
      REQUIRE(std::abs(back.samples[i] - clip.samples[i]) < 2.0 / 32768);
  }
  SUBCASE("stereo is averaged to mono") {
    write_wav(clip, dir / "s.wav", WavEncoding::Float32, 2);
    CHECK(read_wav(dir / "s.wav").samples == clip.samples);
  }
  SUBCASE("rejects non-wav input") {
    write_bytes(dir / "bad.wav", {'n', 'o', 'p', 'e'});
    CHECK_THROWS_AS(read_wav(dir / "bad.wav"), DataError);
    CHECK_THROWS_AS(read_wav(dir / "absent.wav"), DataError);
  }
}

TEST_CASE("feature kind names") {
  CHECK(parse_feature_kind("logmel") == FeatureKind::LogMel);
  CHECK(parse_feature_kind("vggish") == FeatureKind::VGGish);
  CHECK(std::string(to_string(FeatureKind::LogMel)) == "logmel");
  CHECK_THROWS_AS(parse_feature_kind("mfcc"), UsageError);
}
