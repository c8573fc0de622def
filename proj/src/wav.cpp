#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "ser/binary_io.hpp"
#include "ser/features.hpp"

namespace ser {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  const auto bytes = binary::read_file(path.string());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DataError(where + "not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = le32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw DataError(where + "short fmt chunk");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      if (format == kFormatExtensible && avail >= 26) format = le16(chunk + 32);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = avail;
    }
    pos = body + len + (len & 1);
  }
  if (channels == 0 || rate == 0) throw DataError(where + "missing fmt chunk");
  if (data == nullptr) throw DataError(where + "missing data chunk");
  if (channels > 2) throw DataError(where + "only mono and stereo are supported");
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) throw DataError(where + "only PCM 16-bit and float32 are supported");

  const std::size_t frame_bytes = static_cast<std::size_t>(bits / 8) * channels;
  const std::size_t frames = data_len / frame_bytes;
  AudioClip clip{path.stem().string(), std::vector<float>(frames), static_cast<int>(rate)};
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * (bits / 8);
      if (pcm16) {
        acc += static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else {
        const float v = std::bit_cast<float>(le32(p));
        if (!std::isfinite(v)) throw DataError(where + "non-finite sample");
        acc += v;
      }
    }
    clip.samples[i] = static_cast<float>(acc / channels);
  }
  return clip;
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path, WavEncoding encoding,
               int channels) {
  if (channels != 1 && channels != 2) throw UsageError("write_wav: channels must be 1 or 2");
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(bits / 8 * channels);
  const auto data_len = static_cast<std::uint32_t>(clip.samples.size() * block);

  std::vector<unsigned char> out;
  out.reserve(44 + data_len);
  binary::put_bytes(out, "RIFF");
  binary::put_u32(out, 36 + data_len);
  binary::put_bytes(out, "WAVEfmt ");
  binary::put_u32(out, 16);
  put_u16(out, encoding == WavEncoding::Pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, static_cast<std::uint16_t>(channels));
  binary::put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  binary::put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * block);
  put_u16(out, block);
  put_u16(out, bits);
  binary::put_bytes(out, "data");
  binary::put_u32(out, data_len);
  for (float s : clip.samples) {
    for (int c = 0; c < channels; ++c) {
      if (encoding == WavEncoding::Pcm16) {
        const double scaled = std::clamp(static_cast<double>(s), -1.0, 1.0) * 32767.0;
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(scaled))));
      } else {
        binary::put_f32(out, s);
      }
    }
  }
  binary::write_file(path.string(), out);
}

}  // namespace ser
