#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace ser::binary {

// Little-endian encoders shared by the embedding and checkpoint formats.

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f32(std::vector<unsigned char>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void put_f64(std::vector<unsigned char>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  put_u32(out, static_cast<std::uint32_t>(bits));
  put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

inline void put_bytes(std::vector<unsigned char>& out, std::string_view s) {
  out.insert(out.end(), s.begin(), s.end());
}

/// Sequential reader over a byte buffer. Every read reports whether enough
/// bytes remained; callers decide which error that maps to.
class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& data) : data_(data) {}

  std::size_t remaining() const { return data_.size() - pos_; }

  bool u32(std::uint32_t& v) {
    if (remaining() < 4) return false;
    v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return true;
  }

  bool f32(float& v) {
    std::uint32_t bits = 0;
    if (!u32(bits)) return false;
    v = std::bit_cast<float>(bits);
    return true;
  }

  bool f64(double& v) {
    std::uint32_t lo = 0, hi = 0;
    if (!u32(lo) || !u32(hi)) return false;
    v = std::bit_cast<double>((static_cast<std::uint64_t>(hi) << 32) | lo);
    return true;
  }

  bool bytes(std::size_t n, std::string& s) {
    if (remaining() < n) return false;
    s.assign(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return true;
  }

 private:
  const std::vector<unsigned char>& data_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<unsigned char>& bytes);

}  // namespace ser::binary
