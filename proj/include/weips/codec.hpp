#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "weips/error.hpp"

// Little-endian primitive encoding shared by the log record format, the
// checkpoint body format and the wire protocol. Strings and vectors are
// u32-length-prefixed; doubles travel as their IEEE-754 bit pattern.

namespace weips {

static_assert(std::endian::native == std::endian::little,
              "encodings are defined little-endian");

class BinaryWriter {
 public:
  BinaryWriter() = default;

  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }

  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  void f64_vec(std::span<const double> v) {
    u32(static_cast<std::uint32_t>(v.size()));
    raw(v.data(), v.size() * sizeof(double));
  }

  void bytes(const std::uint8_t* data, std::size_t n) { raw(data, n); }

  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }

  std::vector<std::uint8_t> buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() { return read<std::uint16_t>(); }
  std::uint32_t u32() { return read<std::uint32_t>(); }
  std::uint64_t u64() { return read<std::uint64_t>(); }
  std::int64_t i64() { return read<std::int64_t>(); }
  double f64() { return read<double>(); }

  std::string str() {
    std::uint32_t n = u32();
    auto s = take(n);
    return std::string(reinterpret_cast<const char*>(s.data()), s.size());
  }

  std::vector<double> f64_vec() {
    std::uint32_t n = u32();
    auto s = take(static_cast<std::size_t>(n) * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), s.data(), s.size());
    return v;
  }

  // Advance past a length-prefixed field without materializing it.
  void skip_str() { take(u32()); }
  void skip_f64_vec() { take(static_cast<std::size_t>(u32()) * sizeof(double)); }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (pos_ + n > data_.size()) {
      throw Error(ErrorCode::kOutOfRange, "decode past end of buffer");
    }
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  template <typename T>
  T read() {
    auto s = take(sizeof(T));
    T v;
    std::memcpy(&v, s.data(), sizeof(T));
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// FNV-1a, used as the checkpoint content digest.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> data,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace weips
