#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "defog/errors.hpp"

namespace defog::io {

// 64-bit FNV-1a, updated incrementally.
class Fnv64 {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
    return out;
  }
}

// Writes to a stream while hashing everything written.
class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void bytes(const void* data, std::size_t n) {
    os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    hash_.update(data, n);
  }
  void u64(std::uint64_t v) {
    v = to_little(v);
    bytes(&v, sizeof v);
  }
  void floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size_bytes());
    } else {
      for (float f : values) {
        auto u = to_little(std::bit_cast<std::uint32_t>(f));
        bytes(&u, sizeof u);
      }
    }
  }
  std::uint64_t hash() const { return hash_.value(); }

 private:
  std::ostream& os_;
  Fnv64 hash_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

  void bytes(void* data, std::size_t n) {
    is_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw DataError(source_ + ": truncated file (wanted " + std::to_string(n) +
                      " more bytes at offset " + std::to_string(offset_) + ")");
    }
    offset_ += n;
    hash_.update(data, n);
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return to_little(v);
  }
  void floats(std::span<float> out) {
    bytes(out.data(), out.size_bytes());
    if constexpr (std::endian::native != std::endian::little) {
      for (float& f : out) f = std::bit_cast<float>(to_little(std::bit_cast<std::uint32_t>(f)));
    }
  }
  std::string string(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::uint64_t hash() const { return hash_.value(); }
  std::uint64_t offset() const { return offset_; }
  const std::string& source() const { return source_; }

 private:
  std::istream& is_;
  std::string source_;
  Fnv64 hash_;
  std::uint64_t offset_ = 0;
};

}  // namespace defog::io
