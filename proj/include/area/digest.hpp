#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

#include "area/linalg.hpp"

namespace area {

// 64-bit FNV-1a over a little-endian byte stream. Multi-byte values are fed
// least-significant byte first regardless of host order.
class Fnv1a64 {
 public:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

  void byte(std::uint8_t b) noexcept {
    h_ ^= b;
    h_ *= kPrime;
  }
  void bytes(std::span<const std::uint8_t> data) noexcept {
    for (auto b : data) byte(b);
  }
  void u32(std::uint32_t x) noexcept {
    for (int i = 0; i < 4; ++i) byte(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  void u64(std::uint64_t x) noexcept {
    for (int i = 0; i < 8; ++i) byte(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  void f64(double x) noexcept { u64(std::bit_cast<std::uint64_t>(x)); }
  void vec(const Vec& v) noexcept {
    for (double x : v) f64(x);
  }
  void mat(const Mat& m) noexcept {
    for (double x : m.values()) f64(x);
  }
  void text(std::string_view s) noexcept {
    for (char c : s) byte(static_cast<std::uint8_t>(c));
  }

  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = kOffset;
};

inline std::string hex_digest(std::uint64_t d) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

}  // namespace area
