#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace critic {

// FNV-1a 64 over a canonical byte stream. Used to fingerprint fitted models so
// that cross-critic comparisons can be rejected.
class Fingerprint {
 public:
  Fingerprint& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ull;
    }
    return *this;
  }
  Fingerprint& add(std::uint64_t v) { return bytes(&v, sizeof v); }
  Fingerprint& add(std::int64_t v) { return bytes(&v, sizeof v); }
  Fingerprint& add(int v) { return add(static_cast<std::int64_t>(v)); }
  Fingerprint& add(bool v) { return add(static_cast<std::int64_t>(v ? 1 : 0)); }
  Fingerprint& add(double v) { return add(std::bit_cast<std::uint64_t>(v)); }
  Fingerprint& add(const std::string& s) {
    add(static_cast<std::uint64_t>(s.size()));
    return bytes(s.data(), s.size());
  }
  template <typename T>
  Fingerprint& add(const std::vector<T>& v) {
    add(static_cast<std::uint64_t>(v.size()));
    for (const auto& x : v) add(x);
    return *this;
  }

  std::uint64_t value() const { return h_; }
  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t v = h_;
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = digits[v & 0xf];
      v >>= 4;
    }
    return out;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

}  // namespace critic
