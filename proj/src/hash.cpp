#include "phasedeploy/hash.hpp"

#include <cstdio>

namespace phasedeploy {

Fnv1a& Fnv1a::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h_ ^= p[i];
    h_ *= 0x100000001B3ULL;
  }
  return *this;
}

Fnv1a& Fnv1a::str(std::string_view s) {
  u64(s.size());
  return bytes(s.data(), s.size());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t hash_string(std::string_view s) { return Fnv1a().bytes(s.data(), s.size()).value(); }

}  // namespace phasedeploy
