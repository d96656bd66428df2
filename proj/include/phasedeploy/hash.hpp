#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace phasedeploy {

// Incremental FNV-1a (64 bit). Used for fingerprints of checkpoints, specs,
// manifests, and embedded data; not a cryptographic hash.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n);
  Fnv1a& str(std::string_view s);
  Fnv1a& u64(std::uint64_t v) { return bytes(&v, sizeof v); }
  Fnv1a& i64(std::int64_t v) { return bytes(&v, sizeof v); }
  Fnv1a& f64(double v) { return bytes(&v, sizeof v); }
  Fnv1a& doubles(std::span<const double> v) { return bytes(v.data(), v.size_bytes()); }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

std::string hex64(std::uint64_t v);
std::uint64_t hash_string(std::string_view s);

}  // namespace phasedeploy
