#pragma once

#include <cstdint>
#include <limits>

namespace phasedeploy {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Derives a child stream key from a parent key and a tag. Distinct tags give
// independent streams; the parent stream is not advanced.
constexpr std::uint64_t derive_stream(std::uint64_t key, std::uint64_t tag) {
  return mix64(key ^ mix64(tag ^ 0xD1B54A32D192ED03ULL));
}

struct StreamState {
  std::uint64_t key = 0;
  std::uint64_t counter = 0;
  friend bool operator==(const StreamState&, const StreamState&) = default;
};

// Counter-based generator: the n-th draw of a stream is a pure function of
// (key, n), so a stream can be saved, restored, and split without state
// beyond two integers. Distributions are implemented here rather than taken
// from <random> so draws are identical across standard libraries.
class Rng {
 public:
  using result_type = std::uint64_t;

  Rng() = default;
  explicit Rng(std::uint64_t key) : state_{key, 0} {}
  explicit Rng(StreamState state) : state_(state) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next_u64(); }
  std::uint64_t next_u64() { return mix64(state_.key ^ mix64(state_.counter++)); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();

  Rng split(std::uint64_t tag) const { return Rng(derive_stream(state_.key, tag)); }

  const StreamState& state() const { return state_; }

 private:
  StreamState state_;
};

}  // namespace phasedeploy
