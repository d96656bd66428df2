#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace phasedeploy::reference {

// Published per-seed consec_max values for the five locked manipulation
// methods, with the aggregates and paired tests reported alongside them.
// Read-only; checksum() is pinned by kChecksum.
inline constexpr std::array<int, 8> kSeeds{42, 123, 456, 789, 999, 1234, 2025, 3031};

struct MethodRow {
  std::string method;
  std::array<double, 8> values;
};

struct PublishedAggregate {
  std::string method;
  double mean;
  double std;
  double ci_lo;
  double ci_hi;
};

struct PublishedPaired {
  std::string label;
  std::string treatment;
  std::string control;
  double mean_diff;
  double p;
  double d_z;
};

const std::vector<MethodRow>& per_seed();
const std::vector<PublishedAggregate>& aggregates();
const std::vector<PublishedPaired>& paired_tests();
const MethodRow& row(const std::string& method);

// FNV-1a over every embedded number and label, in declaration order.
std::uint64_t checksum();
extern const std::uint64_t kChecksum;

// Tolerances used when checking recomputed statistics against the published ones.
inline constexpr double kMeanStdTol = 5e-4;
inline constexpr double kDiffTol = 1e-3;
inline constexpr double kPTol = 4e-3;
inline constexpr double kDzTol = 5e-3;
inline constexpr double kCiTol = 0.03;

}  // namespace phasedeploy::reference
