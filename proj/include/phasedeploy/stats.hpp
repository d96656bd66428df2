#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace phasedeploy::stats {

double mean(std::span<const double> values);
// n-1 denominator; 0 when fewer than two values.
double sample_std(std::span<const double> values);

// Linear interpolation between order statistics (the common "type 7" rule).
// `sorted` must be ascending and nonempty; q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);

// Sorted means of `resamples` bootstrap resamples of `values`, seeded.
std::vector<double> bootstrap_means(std::span<const double> values, int resamples, std::uint64_t seed);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile interval of resampled means at `level` (e.g. 0.95). Requires
// nonempty values and resamples >= 1000.
Interval bootstrap_ci(std::span<const double> values, int resamples, double level, std::uint64_t seed);

// How exact ties on |mean| are counted in the sign-flip enumeration.
//  kInclusive:    every assignment with |mean_s| >= |observed| counts.
//  kSymmetryOnly: assignments with |mean_s| > |observed| count, plus the
//                 identity and its global flip (which always tie).
enum class TieMode { kInclusive, kSymmetryOnly };
std::string to_string(TieMode mode);

struct PairedTestResult {
  std::string label;
  double mean_diff = 0.0;
  double p_two_sided = 1.0;
  double d_z = 0.0;
  int n = 0;
};

// Exact two-sided sign-flip test over all 2^n assignments, n in [1, 20].
// All-zero diffs give p = 1 and d_z = 0. Throws UsageError outside the range.
PairedTestResult signflip_test(std::span<const double> diffs, TieMode mode = TieMode::kSymmetryOnly,
                               std::string label = {});

// mean / sample std; 0 when the std is 0 or n < 2.
double cohens_dz(std::span<const double> diffs);

struct MethodAggregate {
  std::string method;
  int n = 0;
  double mean = 0.0;
  double std = 0.0;
  Interval ci;
};

MethodAggregate aggregate_method(std::string method, std::span<const double> values, int resamples = 10000,
                                 double level = 0.95, std::uint64_t seed = 0xC1);

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);
// Pearson correlation of average ranks. 0 when either side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace phasedeploy::stats
