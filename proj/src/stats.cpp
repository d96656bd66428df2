#include "phasedeploy/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phasedeploy/error.hpp"
#include "phasedeploy/rng.hpp"

namespace phasedeploy::stats {

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw UsageError("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> bootstrap_means(std::span<const double> values, int resamples, std::uint64_t seed) {
  if (values.empty()) throw UsageError("bootstrap of an empty sample");
  if (resamples < 1) throw UsageError("bootstrap needs at least one resample");
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  const std::size_t n = values.size();
  for (double& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[rng.below(n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  return means;
}

Interval bootstrap_ci(std::span<const double> values, int resamples, double level, std::uint64_t seed) {
  if (resamples < 1000) throw UsageError("bootstrap_ci needs at least 1000 resamples");
  if (!(level > 0.0 && level < 1.0)) throw UsageError("bootstrap_ci level must be in (0, 1)");
  const std::vector<double> means = bootstrap_means(values, resamples, seed);
  const double tail = (1.0 - level) / 2.0;
  return {quantile_sorted(means, tail), quantile_sorted(means, 1.0 - tail)};
}

std::string to_string(TieMode mode) { return mode == TieMode::kInclusive ? "inclusive" : "symmetry_only"; }

double cohens_dz(std::span<const double> diffs) {
  const double sd = sample_std(diffs);
  if (diffs.size() < 2 || sd == 0.0) return 0.0;
  return mean(diffs) / sd;
}

PairedTestResult signflip_test(std::span<const double> diffs, TieMode mode, std::string label) {
  const std::size_t n = diffs.size();
  if (n < 1) throw UsageError("signflip_test needs at least one paired difference");
  if (n > 20) throw UsageError("signflip_test enumerates at most 20 pairs; use a Monte Carlo test for n = " +
                               std::to_string(n));
  PairedTestResult out;
  out.label = std::move(label);
  out.n = static_cast<int>(n);
  out.mean_diff = mean(diffs);
  out.d_z = cohens_dz(diffs);
  if (std::all_of(diffs.begin(), diffs.end(), [](double d) { return d == 0.0; })) {
    out.p_two_sided = 1.0;
    return out;
  }
  // Compare sums rather than means; a relative slack absorbs the rounding of
  // reordered additions so that mathematically equal sums tie.
  double observed = 0.0, scale = 0.0;
  for (double d : diffs) {
    observed += d;
    scale += std::abs(d);
  }
  observed = std::abs(observed);
  const double slack = 1e-12 * scale;
  const std::uint32_t total = 1u << n;
  std::uint64_t extreme = 0, ties = 0;
  for (std::uint32_t mask = 0; mask < total; ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (mask >> i & 1u) ? -diffs[i] : diffs[i];
    const double a = std::abs(s);
    if (a > observed + slack) {
      ++extreme;
    } else if (a >= observed - slack) {
      ++ties;
    }
  }
  const std::uint64_t counted = mode == TieMode::kInclusive ? extreme + ties : extreme + 2;
  out.p_two_sided = std::min(1.0, static_cast<double>(counted) / static_cast<double>(total));
  return out;
}

MethodAggregate aggregate_method(std::string method, std::span<const double> values, int resamples, double level,
                                 std::uint64_t seed) {
  if (values.empty()) throw UsageError("aggregate_method: method '" + method + "' has no rows");
  MethodAggregate out;
  out.method = std::move(method);
  out.n = static_cast<int>(values.size());
  out.mean = mean(values);
  out.std = sample_std(values);
  if (values.size() == 1) {
    out.ci = {values[0], values[0]};
  } else {
    out.ci = bootstrap_ci(values, resamples, level, seed);
  }
  return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("spearman: samples differ in length");
  const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
  const double ma = mean(ra), mb = mean(rb);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace phasedeploy::stats
