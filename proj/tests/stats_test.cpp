#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "phasedeploy/error.hpp"
#include "phasedeploy/reference_data.hpp"
#include "phasedeploy/rng.hpp"
#include "phasedeploy/stats.hpp"

using namespace phasedeploy;
using namespace phasedeploy::stats;

namespace {

// Recursive enumeration over integer-valued diffs, so ties are exact.
double oracle_p(const std::vector<long>& d, bool inclusive) {
  long obs = 0;
  for (long x : d) obs += x;
  obs = std::labs(obs);
  long more = 0, equal = 0, total = 0;
  std::function<void(std::size_t, long)> rec = [&](std::size_t i, long s) {
    if (i == d.size()) {
      ++total;
      if (std::labs(s) > obs) ++more;
      if (std::labs(s) == obs) ++equal;
      return;
    }
    rec(i + 1, s + d[i]);
    rec(i + 1, s - d[i]);
  };
  rec(0, 0);
  return static_cast<double>(inclusive ? more + equal : more + 2) / static_cast<double>(total);
}

std::vector<double> diffs_of(const std::string& a, const std::string& b) {
  const auto& ra = reference::row(a).values;
  const auto& rb = reference::row(b).values;
  std::vector<double> d;
  for (std::size_t i = 0; i < ra.size(); ++i) d.push_back(ra[i] - rb[i]);
  return d;
}

std::vector<long> thousandths(const std::vector<double>& d) {
  std::vector<long> out;
  for (double x : d) out.push_back(std::lround(x * 1000));
  return out;
}

}  // namespace

TEST_CASE("moments and quantiles") {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  CHECK(mean(v) == 5.0);
  CHECK(sample_std(v) == doctest::Approx(std::sqrt(32.0 / 7.0)));
  CHECK(sample_std(std::vector<double>{3.0}) == 0.0);
  const std::vector<double> s{1, 2, 3, 4};
  CHECK(quantile_sorted(s, 0.0) == 1.0);
  CHECK(quantile_sorted(s, 1.0) == 4.0);
  CHECK(quantile_sorted(s, 0.5) == 2.5);
  CHECK(quantile_sorted(s, 0.25) == doctest::Approx(1.75));
}

TEST_CASE("bootstrap intervals") {
  const std::vector<double> flat(6, 0.3);
  const auto c = bootstrap_ci(flat, 2000, 0.95, 1);
  CHECK(c.lo == doctest::Approx(0.3));
  CHECK(c.hi == doctest::Approx(0.3));
  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    std::vector<double> v;
    for (int k = 0; k < 8; ++k) v.push_back(rng.uniform());
    const auto ci = bootstrap_ci(v, 1000, 0.95, static_cast<std::uint64_t>(i));
    CHECK(ci.lo <= mean(v));
    CHECK(mean(v) <= ci.hi);
  }
  const std::vector<double> v{0.1, 0.5, 0.9};
  const auto a = bootstrap_means(v, 1000, 5), b = bootstrap_means(v, 1000, 5);
  CHECK(a == b);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK_THROWS_AS(bootstrap_ci(v, 999, 0.95, 1), UsageError);
  CHECK_THROWS_AS(bootstrap_ci(std::vector<double>{}, 1000, 0.95, 1), UsageError);
}

TEST_CASE("sign-flip degenerate cases") {
  const auto z = signflip_test(std::vector<double>{0, 0, 0});
  CHECK(z.p_two_sided == 1.0);
  CHECK(z.d_z == 0.0);
  CHECK(signflip_test(std::vector<double>{0.4}).p_two_sided == 1.0);
  CHECK(signflip_test(std::vector<double>{0.4}, TieMode::kInclusive).p_two_sided == 1.0);
  // All eight positive: only the identity and its flip reach |mean|.
  const std::vector<double> pos{1, 2, 3, 4, 5, 6, 7, 8};
  CHECK(signflip_test(pos).p_two_sided == doctest::Approx(2.0 / 256));
  CHECK_THROWS_AS(signflip_test(std::vector<double>(21, 1.0)), UsageError);
  CHECK_THROWS_AS(signflip_test(std::vector<double>{}), UsageError);
}

TEST_CASE("sign-flip symmetry and scale invariance") {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> d;
    const int n = 1 + static_cast<int>(rng.below(8));
    for (int k = 0; k < n; ++k) d.push_back(rng.uniform(-1, 1));
    auto neg = d, scaled = d;
    for (auto& x : neg) x = -x;
    for (auto& x : scaled) x *= 3.5;
    const auto a = signflip_test(d), b = signflip_test(neg), c = signflip_test(scaled);
    CHECK(a.p_two_sided == b.p_two_sided);
    CHECK(a.d_z == doctest::Approx(-b.d_z));
    CHECK(a.p_two_sided == c.p_two_sided);
    CHECK(a.p_two_sided >= 0.0);
    CHECK(a.p_two_sided <= 1.0);
  }
}

TEST_CASE("sign-flip agrees with a recursive enumeration") {
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    const int n = 1 + static_cast<int>(rng.below(8));
    std::vector<long> ints;
    std::vector<double> d;
    for (int k = 0; k < n; ++k) {
      const long v = static_cast<long>(rng.below(11)) - 5;  // small range forces ties
      ints.push_back(v);
      d.push_back(static_cast<double>(v) / 1000.0);
    }
    if (std::all_of(ints.begin(), ints.end(), [](long v) { return v == 0; })) continue;
    CHECK(signflip_test(d, TieMode::kInclusive).p_two_sided == doctest::Approx(oracle_p(ints, true)));
    CHECK(signflip_test(d, TieMode::kSymmetryOnly).p_two_sided ==
          doctest::Approx(std::min(1.0, oracle_p(ints, false))));
  }
}

TEST_CASE("cohens d_z") {
  const std::vector<double> d{1, 2, 3};
  CHECK(cohens_dz(d) == doctest::Approx(2.0));
  CHECK(cohens_dz(std::vector<double>{2, 2}) == 0.0);
  CHECK(cohens_dz(std::vector<double>{2}) == 0.0);
}

TEST_CASE("average ranks and spearman") {
  CHECK(average_ranks(std::vector<double>{10, 30, 20, 20}) == std::vector<double>{1, 4, 2.5, 2.5});
  const std::vector<double> a{1, 2, 3, 4}, b{4, 3, 2, 1}, c{7, 7, 7, 7};
  CHECK(spearman(a, a) == doctest::Approx(1.0));
  CHECK(spearman(a, b) == doctest::Approx(-1.0));
  CHECK(spearman(a, c) == 0.0);
}

TEST_CASE("single-row aggregate") {
  const auto m = aggregate_method("x", std::vector<double>{0.42});
  CHECK(m.n == 1);
  CHECK(m.std == 0.0);
  CHECK(m.ci.lo == 0.42);
  CHECK(m.ci.hi == 0.42);
  CHECK_THROWS_AS(aggregate_method("x", std::vector<double>{}), UsageError);
}

TEST_CASE("published aggregates from the embedded per-seed data") {
  for (const auto& pub : reference::aggregates()) {
    const auto& vals = reference::row(pub.method).values;
    const auto agg = aggregate_method(pub.method, vals);
    CHECK_MESSAGE(std::abs(agg.mean - pub.mean) <= reference::kMeanStdTol, pub.method);
    CHECK_MESSAGE(std::abs(agg.std - pub.std) <= reference::kMeanStdTol, pub.method);
    CHECK_MESSAGE(std::abs(agg.ci.lo - pub.ci_lo) <= reference::kCiTol, pub.method);
    CHECK_MESSAGE(std::abs(agg.ci.hi - pub.ci_hi) <= reference::kCiTol, pub.method);
  }
}

TEST_CASE("published paired tests from the embedded per-seed data") {
  for (const auto& pub : reference::paired_tests()) {
    const auto d = diffs_of(pub.treatment, pub.control);
    const auto r = signflip_test(d);
    CHECK_MESSAGE(std::abs(r.mean_diff - pub.mean_diff) <= reference::kDiffTol, pub.label);
    CHECK_MESSAGE(std::abs(r.p_two_sided - pub.p) <= reference::kPTol, pub.label);
    CHECK_MESSAGE(std::abs(r.d_z - pub.d_z) <= reference::kDzTol, pub.label);
    CHECK(r.n == 8);
    // The enumeration over exact thousandths gives the same p.
    CHECK(r.p_two_sided == doctest::Approx(oracle_p(thousandths(d), false)));
  }
}
