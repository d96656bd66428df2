#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "phasedeploy/error.hpp"
#include "phasedeploy/verification.hpp"

using namespace phasedeploy;
using namespace phasedeploy::verification;

namespace {

rl::ActorCritic tiny_learner() {
  auto spec = env::EnvSpec::defaults(env::TaskName::kKeyDoorSparse);
  spec.grid_size = 5;
  spec.horizon = 20;
  rl::LearnerConfig c;
  c.hidden = {8};
  c.episodes_per_update = 2;
  c.epochs = 1;
  c.minibatches = 1;
  return rl::ActorCritic(env::Env(spec), c);
}

std::vector<ForkResult> synthetic(const std::vector<std::vector<double>>& J, std::int64_t t = 10, int L = 5) {
  std::vector<ForkResult> out;
  for (std::size_t r = 0; r < J.size(); ++r) {
    for (std::size_t k = 0; k < J[r].size(); ++k) {
      ForkResult f;
      f.t = t;
      f.horizon = L;
      f.candidate_id = std::string("c") + static_cast<char>('a' + k);
      f.repeat = static_cast<int>(r);
      f.J = J[r][k];
      out.push_back(f);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("winner and margin") {
  std::vector<CandidateScore> s{{"a", 0.5}, {"b", 0.3}, {"c", 0.2}};
  auto w = winner_and_margin(s);
  CHECK(w.winner == "a");
  CHECK(w.margin == doctest::Approx(0.2));
  std::vector<CandidateScore> tie{{"b", 0.4}, {"a", 0.4}};
  w = winner_and_margin(tie);
  CHECK(w.winner == "a");
  CHECK(w.margin == 0.0);
  std::vector<CandidateScore> one{{"a", 0.4}};
  CHECK_THROWS_AS(winner_and_margin(one), UsageError);
}

TEST_CASE("verdict agreement and entropy") {
  VerificationConfig cfg;
  auto all = aggregate_verdict(synthetic({{0.9, 0.1}, {0.8, 0.2}, {0.7, 0.3}, {0.9, 0.0}}), cfg);
  CHECK(all.rel == 1.0);
  CHECK(all.entropy == 0.0);
  CHECK(all.modal_winner == "ca");
  CHECK(all.informative);
  CHECK(all.margin_mean == doctest::Approx((0.8 + 0.6 + 0.4 + 0.9) / 4));
  auto split = aggregate_verdict(synthetic({{0.9, 0.1}, {0.1, 0.9}, {0.6, 0.3}, {0.2, 0.3}}), cfg);
  CHECK(split.rel == 0.5);
  CHECK(split.entropy == doctest::Approx(std::log(2.0)));
  CHECK(split.modal_winner == "ca");
  CHECK_FALSE(split.informative);
  REQUIRE(split.repeat_winners.size() == 4);
  CHECK(split.repeat_winners[1] == "cb");
  REQUIRE(split.mean_scores.size() == 2);
  CHECK(split.mean_scores[0].mean == doctest::Approx(0.45));
}

TEST_CASE("grid rows with full agreement and with a hair-thin margin") {
  VerificationConfig cfg;
  // Per-repeat margins averaging 0.09161, one winner throughout.
  auto strong = aggregate_verdict(
      synthetic({{0.60, 0.51839, 0.2}, {0.55, 0.44839, 0.3}, {0.70, 0.60839, 0.1}, {0.65, 0.55839, 0.4}}), cfg);
  CHECK(strong.rel == 1.0);
  CHECK(strong.margin_mean == doctest::Approx(0.09161).epsilon(1e-9));
  CHECK(strong.informative);
  // Three of four repeats agree, margins of a few 1e-4.
  auto thin = aggregate_verdict(
      synthetic({{0.5002, 0.5}, {0.5001, 0.5}, {0.5, 0.5002}, {0.5006, 0.5}}), cfg);
  CHECK(thin.rel == 0.75);
  CHECK(thin.margin_mean == doctest::Approx(0.000175).epsilon(1e-9));
  CHECK(thin.margin_lcb95 <= 0.01);
  CHECK_FALSE(thin.informative);
}

TEST_CASE("aggregate_verdict input checks") {
  VerificationConfig cfg;
  CHECK_THROWS_AS(aggregate_verdict(std::vector<ForkResult>{}, cfg), UsageError);
  auto mixed = synthetic({{0.1, 0.2}});
  auto other = synthetic({{0.1, 0.2}}, 20);
  mixed.insert(mixed.end(), other.begin(), other.end());
  CHECK_THROWS_AS(aggregate_verdict(mixed, cfg), UsageError);
  auto hole = synthetic({{0.1, 0.2}, {0.3, 0.4}});
  hole.pop_back();
  CHECK_THROWS_AS(aggregate_verdict(hole, cfg), UsageError);
}

TEST_CASE("1000 random verdicts respect the informativeness rule") {
  Rng rng(123);
  VerificationConfig cfg;
  int informative = 0;
  for (int i = 0; i < 1000; ++i) {
    const int K = 2 + static_cast<int>(rng.below(3));
    const int R = 2 + static_cast<int>(rng.below(5));
    std::vector<std::vector<double>> J(static_cast<std::size_t>(R), std::vector<double>(static_cast<std::size_t>(K)));
    const double bias = rng.uniform(0.0, 0.4);
    for (auto& row : J) {
      for (std::size_t k = 0; k < row.size(); ++k) {
        const double coarse = std::floor(rng.uniform(0, 1) * 8) / 8;  // ties happen
        row[k] = std::min(1.0, coarse * 0.6 + (k == 0 ? bias : 0.0));
      }
    }
    const auto v = aggregate_verdict(synthetic(J, i, 3), cfg);
    if (v.informative) {
      ++informative;
      CHECK(v.rel >= 0.75);
      CHECK(v.margin_lcb95 > 0.01);
    }
    CHECK((v.entropy == 0.0) == (v.rel == 1.0));
    CHECK(v.margin_lcb95 <= v.margin_mean);
    CHECK(v.entropy >= 0.0);
    // Strictly increasing transform of every score leaves the winner alone.
    auto T = J;
    for (auto& row : T) {
      for (double& x : row) x = std::exp(3 * x) + x * x * x;
    }
    CHECK(aggregate_verdict(synthetic(T, i, 3), cfg).modal_winner == v.modal_winner);
  }
  CHECK(informative > 50);
  CHECK(informative < 950);
}

TEST_CASE("forced disagreement is never informative") {
  VerificationConfig cfg;
  for (int R = 2; R <= 8; ++R) {
    std::vector<std::vector<double>> J;
    for (int r = 0; r < R; ++r) J.push_back(r % 2 == 0 ? std::vector<double>{1.0, 0.0} : std::vector<double>{0.0, 1.0});
    CHECK_FALSE(aggregate_verdict(synthetic(J), cfg).informative);
  }
  // A single repeat never carries an informativeness claim.
  CHECK_FALSE(aggregate_verdict(synthetic({{1.0, 0.0}}), cfg).informative);
}

TEST_CASE("verification config") {
  VerificationConfig c;
  CHECK(c.repeats == 4);
  CHECK(c.rel_min == 0.75);
  CHECK(c.margin_min == 0.01);
  CHECK(c.bootstrap_resamples == 10000);
  c.validate();
  c.repeats = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  VerificationConfig d;
  d.horizons = {};
  CHECK_THROWS_AS(d.validate(), ConfigError);
  CHECK(verification_cost(4, 3, 4, 100) == 4800);
  CHECK(verification_cost(4, 3, 1, 100) == 1200);
}

TEST_CASE("fork_verify counts, isolation and determinism") {
  const auto L = tiny_learner();
  const auto fam = rewards::builtin_family(L.env());
  rewards::ScheduledReward r(fam[0]);
  const auto ck = L.train(L.init(3), r, 2);
  const auto fp = ck.fingerprint();
  const rl::EvalSpec eval{8, 5, false};
  const auto a = fork_verify(L, ck, fam, 2, 4, eval);
  CHECK(a.size() == 12);
  CHECK(ck.fingerprint() == fp);
  for (std::size_t i = 1; i < a.size(); ++i) {
    const bool ordered = a[i - 1].candidate_id < a[i].candidate_id ||
                         (a[i - 1].candidate_id == a[i].candidate_id && a[i - 1].repeat < a[i].repeat);
    CHECK(ordered);
  }
  std::int64_t steps = 0;
  for (const auto& f : a) {
    CHECK(f.J >= 0.0);
    CHECK(f.J <= 1.0);
    CHECK(f.t == 2);
    CHECK_FALSE(f.diverged);
    CHECK(f.wallclock_s == 0.0);
    steps += f.executed_steps;
  }
  CHECK(steps == 3 * 4 * 2);
  ForkOptions threaded;
  threaded.threads = 3;
  const auto b = fork_verify(L, ck, fam, 2, 4, eval, threaded);
  REQUIRE(b.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].J == b[i].J);
    CHECK(a[i].candidate_id == b[i].candidate_id);
  }
}

TEST_CASE("duplicated candidate under two ids scores identically with common streams") {
  const auto L = tiny_learner();
  const auto fam = rewards::builtin_family(L.env());
  const std::vector<rewards::RewardHypothesis> dup{fam[0].with_id("x1"), fam[0].with_id("x2")};
  const auto ck = L.init(9);
  const auto res = fork_verify(L, ck, dup, 3, 1, rl::EvalSpec{16, 5, false});
  REQUIRE(res.size() == 2);
  CHECK(res[0].J == res[1].J);
  CHECK(fork_tag("x1", 0, StreamMode::kCommon) == fork_tag("x2", 0, StreamMode::kCommon));
  CHECK(fork_tag("x1", 0, StreamMode::kPerCandidate) != fork_tag("x2", 0, StreamMode::kPerCandidate));
  CHECK(fork_tag("x1", 0, StreamMode::kCommon) != fork_tag("x1", 1, StreamMode::kCommon));
}

TEST_CASE("phase profile counting and cost audit") {
  const auto L = tiny_learner();
  const auto fam = rewards::builtin_family(L.env());
  const std::vector<std::int64_t> T{0, 2, 4, 6};
  const auto cks = train_probe(L, 1, fam[0], T);
  CHECK(cks.size() == 4);
  CHECK(cks.at(4).step == 4);
  VerificationConfig cfg;
  cfg.horizons = {1, 2, 3, 4};
  cfg.repeats = 2;
  cfg.bootstrap_resamples = 1000;
  const auto run = build_phase_profile(L, cks, T, fam, cfg, rl::EvalSpec{4, 5, false});
  CHECK(run.profile.verdicts.size() == 16);
  CHECK(run.forks.size() == 16 * 3 * 2);
  std::int64_t expected = 0;
  for (int h : cfg.horizons) expected += verification_cost(4, 3, 2, h);
  CHECK(run.profile.executed_steps == expected);
  CHECK(run.profile.find(2, 3) != nullptr);
  CHECK(run.profile.find(3, 3) == nullptr);
  CHECK(run.profile.at_horizon(2).size() == 4);
  CHECK(run.profile.roster == std::vector<std::string>{"kd_early_dense", "kd_late_alt", "kd_late_oracle"});
  CHECK_THROWS_AS(first_informative(run.profile, 7), UsageError);
  const auto again = build_phase_profile(L, cks, T, fam, cfg, rl::EvalSpec{4, 5, false});
  CHECK(again.profile.fingerprint() == run.profile.fingerprint());

  const std::vector<std::int64_t> missing{0, 3, 5};
  try {
    build_phase_profile(L, cks, missing, fam, cfg, rl::EvalSpec{4, 5, false});
    FAIL("accepted");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('3') != std::string::npos);
    CHECK(msg.find('5') != std::string::npos);
  }
  CHECK_THROWS_AS(build_phase_profile(L, cks, T, std::vector<rewards::RewardHypothesis>{}, cfg, rl::EvalSpec{}),
                  UsageError);
}

TEST_CASE("first informative checkpoint") {
  PhaseProfile p;
  p.config.horizons = {5};
  p.checkpoints = {0, 500, 1000, 1500};
  for (auto t : p.checkpoints) {
    CheckpointVerdict v;
    v.t = t;
    v.horizon = 5;
    p.verdicts.push_back(v);
  }
  CHECK_FALSE(first_informative(p, 5).has_value());
  p.verdicts[2].informative = true;
  p.verdicts[3].informative = true;
  CHECK(first_informative(p, 5) == 1000);
}
