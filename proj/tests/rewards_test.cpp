#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "phasedeploy/env.hpp"
#include "phasedeploy/error.hpp"
#include "phasedeploy/rewards.hpp"

using namespace phasedeploy;
using namespace phasedeploy::rewards;

namespace {

env::Env kd() { return env::Env(env::EnvSpec::defaults(env::TaskName::kKeyDoorSparse)); }
env::Env lb() { return env::Env(env::EnvSpec::defaults(env::TaskName::kLineBalanceDense)); }

env::Transition with_features(std::initializer_list<double> f) {
  env::Transition t;
  t.features = env::SmallVec(f);
  return t;
}

// A hypothesis that is identically zero, for isolating the shaping term.
RewardHypothesis zero_reward() {
  const std::vector<std::string> none;
  return RewardHypothesis("zero", RewardSource::kDslLoaded, RewardExpr::parse("0", std::span<const std::string>(none)));
}

}  // namespace

TEST_CASE("builtin families") {
  for (const auto& e : {kd(), lb()}) {
    const auto fam = builtin_family(e);
    REQUIRE(fam.size() == 3);
    CHECK(fam[0].id() != fam[1].id());
    CHECK(fam[1].id() != fam[2].id());
    CHECK(fam[0].id() != fam[2].id());
    for (const auto& h : fam) CHECK(h.source() == RewardSource::kStructuredBuiltin);
  }
  const auto fam = builtin_family(kd());
  CHECK(fam[kEarlyRole].id() == "kd_early_dense");
  CHECK(fam[kOracleRole].id() == "kd_late_oracle");
  CHECK(fam[kAltRole].id() == "kd_late_alt");
  // dist_key, dist_door, has_key, door_open, success
  CHECK(fam[kOracleRole].base(with_features({-0.2, -0.1, 1, 0, 0})) == 0.0);
  CHECK(fam[kOracleRole].base(with_features({-0.2, 0, 1, 1, 1})) == 1.0);
}

TEST_CASE("early key_door reward climbs along the scripted approach to the key") {
  const auto e = kd();
  const auto early = builtin_family(e)[kEarlyRole];
  const auto trace = env::rollout(e, 3, [&](const env::EnvState& s) { return e.scripted_action(s); });
  const auto hk = *e.feature_index("has_key");
  double prev = -1e9;
  int steps = 0;
  for (const auto& t : trace.transitions) {
    if (t.features[hk] > 0.5) break;
    const double r = early.base(t);
    CHECK(r > prev);
    prev = r;
    ++steps;
  }
  CHECK(steps >= 3);
}

TEST_CASE("key_door early reward keeps rising after the pickup") {
  const auto e = kd();
  const auto early = builtin_family(e)[kEarlyRole];
  const auto trace = env::rollout(e, 5, [&](const env::EnvState& s) { return e.scripted_action(s); });
  double prev = -1e9;
  for (const auto& t : trace.transitions) {
    const double r = early.base(t);
    CHECK(r > prev);
    prev = r;
    if (t.features[4] > 0.5) break;
  }
}

TEST_CASE("shaping telescopes over whole episodes on both tasks") {
  int episodes = 0;
  for (const auto& e : {kd(), lb()}) {
    const double gamma = e.spec().gamma;
    for (int k = 0; k < 50; ++k) {
      Rng rng(derive_stream(17, static_cast<std::uint64_t>(k)));
      auto critic = nn::Mlp::initialized({static_cast<int>(e.obs_dim()), 8, 1}, rng, 1.0);
      for (auto& p : critic.params()) p += rng.uniform(-0.5, 0.5);
      auto shaped = pbrs_wrap(zero_reward(), critic, gamma);
      const auto trace = env::rollout(e, rng.next_u64(), [&](const env::EnvState&) {
        return static_cast<int>(rng.below(static_cast<std::uint64_t>(e.spec().action_count)));
      });
      double sum = 0.0, disc = 1.0;
      for (const auto& t : trace.transitions) {
        sum += disc * shaped.eval(t, 0);
        disc *= gamma;
      }
      auto phi = [&](const env::SmallVec& obs) {
        double v = 0.0;
        critic.forward(obs.span(), {&v, 1});
        return v;
      };
      const double expected = disc * phi(trace.transitions.back().next_obs) - phi(trace.transitions.front().obs);
      CHECK(std::abs(sum - expected) <= 1e-9);
      ++episodes;
    }
  }
  CHECK(episodes == 100);
}

TEST_CASE("greedy policy of a tabular chain is unchanged by potential shaping") {
  // Six-state ring, two actions (stay-ish / advance), deterministic.
  const int n = 6;
  const double gamma = 0.9;
  auto next = [&](int s, int a) { return a == 0 ? s : (s + 1) % n; };
  const double base_r[6][2] = {{0.1, 0.0}, {0.0, 0.3}, {0.5, 0.2}, {0.0, 0.05}, {0.2, 0.9}, {0.0, 0.4}};
  auto critic = std::make_shared<nn::Mlp>(std::vector<int>{n, 1});
  const double phi[6] = {3.0, -1.5, 0.25, 7.0, -4.0, 1.0};
  for (int s = 0; s < n; ++s) critic->params()[static_cast<std::size_t>(s)] = phi[s];
  Potential pot{critic, gamma};
  auto shaped_h = zero_reward().with_shaping(pot);
  auto onehot = [&](int s) {
    env::SmallVec v;
    v = env::SmallVec{0, 0, 0, 0, 0, 0};
    v[static_cast<std::size_t>(s)] = 1.0;
    return v;
  };
  auto solve = [&](bool shaped) {
    std::vector<std::array<double, 2>> q(n, {0.0, 0.0});
    for (int it = 0; it < 3000; ++it) {
      auto nq = q;
      for (int s = 0; s < n; ++s) {
        for (int a = 0; a < 2; ++a) {
          const int s2 = next(s, a);
          double r = base_r[s][a];
          if (shaped) {
            env::Transition t;
            t.obs = onehot(s);
            t.next_obs = onehot(s2);
            r += shaped_h.eval(t, 0);
          }
          nq[s][a] = r + gamma * std::max(q[s2][0], q[s2][1]);
        }
      }
      q = nq;
    }
    return q;
  };
  const auto q = solve(false);
  const auto qs = solve(true);
  for (int s = 0; s < n; ++s) {
    const int g = q[s][1] > q[s][0] ? 1 : 0;
    const int gs = qs[s][1] > qs[s][0] ? 1 : 0;
    CHECK(g == gs);
    for (int a = 0; a < 2; ++a) CHECK(qs[s][a] == doctest::Approx(q[s][a] - phi[s]).epsilon(1e-9));
  }
}

TEST_CASE("pbrs with a zero or constant potential") {
  const auto e = kd();
  const auto oracle = builtin_family(e)[kOracleRole];
  nn::Mlp zero({static_cast<int>(e.obs_dim()), 1});
  auto shaped = pbrs_wrap(oracle, zero, 0.99);
  const auto trace = env::rollout(e, 9, [&](const env::EnvState& s) { return e.scripted_action(s); });
  auto base = oracle;
  for (const auto& t : trace.transitions) CHECK(shaped.eval(t, 0) == base.eval(t, 0));
  nn::Mlp constant({static_cast<int>(e.obs_dim()), 1});
  constant.params().back() = 2.5;
  auto c = pbrs_wrap(zero_reward(), constant, 0.9);
  CHECK(c.eval(trace.transitions[0], 0) == doctest::Approx((0.9 - 1.0) * 2.5));
  CHECK_THROWS_AS(pbrs_wrap(oracle, zero, 1.0), UsageError);
}

TEST_CASE("pbrs snapshot is frozen at wrap time") {
  const auto e = kd();
  Rng rng(4);
  auto critic = nn::Mlp::initialized({static_cast<int>(e.obs_dim()), 4, 1}, rng, 1.0);
  auto shaped = pbrs_wrap(zero_reward(), critic, 0.99);
  const auto trace = env::rollout(e, 2, [&](const env::EnvState& s) { return e.scripted_action(s); });
  const double before = shaped.eval(trace.transitions[0], 0);
  for (auto& p : critic.params()) p = 0.0;
  CHECK(shaped.eval(trace.transitions[0], 0) == before);
}

TEST_CASE("running_norm trace") {
  auto h = apply_scale(builtin_family(lb())[kOracleRole], ScaleMode::kRunningNorm);
  ScaleTransform t = h.transform();
  CHECK(t.apply(1.0) == 0.0);
  for (int i = 0; i < 10; ++i) CHECK(t.apply(1.0) == 0.0);
  ScaleTransform u;
  u.mode = ScaleMode::kRunningNorm;
  CHECK(u.apply(1.0) == 0.0);
  // After {1,2}: mean 1.5, sample std sqrt(0.5).
  CHECK(u.apply(2.0) == doctest::Approx(0.5 / (std::sqrt(0.5) + 1e-8)));
  // After {1,2,3}: mean 2, sample std 1.
  CHECK(u.apply(3.0) == doctest::Approx(1.0 / (1.0 + 1e-8)));
  CHECK(u.count == 3);
}

TEST_CASE("running_norm advances once per evaluation") {
  const auto e = lb();
  auto h = apply_scale(builtin_family(e)[kOracleRole], ScaleMode::kRunningNorm);
  const auto trace = env::rollout(e, 1, [&](const env::EnvState& s) { return e.scripted_action(s); });
  for (int i = 0; i < 7; ++i) h.eval(trace.transitions[static_cast<std::size_t>(i)], i);
  CHECK(h.transform().count == 7);
  CHECK(h.id() == "bb_pos_speed@running_norm");
}

TEST_CASE("identity and matched scaling") {
  const auto e = kd();
  const auto early = builtin_family(e)[kEarlyRole];
  const auto trace = calibration_trace(e, early, 20, 0xCA1);
  auto id = apply_scale(early, ScaleMode::kIdentity, trace);
  const auto ep = env::rollout(e, 8, [&](const env::EnvState& s) { return e.scripted_action(s); });
  for (const auto& t : ep.transitions) {
    auto copy = early;
    CHECK(id.eval(t, 0) == copy.eval(t, 0));
  }
  CHECK(id.id() == early.id());
  auto m = apply_scale(early, ScaleMode::kMatched, trace, 0.0, 1.0);
  std::vector<double> mapped;
  for (double v : trace) {
    ScaleTransform tr = m.transform();
    mapped.push_back(tr.apply(v));
  }
  const auto [mu, sd] = trace_stats(mapped);
  CHECK(std::abs(mu) <= 1e-9);
  CHECK(std::abs(sd - 1.0) <= 1e-9);
  // Affine: the midpoint maps to the midpoint.
  ScaleTransform tr = m.transform();
  const double a = tr.apply(0.2), b = tr.apply(0.6), c = tr.apply(0.4);
  CHECK(c == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));
  CHECK_THROWS_AS(apply_scale(early, ScaleMode::kMatched, trace, 0.0, 0.0), ConfigError);
  const std::vector<double> flat(10, 2.0);
  CHECK_THROWS_AS(apply_scale(early, ScaleMode::kMatched, flat, 0.0, 1.0), ConfigError);
}

TEST_CASE("calibration traces are reproducible") {
  const auto e = lb();
  const auto h = builtin_family(e)[kEarlyRole];
  CHECK(calibration_trace(e, h, 5, 1) == calibration_trace(e, h, 5, 1));
  CHECK(calibration_trace(e, h, 5, 1) != calibration_trace(e, h, 5, 2));
  CHECK(calibration_trace(e, h, 5, 1).size() == 5u * 100u);
}

TEST_CASE("schedules") {
  const auto e = kd();
  const auto fam = builtin_family(e);
  const auto t_succ = with_features({0, 0, 1, 1, 1});
  ScheduledReward single(fam[kOracleRole]);
  for (std::int64_t s : {0, 10, 1000}) CHECK(single.eval(t_succ, s) == 1.0);
  auto staged = ScheduledReward::staged({{0, fam[kEarlyRole]}, {50, fam[kOracleRole]}});
  CHECK(staged.active(49).id() == "kd_early_dense");
  CHECK(staged.active(50).id() == "kd_late_oracle");
  const auto t = with_features({-0.4, -0.6, 0, 0, 0});
  auto e1 = fam[kEarlyRole];
  CHECK(staged.eval(t, 49) == e1.eval(t, 49));
  CHECK(staged.eval(t, 50) == 0.0);
  auto blend = ScheduledReward::interpolated(fam[kEarlyRole], fam[kAltRole], 0, 100);
  CHECK(blend.alpha(-5) == 0.0);
  CHECK(blend.alpha(50) == 0.5);
  CHECK(blend.alpha(100) == 1.0);
  auto alt = fam[kAltRole];
  CHECK(blend.eval(t, 50) == doctest::Approx(0.5 * e1.eval(t, 0) + 0.5 * alt.eval(t, 0)).epsilon(1e-15));
  CHECK_THROWS(ScheduledReward::staged({}));
}

TEST_CASE("candidate pool text") {
  const auto e = kd();
  const auto pool = parse_pool(e, "# comment\na := success\n\n b := 1 + dist_key # trailing\n");
  REQUIRE(pool.size() == 2);
  CHECK(pool[1].id() == "b");
  CHECK(pool[1].source() == RewardSource::kDslLoaded);
  try {
    parse_pool(e, "a := success\nb := speed\n");
    FAIL("accepted");
  } catch (const ConfigError& err) {
    CHECK(std::string(err.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_pool(e, "a := success\na := 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_pool(e, "a = success\n"), ConfigError);
  CHECK_THROWS_AS(load_pool_file(e, "/nonexistent/pool"), ConfigError);
  const auto shipped = load_pool_file(e, std::string(PHASEDEPLOY_SOURCE_DIR) + "/pools/key_door.pool");
  CHECK(shipped.size() >= 10);
}

TEST_CASE("missing features raise evaluation errors") {
  const auto h = make_hypothesis(kd(), "x", "dist_door * 2");
  env::Transition t;
  t.features = env::SmallVec{0.1};
  auto copy = h;
  CHECK_THROWS_AS(copy.eval(t, 0), EvaluationError);
  CHECK_THROWS_AS(make_hypothesis(lb(), "y", "dist_door"), ParseError);
}
