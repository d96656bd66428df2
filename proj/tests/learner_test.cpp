#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "phasedeploy/checkpoint_io.hpp"
#include "phasedeploy/env.hpp"
#include "phasedeploy/error.hpp"
#include "phasedeploy/learner.hpp"
#include "phasedeploy/rewards.hpp"

using namespace phasedeploy;
using namespace phasedeploy::rl;

namespace {

env::Env kd() { return env::Env(env::EnvSpec::defaults(env::TaskName::kKeyDoorSparse)); }

ActorCritic small_learner() {
  LearnerConfig c;
  c.hidden = {16};
  c.episodes_per_update = 4;
  c.epochs = 2;
  c.minibatches = 2;
  return ActorCritic(kd(), c);
}

std::vector<Sample> random_batch(Rng& rng, int n, int obs_dim, int actions) {
  std::vector<Sample> b(static_cast<std::size_t>(n));
  for (auto& s : b) {
    env::SmallVec v;
    std::vector<double> x;
    for (int i = 0; i < obs_dim; ++i) x.push_back(rng.uniform(-1, 1));
    switch (obs_dim) {
      case 6: v = env::SmallVec{x[0], x[1], x[2], x[3], x[4], x[5]}; break;
      default: v = env::SmallVec{x[0], x[1], x[2]}; break;
    }
    s.obs = v;
    s.action = static_cast<int>(rng.below(static_cast<std::uint64_t>(actions)));
    s.advantage = rng.uniform(-2, 2);
    s.ret = rng.uniform(-1, 3);
  }
  return b;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max(std::sqrt(na) + std::sqrt(nb), 1e-12);
}

template <typename F>
std::vector<double> central_diff(nn::Mlp& net, F f) {
  std::vector<double> g(net.param_count());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double keep = net.params()[i];
    net.params()[i] = keep + 1e-6;
    const double lp = f(net);
    net.params()[i] = keep - 1e-6;
    const double lm = f(net);
    net.params()[i] = keep;
    g[i] = (lp - lm) / 2e-6;
  }
  return g;
}

// Independent restatement of the clipped surrogate with entropy bonus.
double oracle_policy_loss(const nn::Mlp& net, const std::vector<Sample>& batch, double eps, double c_ent) {
  double total = 0.0;
  for (const auto& s : batch) {
    std::vector<double> z(net.output_dim());
    net.forward(s.obs.span(), z);
    double lse = 0.0;
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    for (double v : z) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    const double logp = z[static_cast<std::size_t>(s.action)] - lse;
    const double rho = std::exp(logp - s.old_logp);
    const double unclipped = rho * s.advantage;
    const double clipped = std::min(std::max(rho, 1 - eps), 1 + eps) * s.advantage;
    double h = 0.0;
    for (double v : z) h -= std::exp(v - lse) * (v - lse);
    total += -std::min(unclipped, clipped) - c_ent * h;
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("policy and critic gradients match central differences on 20 batches") {
  Rng rng(99);
  LearnerConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const int obs_dim = trial % 2 == 0 ? 6 : 3;
    const int actions = trial % 2 == 0 ? 4 : 3;
    auto policy = nn::Mlp::initialized({obs_dim, 8, 8, actions}, rng, 1.0);
    auto critic = nn::Mlp::initialized({obs_dim, 8, 8, 1}, rng, 1.0);
    auto batch = random_batch(rng, 12, obs_dim, actions);
    for (auto& s : batch) {
      std::vector<double> z(static_cast<std::size_t>(actions));
      policy.forward(s.obs.span(), z);
      double lse = 0.0;
      for (double v : z) lse += std::exp(v);
      // Old policy off by a random amount so both clip branches occur.
      s.old_logp = z[static_cast<std::size_t>(s.action)] - std::log(lse) + rng.uniform(-0.5, 0.5);
    }
    std::vector<double> g(policy.param_count(), 0.0);
    const double l = policy_loss(policy, batch, cfg, g);
    CHECK(l == doctest::Approx(oracle_policy_loss(policy, batch, cfg.clip, cfg.entropy_coef)).epsilon(1e-12));
    const auto fd = central_diff(policy, [&](const nn::Mlp& n) { return policy_loss(n, batch, cfg, {}); });
    CHECK(rel_err(g, fd) <= 1e-4);

    std::vector<double> gc(critic.param_count(), 0.0);
    value_loss(critic, batch, gc);
    const auto fdc = central_diff(critic, [&](const nn::Mlp& n) { return value_loss(n, batch, {}); });
    CHECK(rel_err(gc, fdc) <= 1e-4);
  }
}

TEST_CASE("gae matches the discounted sum of td errors") {
  const std::vector<double> r{1.0, 0.0, 0.5, 2.0};
  const std::vector<double> v{0.2, 0.4, -0.1, 0.3};
  const double g = 0.9, lam = 0.8;
  const auto adv = gae(r, v, g, lam);
  for (std::size_t t = 0; t < r.size(); ++t) {
    double ref = 0.0, w = 1.0;
    for (std::size_t k = t; k < r.size(); ++k) {
      const double next = k + 1 < r.size() ? v[k + 1] : 0.0;
      ref += w * (r[k] + g * next - v[k]);
      w *= g * lam;
    }
    CHECK(adv[t] == doctest::Approx(ref).epsilon(1e-14));
  }
  // lambda = 1 gives Monte Carlo returns minus values.
  const auto mc = gae(r, v, g, 1.0);
  CHECK(mc[0] + v[0] == doctest::Approx(1.0 + 0.9 * 0.0 + 0.81 * 0.5 + 0.729 * 2.0));
}

TEST_CASE("advantage normalization") {
  std::vector<double> a{1, 2, 3, 4};
  normalize(a);
  CHECK(a[0] + a[1] + a[2] + a[3] == doctest::Approx(0.0));
  CHECK(a[3] == doctest::Approx(1.5 / std::sqrt(1.25)).epsilon(1e-6));
}

TEST_CASE("action selection") {
  nn::Mlp p({1, 3});
  p.params()[3] = std::log(0.2);
  p.params()[4] = std::log(0.5);
  p.params()[5] = std::log(0.3);
  const std::vector<double> x{0.0};
  CHECK(sampled_action(p, x, 0.0) == 0);
  CHECK(sampled_action(p, x, 0.19) == 0);
  CHECK(sampled_action(p, x, 0.21) == 1);
  CHECK(sampled_action(p, x, 0.69) == 1);
  CHECK(sampled_action(p, x, 0.71) == 2);
  CHECK(sampled_action(p, x, 0.999999) == 2);
  CHECK(greedy_action(p, x) == 1);
  nn::Mlp tie({1, 2});
  CHECK(greedy_action(tie, x) == 0);
}

TEST_CASE("init is deterministic in the seed") {
  const auto L = small_learner();
  const auto a = L.init(5), b = L.init(5), c = L.init(6);
  CHECK(a == b);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.policy_fingerprint() != c.policy_fingerprint());
  CHECK(a.step == 0);
  CHECK(a.env_spec_hash == kd().spec().hash());
}

TEST_CASE("train is pure and deterministic") {
  const auto L = small_learner();
  const auto fam = rewards::builtin_family(L.env());
  const auto start = L.init(1);
  const auto before = start.fingerprint();
  rewards::ScheduledReward r1(fam[rewards::kEarlyRole]), r2(fam[rewards::kEarlyRole]);
  std::vector<UpdateStats> stats;
  const auto a = L.train(start, r1, 3, &stats);
  const auto b = L.train(start, r2, 3);
  CHECK(start.fingerprint() == before);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.step == 3);
  CHECK(stats.size() == 3);
  CHECK(a.fingerprint() != before);
  rewards::ScheduledReward r0(fam[rewards::kEarlyRole]);
  const auto z = L.train(start, r0, 0);
  CHECK(z.learner_equal(start));
  REQUIRE(z.audit.size() == start.audit.size() + 1);
  CHECK(z.audit.back().detail.find("no-op") != std::string::npos);
}

TEST_CASE("chunked training equals one long call") {
  const auto L = small_learner();
  const auto fam = rewards::builtin_family(L.env());
  rewards::ScheduledReward r1(fam[0]), r2(fam[0]);
  const auto whole = L.train(L.init(2), r1, 4);
  const auto half = L.train(L.train(L.init(2), r2, 2), r2, 2);
  CHECK(whole.learner_equal(half));
}

TEST_CASE("clone independence") {
  const auto L = small_learner();
  const auto fam = rewards::builtin_family(L.env());
  const auto parent = L.init(3);
  const auto fp = parent.fingerprint();
  auto c1 = clone_checkpoint(parent, 1);
  auto c2 = clone_checkpoint(parent, 2);
  CHECK(c1.policy == parent.policy);
  CHECK(c1.critic == parent.critic);
  CHECK(c1.policy_opt == parent.policy_opt);
  CHECK(c1.step == parent.step);
  CHECK(c1.rng != parent.rng);
  CHECK(c1.rng != c2.rng);
  rewards::ScheduledReward ra(fam[rewards::kEarlyRole]), rb(fam[rewards::kAltRole]);
  const auto ta = L.train(c1, ra, 10);
  const auto tb = L.train(c1, rb, 10);
  CHECK(parent.fingerprint() == fp);
  CHECK(ta.policy_fingerprint() != tb.policy_fingerprint());
}

TEST_CASE("clones on different rewards for 100 updates diverge") {
  const auto L = small_learner();
  const auto fam = rewards::builtin_family(L.env());
  const auto parent = L.init(8);
  rewards::ScheduledReward ra(fam[rewards::kEarlyRole]), rb(fam[rewards::kOracleRole]);
  const auto a = L.train(clone_checkpoint(parent, 1), ra, 100);
  const auto b = L.train(clone_checkpoint(parent, 1), rb, 100);
  CHECK(a.fingerprint() != b.fingerprint());
  CHECK(a.step == 100);
}

TEST_CASE("evaluation") {
  const auto L = small_learner();
  const auto ck = L.init(4);
  EvalSpec one{1, 7, false};
  const auto r = L.evaluate(ck, one);
  REQUIRE(r.scores.size() == 1);
  CHECK(r.mean == r.scores[0]);
  EvalSpec spec{32, 7, false};
  CHECK(L.evaluate(ck, spec).scores == L.evaluate(ck, spec).scores);
  const auto comp = L.competence(ck, spec);
  CHECK(comp.batch_size == 32);
  CHECK(comp.seed_set_fingerprint == spec.fingerprint());
  CHECK(comp.value == L.evaluate(ck, spec).mean);
  CHECK_THROWS_AS(L.evaluate(ck, EvalSpec{0, 7, false}), UsageError);
}

TEST_CASE("critic value") {
  const auto L = small_learner();
  auto ck = L.init(4);
  for (auto& p : ck.critic.params()) p = 0.0;
  const std::vector<double> obs{0.1, 0.2, 0.3, 0.0, 0.0, 0.5};
  CHECK(L.critic_value(ck, obs) == 0.0);
  const std::vector<double> wrong{0.1};
  CHECK_THROWS_AS(L.critic_value(ck, wrong), UsageError);
}

TEST_CASE("reset_critic keeps the actor") {
  const auto L = small_learner();
  const auto fam = rewards::builtin_family(L.env());
  rewards::ScheduledReward r(fam[0]);
  const auto ck = L.train(L.init(4), r, 2);
  const auto a = L.reset_critic(ck, 77);
  const auto b = L.reset_critic(ck, 77);
  CHECK(a.policy_fingerprint() == ck.policy_fingerprint());
  CHECK(a.policy_opt == ck.policy_opt);
  CHECK(a.step == ck.step);
  CHECK(a.critic_fingerprint() != ck.critic_fingerprint());
  CHECK(a.critic == b.critic);
  CHECK(a.critic_opt.t == 0);
}

TEST_CASE("non-finite losses raise TrainingDiverged") {
  const auto L = small_learner();
  std::string huge = "exp(50)";
  for (int i = 0; i < 8; ++i) huge += " * exp(50)";
  rewards::ScheduledReward r(rewards::make_hypothesis(L.env(), "huge", huge));
  const auto ck = L.init(1);
  try {
    L.train(ck, r, 2);
    FAIL("did not diverge");
  } catch (const TrainingDiverged& e) {
    CHECK(e.update_index() == 0);
    CHECK(e.last_finite().learner_equal(ck));
  }
}

TEST_CASE("competence rises under 200 dense updates") {
  LearnerConfig cfg;
  const ActorCritic L(kd(), cfg);
  const auto fam = rewards::builtin_family(L.env());
  rewards::ScheduledReward r(fam[rewards::kEarlyRole]);
  const EvalSpec spec{32, 0xE7A1, false};
  const auto start = L.init(1);
  const auto end = L.train(start, r, 200);
  const double c0 = L.competence(start, spec).value;
  const double c1 = L.competence(end, spec).value;
  CHECK(c1 > c0);
  // Frozen from the first pinned run.
  CHECK(c0 == 0.0);
  CHECK(c1 == 0.90625);
}

TEST_CASE("checkpoint serialization") {
  const auto L = small_learner();
  const auto fam = rewards::builtin_family(L.env());
  rewards::ScheduledReward r(fam[0]);
  const auto ck = L.train(L.init(12), r, 2);
  const auto bytes = checkpoint_bytes(ck);
  const auto back = checkpoint_from_bytes(bytes);
  CHECK(back == ck);
  CHECK(checkpoint_bytes(back) == bytes);
  CHECK(bytes[0] == 'P');
  CHECK(bytes[3] == 'K');

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(checkpoint_from_bytes(truncated), LoadError);
  auto short_head = bytes;
  short_head.resize(6);
  CHECK_THROWS_AS(checkpoint_from_bytes(short_head), LoadError);

  auto wrong_version = bytes;
  wrong_version[4] = static_cast<unsigned char>(kCheckpointVersion + 1);
  try {
    checkpoint_from_bytes(wrong_version);
    FAIL("accepted");
  } catch (const LoadError& e) {
    CHECK(e.field() == "header.version");
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(checkpoint_from_bytes(bad_magic), LoadError);

  const auto path = std::string("/tmp/pd_learner_test.ckpt");
  save_checkpoint_file(ck, path);
  CHECK(load_checkpoint_file(path) == ck);
  CHECK_THROWS_AS(load_checkpoint_file("/nonexistent/x.ckpt"), LoadError);
}
