#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "phasedeploy/deployment.hpp"
#include "phasedeploy/env.hpp"
#include "phasedeploy/learner.hpp"
#include "phasedeploy/metrics.hpp"
#include "phasedeploy/rewards.hpp"
#include "phasedeploy/verification.hpp"

namespace phasedeploy::manifest {

// Evidence-status vocabulary every output is tagged with.
const std::vector<std::string>& evidence_statuses();

// A deployment rule under comparison.
//  single:      train `reward` throughout
//  two_stage:   `first` until t_s, then `second` via `op`
//  interpolate: blend `first` into `second` linearly over [t0, t1]
//  profile:     whatever decide_deployment returns for the probe profile
struct MethodSpec {
  std::string id;
  std::string kind;
  std::string reward;
  std::string first;
  std::string second;
  std::int64_t t_s = 0;
  std::int64_t t0 = 0;
  std::int64_t t1 = 0;
  std::string op = "hard";
  // identity | running_norm | matched. matched fits later stages to the
  // first stage's uniform-random calibration statistics.
  std::string scale = "identity";
};

struct SelectorSpec {
  std::string id;
  deployment::SelectorKind kind = deployment::SelectorKind::kConservativePeriodic;
  deployment::SelectorConfig config;
};

struct ExperimentManifest {
  std::string name;
  env::EnvSpec env;
  std::string candidates = "builtin";  // or a pool file, relative to the manifest
  std::string early;                   // dense bootstrap candidate id
  std::string oracle;                  // late oracle candidate id
  rl::LearnerConfig learner;

  std::vector<std::uint64_t> seeds;
  std::vector<std::uint64_t> dev_seeds;
  std::vector<std::uint64_t> test_seeds;

  std::int64_t budget = 100;
  int eval_every = 10;
  int eval_episodes = 32;
  std::uint64_t eval_seed = 0xE7A1;
  int shift_window = 10;

  std::uint64_t probe_seed = 1;
  std::string probe_reward;  // defaults to `early`
  std::vector<std::int64_t> probes;
  verification::VerificationConfig verification;
  deployment::DeploymentRules rules;

  std::vector<MethodSpec> methods;
  std::vector<std::string> operators;  // switch-operator grid
  std::vector<SelectorSpec> selectors;
  metrics::MetricConfig metric;

  std::vector<int> pool_k;
  std::int64_t pool_budget = 60;

  std::string evidence_status = "stress_tests";

  // Directory that relative paths resolve against; not serialized.
  std::string base_dir;

  // Throws ConfigError naming the offending field path.
  void validate() const;
  rl::EvalSpec eval_spec() const;
  deployment::ExecutionConfig execution() const;
  const MethodSpec& method(const std::string& id) const;
};

// Canonical JSON with a fixed field order.
std::string to_text(const ExperimentManifest& m);
ExperimentManifest parse(std::string_view text, std::string base_dir = ".");
ExperimentManifest load(const std::string& path);
// Hash of the canonical text.
std::uint64_t hash(const ExperimentManifest& m);

// The manifest's candidate roster, validated against its environment.
std::vector<rewards::RewardHypothesis> resolve_candidates(const ExperimentManifest& m);

// Reward schedule for a non-profile method. `plan` is used for kind=profile.
deployment::Schedule schedule_for(const ExperimentManifest& m, const MethodSpec& spec,
                                  std::span<const rewards::RewardHypothesis> roster,
                                  const deployment::DeploymentPlan* plan = nullptr);

}  // namespace phasedeploy::manifest
