#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "phasedeploy/learner.hpp"
#include "phasedeploy/rewards.hpp"
#include "phasedeploy/verification.hpp"

namespace phasedeploy::deployment {

enum class SwitchOperator { kHard, kPbrsVold, kCriticReset };
std::string to_string(SwitchOperator op);
SwitchOperator parse_switch_operator(const std::string& text);

enum class PlanKind { kSingle, kTwoStage, kFallback };
std::string to_string(PlanKind kind);

inline constexpr const char* kRuleVersion = "phase-rules/1";

struct DeploymentPlan {
  PlanKind kind = PlanKind::kFallback;
  std::string first;   // the only reward for single and fallback
  std::string second;  // two_stage only
  std::int64_t t_s = 0;
  SwitchOperator op = SwitchOperator::kHard;
  std::uint64_t profile_fingerprint = 0;
  std::string rule_version = kRuleVersion;
  std::string reason;

  std::string describe() const;
  bool operator==(const DeploymentPlan&) const = default;
};

struct DeploymentRules {
  int stable_min = 2;
  // Horizon whose verdicts drive the decision; the largest when unset.
  std::optional<int> reference_horizon;
  // Candidate used by the no-switch fallback.
  std::string fallback_candidate;
  SwitchOperator op = SwitchOperator::kHard;
};

// Pure function of (profile, rules). Works on the reference-horizon verdicts in
// checkpoint order:
//  single    every informative verdict names the same winner;
//  two_stage a later run of >= stable_min consecutive informative verdicts
//            names one winner different from the first informative winner;
//            t_s is the first step of that run;
//  fallback  otherwise, including no informative verdicts at all.
DeploymentPlan decide_deployment(const verification::PhaseProfile& profile, const DeploymentRules& rules);

struct SwitchResult {
  rl::Checkpoint checkpoint;
  rewards::RewardHypothesis reward;
};

// hard: checkpoint untouched; pbrs_vold: next reward shaped by the current
// critic; critic_reset: fresh critic from `reset_seed`.
SwitchResult apply_switch(const rl::ActorCritic& learner, const rl::Checkpoint& ck, SwitchOperator op,
                          const rewards::RewardHypothesis& next, double gamma, std::uint64_t reset_seed);

struct CurvePoint {
  std::int64_t step = 0;
  double success = 0.0;
  double consec = 0.0;
  double reward_mean = 0.0;
  double critic_peak_abs = 0.0;  // running maximum up to this step
};

struct SwitchEvent {
  std::int64_t step = 0;
  SwitchOperator op = SwitchOperator::kHard;
  std::string from;
  std::string to;
  double reward_shift = 0.0;
};

struct RunRecord {
  std::string label;
  std::uint64_t seed = 0;
  std::vector<CurvePoint> curve;
  std::vector<SwitchEvent> switches;
  std::vector<double> update_rewards;  // mean training reward of each update
  int switch_count = 0;
  bool no_switch = true;
  std::string final_reward;
  std::int64_t train_steps = 0;
  std::int64_t probe_steps = 0;  // fork updates charged by selectors

  double final_success() const { return curve.empty() ? 0.0 : curve.back().success; }
};

// Thrown when a run diverges; carries everything recorded before that.
class RunDiverged : public Error {
 public:
  explicit RunDiverged(RunRecord partial);
  const RunRecord& partial() const { return partial_; }

 private:
  RunRecord partial_;
};

struct ExecutionConfig {
  std::int64_t budget = 100;
  int eval_every = 10;
  rl::EvalSpec eval;
  int shift_window = 10;

  void validate() const;
};

// Reward schedule for one run: stages switch at `start`; interpolation blends
// the first two stages linearly over [t0, t1] instead of switching.
struct Schedule {
  struct Stage {
    std::int64_t start = 0;
    rewards::RewardHypothesis reward;
  };
  std::string label;
  std::vector<Stage> stages;
  SwitchOperator op = SwitchOperator::kHard;
  std::optional<std::pair<std::int64_t, std::int64_t>> interpolate;
};

RunRecord execute_schedule(const rl::ActorCritic& learner, const Schedule& schedule, std::uint64_t seed,
                           const ExecutionConfig& config);

// Resolves plan ids against `roster` and executes. ConfigError on unknown ids
// or t_s outside (0, budget).
Schedule schedule_for(const DeploymentPlan& plan, std::span<const rewards::RewardHypothesis> roster,
                      std::string label = {});
RunRecord execute_plan(const rl::ActorCritic& learner, const DeploymentPlan& plan,
                       std::span<const rewards::RewardHypothesis> roster, std::uint64_t seed,
                       const ExecutionConfig& config);

enum class SelectorKind { kConservativePeriodic, kMovingAverage, kNaiveLast, kOneShotEarly, kOneShotOracle };
std::string to_string(SelectorKind kind);
SelectorKind parse_selector_kind(const std::string& text);

struct SelectorConfig {
  int probe_every = 20;
  int fork_horizon = 5;
  int fork_repeats = 2;
  double delta = 0.1;
  double rel_min = 0.75;
  int ma_window = 3;
  int consecutive = 2;
  SwitchOperator op = SwitchOperator::kHard;
  std::string incumbent;  // starting reward
  std::string oracle;     // committed to by one_shot_oracle

  void validate() const;
};

// Runs a reactive selector. Probe forks are charged to the budget: the run
// stops once training plus probe updates reach it.
RunRecord run_selector(const rl::ActorCritic& learner, SelectorKind kind,
                       std::span<const rewards::RewardHypothesis> candidates, const SelectorConfig& selector,
                       std::uint64_t seed, const ExecutionConfig& config);

enum class FailureLabel {
  kNoFailure,
  kNeverSwitch,
  kSwitchWithoutGain,
  kNoReliableCheckpoint,
  kOverConservativeTrigger,
  kWrongRewardIdentity,
};
std::string to_string(FailureLabel label);

// Checked in order: no informative verdicts, no switch, final reward differs
// from the plan's final reward, final success not above the counterfactual,
// first switch later than the plan's t_s by more than `slack` steps.
FailureLabel classify_selector_failure(const RunRecord& record, const verification::PhaseProfile& profile,
                                       const DeploymentPlan& plan, std::optional<double> counterfactual_final,
                                       std::int64_t slack);

// Held-out schedule selection with a logical clock. Every dev run, selection,
// and test run gets the next tick; test runs require a prior selection.
struct SelectionManifest {
  std::vector<std::string> rules;
  std::vector<std::uint64_t> dev_seeds;
  std::vector<std::uint64_t> test_seeds;
  std::map<std::string, double> dev_mean_peak;
  std::string selected;
  std::uint64_t issued_at = 0;

  std::uint64_t fingerprint() const;
};

class HeldoutProtocol {
 public:
  // ProtocolViolation when dev and test seeds overlap; ConfigError on
  // empty or duplicate lists.
  HeldoutProtocol(std::vector<std::string> rules, std::vector<std::uint64_t> dev_seeds,
                  std::vector<std::uint64_t> test_seeds);

  const std::vector<std::uint64_t>& dev_seeds() const { return dev_; }
  const std::vector<std::uint64_t>& test_seeds() const { return test_; }

  // Records a dev run. ProtocolViolation for test seeds or unknown rules.
  void record_dev(const std::string& rule, std::uint64_t seed, double peak);

  // argmax of dev mean peak, ties to the smallest rule id. Requires every rule
  // to have at least one dev run. Freezes the rule list.
  const SelectionManifest& select();

  // Returns the tick for a test-seed run of `rule`. ProtocolViolation without a
  // selection manifest, for seeds outside the test set, or for rules missing
  // from the frozen list.
  std::uint64_t authorize_test(const std::string& rule, std::uint64_t seed);

  const std::optional<SelectionManifest>& manifest() const { return manifest_; }
  std::uint64_t clock() const { return clock_; }

 private:
  std::vector<std::string> rules_;
  std::vector<std::uint64_t> dev_;
  std::vector<std::uint64_t> test_;
  std::map<std::string, std::vector<double>> dev_peaks_;
  std::optional<SelectionManifest> manifest_;
  std::uint64_t clock_ = 0;
};

// Stateless form: picks argmax of dev mean peak with lexicographic ties.
std::string heldout_select(const std::map<std::string, std::vector<double>>& dev_peaks,
                           std::span<const std::string> candidate_rules);

}  // namespace phasedeploy::deployment
