#include "phasedeploy/deployment.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <set>

#include "phasedeploy/error.hpp"
#include "phasedeploy/hash.hpp"
#include "phasedeploy/stats.hpp"

namespace phasedeploy::deployment {

namespace {

constexpr std::uint64_t kResetTag = 0x5E7C;

const rewards::RewardHypothesis& find_candidate(std::span<const rewards::RewardHypothesis> roster,
                                                const std::string& id) {
  for (const auto& h : roster) {
    if (h.id() == id) return h;
  }
  throw ConfigError("unknown candidate id '" + id + "'");
}

double window_mean(const std::vector<double>& v, std::int64_t lo, std::int64_t hi) {
  lo = std::max<std::int64_t>(lo, 0);
  hi = std::min<std::int64_t>(hi, static_cast<std::int64_t>(v.size()));
  if (hi <= lo) return 0.0;
  double s = 0.0;
  for (std::int64_t i = lo; i < hi; ++i) s += v[static_cast<std::size_t>(i)];
  return s / static_cast<double>(hi - lo);
}

// Shared bookkeeping for plan execution and selectors.
class RunBuilder {
 public:
  RunBuilder(const rl::ActorCritic& learner, const ExecutionConfig& config, RunRecord& rec)
      : learner_(learner), config_(config), rec_(rec) {}

  void evaluate(const rl::Checkpoint& ck) {
    const rl::EvalResult ev = learner_.evaluate(ck, config_.eval);
    const double reward_mean = window_mean(rec_.update_rewards, last_eval_step_, ck.step);
    rec_.curve.push_back({ck.step, ev.mean, ev.consec_mean, reward_mean, critic_peak_});
    last_eval_step_ = ck.step;
  }

  // Trains to `target` and evaluates on the cadence. Throws RunDiverged.
  rl::Checkpoint train_to(const rl::Checkpoint& ck, rewards::ScheduledReward& reward, std::int64_t target) {
    std::vector<rl::UpdateStats> stats;
    rl::Checkpoint out;
    try {
      out = learner_.train(ck, reward, target - ck.step, &stats);
    } catch (const rl::TrainingDiverged& e) {
      absorb(stats);
      rec_.train_steps = e.last_finite().step;
      throw RunDiverged(rec_);
    }
    absorb(stats);
    rec_.train_steps = out.step;
    if (out.step % config_.eval_every == 0) evaluate(out);
    return out;
  }

  void record_switch(std::int64_t step, SwitchOperator op, const std::string& from, const std::string& to) {
    rec_.switches.push_back({step, op, from, to, 0.0});
    rec_.switch_count = static_cast<int>(rec_.switches.size());
    rec_.no_switch = false;
  }

  void finish(const rl::Checkpoint& ck, const std::string& final_reward) {
    if (rec_.curve.empty() || rec_.curve.back().step != ck.step) evaluate(ck);
    for (SwitchEvent& e : rec_.switches) {
      const double before = window_mean(rec_.update_rewards, e.step - config_.shift_window, e.step);
      const double after = window_mean(rec_.update_rewards, e.step, e.step + config_.shift_window);
      e.reward_shift = std::abs(after - before);
    }
    rec_.final_reward = final_reward;
  }

  std::int64_t next_eval(std::int64_t step) const { return (step / config_.eval_every + 1) * config_.eval_every; }

 private:
  void absorb(const std::vector<rl::UpdateStats>& stats) {
    for (const rl::UpdateStats& s : stats) {
      rec_.update_rewards.push_back(s.reward_mean);
      critic_peak_ = std::max(critic_peak_, s.critic_peak_abs);
    }
  }

  const rl::ActorCritic& learner_;
  const ExecutionConfig& config_;
  RunRecord& rec_;
  std::int64_t last_eval_step_ = 0;
  double critic_peak_ = 0.0;
};

}  // namespace

std::string to_string(SwitchOperator op) {
  switch (op) {
    case SwitchOperator::kHard: return "hard";
    case SwitchOperator::kPbrsVold: return "pbrs_vold";
    case SwitchOperator::kCriticReset: return "critic_reset";
  }
  return "?";
}

SwitchOperator parse_switch_operator(const std::string& text) {
  if (text == "hard") return SwitchOperator::kHard;
  if (text == "pbrs_vold") return SwitchOperator::kPbrsVold;
  if (text == "critic_reset") return SwitchOperator::kCriticReset;
  throw ConfigError("unknown switch operator '" + text + "' (expected hard, pbrs_vold, critic_reset)");
}

std::string to_string(PlanKind kind) {
  switch (kind) {
    case PlanKind::kSingle: return "single";
    case PlanKind::kTwoStage: return "two_stage";
    case PlanKind::kFallback: return "fallback";
  }
  return "?";
}

std::string DeploymentPlan::describe() const {
  switch (kind) {
    case PlanKind::kSingle: return "single(" + first + ")";
    case PlanKind::kFallback: return "fallback(" + first + ")";
    case PlanKind::kTwoStage:
      return "two_stage(" + first + " -> " + second + ", t_s=" + std::to_string(t_s) + ", " + to_string(op) + ")";
  }
  return "?";
}

DeploymentPlan decide_deployment(const verification::PhaseProfile& profile, const DeploymentRules& rules) {
  if (profile.checkpoints.empty()) throw UsageError("decide_deployment: profile has no probed checkpoints");
  if (rules.stable_min < 1) throw ConfigError("rules.stable_min must be >= 1");
  const auto& horizons = profile.config.horizons;
  if (horizons.empty()) throw UsageError("decide_deployment: profile has no horizons");
  const int L = rules.reference_horizon.value_or(*std::max_element(horizons.begin(), horizons.end()));
  if (std::find(horizons.begin(), horizons.end(), L) == horizons.end()) {
    throw ConfigError("rules.reference_horizon " + std::to_string(L) + " is not a profile horizon");
  }
  DeploymentPlan plan;
  plan.profile_fingerprint = profile.fingerprint();
  plan.op = rules.op;
  const std::vector<const verification::CheckpointVerdict*> vs = profile.at_horizon(L);
  const std::string L_text = " at L=" + std::to_string(L);

  auto fallback = [&](std::string reason) {
    plan.kind = PlanKind::kFallback;
    plan.first = rules.fallback_candidate.empty() ? (profile.roster.empty() ? "" : profile.roster.front())
                                                  : rules.fallback_candidate;
    plan.reason = std::move(reason);
    return plan;
  };

  std::size_t first = vs.size();
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (vs[i]->informative) {
      first = i;
      break;
    }
  }
  if (first == vs.size()) return fallback("no informative verdict" + L_text);
  const std::string& w0 = vs[first]->modal_winner;

  bool uniform = true;
  for (std::size_t i = first; i < vs.size(); ++i) {
    if (vs[i]->informative && vs[i]->modal_winner != w0) uniform = false;
  }
  if (uniform) {
    plan.kind = PlanKind::kSingle;
    plan.first = w0;
    plan.reason = "every informative verdict" + L_text + " names " + w0;
    return plan;
  }

  // Runs of consecutive probed checkpoints that are informative with one winner.
  for (std::size_t i = first + 1; i < vs.size();) {
    if (!vs[i]->informative || vs[i]->modal_winner == w0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < vs.size() && vs[j + 1]->informative && vs[j + 1]->modal_winner == vs[i]->modal_winner) ++j;
    if (static_cast<int>(j - i + 1) >= rules.stable_min) {
      plan.kind = PlanKind::kTwoStage;
      plan.first = w0;
      plan.second = vs[i]->modal_winner;
      plan.t_s = vs[i]->t;
      plan.reason = "first informative winner " + w0 + " overtaken by " + plan.second + " for " +
                    std::to_string(j - i + 1) + " consecutive verdicts" + L_text;
      return plan;
    }
    i = j + 1;
  }
  return fallback("informative winners change without a stable later winner" + L_text);
}

SwitchResult apply_switch(const rl::ActorCritic& learner, const rl::Checkpoint& ck, SwitchOperator op,
                          const rewards::RewardHypothesis& next, double gamma, std::uint64_t reset_seed) {
  switch (op) {
    case SwitchOperator::kHard: return {ck, next};
    case SwitchOperator::kPbrsVold: return {ck, rewards::pbrs_wrap(next, ck.critic, gamma)};
    case SwitchOperator::kCriticReset: return {learner.reset_critic(ck, reset_seed), next};
  }
  throw UsageError("apply_switch: invalid operator");
}

RunDiverged::RunDiverged(RunRecord partial)
    : Error("run '" + partial.label + "' diverged after " + std::to_string(partial.train_steps) + " updates"),
      partial_(std::move(partial)) {}

void ExecutionConfig::validate() const {
  if (budget < 1) throw ConfigError("execution.budget must be >= 1");
  if (eval_every < 1) throw ConfigError("execution.eval_every must be >= 1");
  if (shift_window < 1) throw ConfigError("execution.shift_window must be >= 1");
  if (eval.n_episodes < 1) throw ConfigError("execution.eval_episodes must be >= 1");
}

RunRecord execute_schedule(const rl::ActorCritic& learner, const Schedule& schedule, std::uint64_t seed,
                           const ExecutionConfig& config) {
  config.validate();
  if (schedule.stages.empty()) throw ConfigError("schedule '" + schedule.label + "' has no stages");
  if (schedule.stages.front().start != 0) throw ConfigError("schedule '" + schedule.label + "' must start at step 0");
  for (std::size_t i = 1; i < schedule.stages.size(); ++i) {
    const std::int64_t s = schedule.stages[i].start;
    if (s <= schedule.stages[i - 1].start || s >= config.budget) {
      throw ConfigError("schedule '" + schedule.label + "': switch steps must increase and lie inside the budget");
    }
  }
  if (schedule.interpolate && schedule.stages.size() != 2) {
    throw ConfigError("schedule '" + schedule.label + "': interpolation needs exactly two stages");
  }

  RunRecord rec;
  rec.label = schedule.label;
  rec.seed = seed;
  RunBuilder run(learner, config, rec);
  rl::Checkpoint ck = learner.init(seed);
  const double gamma = learner.env().spec().gamma;

  if (schedule.interpolate) {
    const auto [t0, t1] = *schedule.interpolate;
    rewards::ScheduledReward reward =
        rewards::ScheduledReward::interpolated(schedule.stages[0].reward, schedule.stages[1].reward, t0, t1);
    run.evaluate(ck);
    while (ck.step < config.budget) ck = run.train_to(ck, reward, std::min(config.budget, run.next_eval(ck.step)));
    // Logged as one event at the start of the blend.
    if (t0 < config.budget) {
      run.record_switch(t0, SwitchOperator::kHard, schedule.stages[0].reward.id(), schedule.stages[1].reward.id());
    }
    run.finish(ck, schedule.stages[1].reward.id());
    return rec;
  }

  std::size_t stage = 0;
  rewards::ScheduledReward reward(schedule.stages[0].reward);
  std::string current = schedule.stages[0].reward.id();
  run.evaluate(ck);
  while (ck.step < config.budget) {
    if (stage + 1 < schedule.stages.size() && ck.step == schedule.stages[stage + 1].start) {
      ++stage;
      const auto& next = schedule.stages[stage].reward;
      SwitchResult sw = apply_switch(learner, ck, schedule.op, next, gamma, derive_stream(seed ^ kResetTag, stage));
      ck = std::move(sw.checkpoint);
      reward = rewards::ScheduledReward(std::move(sw.reward));
      run.record_switch(ck.step, schedule.op, current, next.id());
      current = next.id();
      continue;
    }
    std::int64_t target = std::min(config.budget, run.next_eval(ck.step));
    if (stage + 1 < schedule.stages.size()) target = std::min(target, schedule.stages[stage + 1].start);
    ck = run.train_to(ck, reward, target);
  }
  run.finish(ck, current);
  return rec;
}

Schedule schedule_for(const DeploymentPlan& plan, std::span<const rewards::RewardHypothesis> roster,
                      std::string label) {
  Schedule s;
  s.label = label.empty() ? plan.describe() : std::move(label);
  s.op = plan.op;
  s.stages.push_back({0, find_candidate(roster, plan.first)});
  if (plan.kind == PlanKind::kTwoStage) {
    if (plan.second == plan.first) throw ConfigError("two-stage plan uses the same candidate twice");
    if (plan.t_s <= 0) throw ConfigError("two-stage plan needs t_s > 0");
    s.stages.push_back({plan.t_s, find_candidate(roster, plan.second)});
  }
  return s;
}

RunRecord execute_plan(const rl::ActorCritic& learner, const DeploymentPlan& plan,
                       std::span<const rewards::RewardHypothesis> roster, std::uint64_t seed,
                       const ExecutionConfig& config) {
  if (plan.kind == PlanKind::kTwoStage && plan.t_s >= config.budget) {
    throw ConfigError("plan switch step " + std::to_string(plan.t_s) + " is not inside the budget " +
                      std::to_string(config.budget));
  }
  return execute_schedule(learner, schedule_for(plan, roster), seed, config);
}

std::string to_string(SelectorKind kind) {
  switch (kind) {
    case SelectorKind::kConservativePeriodic: return "conservative_periodic";
    case SelectorKind::kMovingAverage: return "moving_average";
    case SelectorKind::kNaiveLast: return "naive_last";
    case SelectorKind::kOneShotEarly: return "one_shot_early";
    case SelectorKind::kOneShotOracle: return "one_shot_oracle";
  }
  return "?";
}

SelectorKind parse_selector_kind(const std::string& text) {
  for (SelectorKind k : {SelectorKind::kConservativePeriodic, SelectorKind::kMovingAverage, SelectorKind::kNaiveLast,
                         SelectorKind::kOneShotEarly, SelectorKind::kOneShotOracle}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown selector '" + text +
                    "' (expected conservative_periodic, moving_average, naive_last, one_shot_early, one_shot_oracle)");
}

void SelectorConfig::validate() const {
  if (probe_every < 1) throw ConfigError("selector.probe_every must be >= 1");
  if (fork_horizon < 1) throw ConfigError("selector.fork_horizon must be >= 1");
  if (fork_repeats < 1) throw ConfigError("selector.fork_repeats must be >= 1");
  if (ma_window < 1) throw ConfigError("selector.ma_window must be >= 1");
  if (consecutive < 1) throw ConfigError("selector.consecutive must be >= 1");
  if (incumbent.empty()) throw ConfigError("selector.incumbent must name a candidate");
}

RunRecord run_selector(const rl::ActorCritic& learner, SelectorKind kind,
                       std::span<const rewards::RewardHypothesis> candidates, const SelectorConfig& selector,
                       std::uint64_t seed, const ExecutionConfig& config) {
  config.validate();
  selector.validate();
  if (candidates.size() < 2) throw ConfigError("selectors need at least two candidates");
  RunRecord rec;
  rec.label = to_string(kind);
  rec.seed = seed;
  RunBuilder run(learner, config, rec);
  const double gamma = learner.env().spec().gamma;

  std::string current = selector.incumbent;
  if (kind == SelectorKind::kOneShotOracle) {
    if (selector.oracle.empty()) throw ConfigError("one_shot_oracle needs selector.oracle");
    current = selector.oracle;
  }
  rewards::ScheduledReward reward(find_candidate(candidates, current));
  rl::Checkpoint ck = learner.init(seed);
  run.evaluate(ck);

  const std::int64_t probe_cost = static_cast<std::int64_t>(candidates.size()) * selector.fork_repeats *
                                  selector.fork_horizon;
  bool probing = kind != SelectorKind::kOneShotOracle;
  std::int64_t next_probe = selector.probe_every;
  int streak = 0;
  std::map<std::string, std::deque<double>> history;
  verification::VerificationConfig vc;
  vc.horizons = {selector.fork_horizon};
  vc.repeats = selector.fork_repeats;
  vc.rel_min = selector.rel_min;
  vc.bootstrap_resamples = 1000;
  int switches = 0;

  auto do_switch = [&](const std::string& to) {
    const auto& next = find_candidate(candidates, to);
    SwitchResult sw = apply_switch(learner, ck, selector.op, next, gamma,
                                   derive_stream(seed ^ kResetTag, static_cast<std::uint64_t>(++switches)));
    ck = std::move(sw.checkpoint);
    reward = rewards::ScheduledReward(std::move(sw.reward));
    run.record_switch(ck.step, selector.op, current, to);
    current = to;
  };

  while (ck.step + rec.probe_steps < config.budget) {
    if (probing && ck.step == next_probe) {
      if (ck.step + rec.probe_steps + probe_cost > config.budget) {
        probing = false;
        continue;
      }
      const auto forks =
          verification::fork_verify(learner, ck, candidates, selector.fork_horizon, selector.fork_repeats, config.eval);
      rec.probe_steps += probe_cost;
      const auto v = verification::aggregate_verdict(forks, vc);
      auto mean_of = [&](const std::string& id) {
        for (const auto& s : v.mean_scores) {
          if (s.id == id) return s.mean;
        }
        return 0.0;
      };
      switch (kind) {
        case SelectorKind::kConservativePeriodic:
          if (v.modal_winner != current && v.rel >= selector.rel_min &&
              mean_of(v.modal_winner) - mean_of(current) >= selector.delta) {
            do_switch(v.modal_winner);
          }
          break;
        case SelectorKind::kMovingAverage: {
          for (const auto& s : v.mean_scores) {
            auto& q = history[s.id];
            q.push_back(s.mean);
            if (static_cast<int>(q.size()) > selector.ma_window) q.pop_front();
          }
          auto ma = [&](const std::string& id) {
            const auto& q = history[id];
            return q.empty() ? 0.0 : std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
          };
          std::string challenger;
          double best = -1.0;
          for (const auto& s : v.mean_scores) {
            if (s.id != current && ma(s.id) > best) {
              best = ma(s.id);
              challenger = s.id;
            }
          }
          streak = best > ma(current) ? streak + 1 : 0;
          if (streak >= selector.consecutive) {
            do_switch(challenger);
            streak = 0;
          }
          break;
        }
        case SelectorKind::kNaiveLast:
          if (v.modal_winner != current) do_switch(v.modal_winner);
          break;
        case SelectorKind::kOneShotEarly:
          if (v.modal_winner != current) do_switch(v.modal_winner);
          probing = false;
          break;
        case SelectorKind::kOneShotOracle:
          break;
      }
      next_probe += selector.probe_every;
      continue;
    }
    std::int64_t target = std::min(run.next_eval(ck.step), config.budget - rec.probe_steps);
    if (probing) target = std::min(target, next_probe);
    if (target <= ck.step) break;
    ck = run.train_to(ck, reward, target);
  }
  run.finish(ck, current);
  return rec;
}

std::string to_string(FailureLabel label) {
  switch (label) {
    case FailureLabel::kNoFailure: return "no_failure";
    case FailureLabel::kNeverSwitch: return "never_switch";
    case FailureLabel::kSwitchWithoutGain: return "switch_without_gain";
    case FailureLabel::kNoReliableCheckpoint: return "no_reliable_checkpoint";
    case FailureLabel::kOverConservativeTrigger: return "over_conservative_trigger";
    case FailureLabel::kWrongRewardIdentity: return "wrong_reward_identity";
  }
  return "?";
}

FailureLabel classify_selector_failure(const RunRecord& record, const verification::PhaseProfile& profile,
                                       const DeploymentPlan& plan, std::optional<double> counterfactual_final,
                                       std::int64_t slack) {
  const bool any_informative = std::any_of(profile.verdicts.begin(), profile.verdicts.end(),
                                           [](const verification::CheckpointVerdict& v) { return v.informative; });
  if (!any_informative) return FailureLabel::kNoReliableCheckpoint;
  if (record.switch_count == 0) return FailureLabel::kNeverSwitch;
  const std::string& target = plan.kind == PlanKind::kTwoStage ? plan.second : plan.first;
  if (!target.empty() && record.final_reward != target) return FailureLabel::kWrongRewardIdentity;
  if (counterfactual_final && record.final_success() <= *counterfactual_final) {
    return FailureLabel::kSwitchWithoutGain;
  }
  if (plan.kind == PlanKind::kTwoStage && record.switches.front().step > plan.t_s + slack) {
    return FailureLabel::kOverConservativeTrigger;
  }
  return FailureLabel::kNoFailure;
}

std::uint64_t SelectionManifest::fingerprint() const {
  Fnv1a h;
  for (const auto& r : rules) h.str(r);
  h.u64(0xD5);
  for (auto s : dev_seeds) h.u64(s);
  h.u64(0x75);
  for (auto s : test_seeds) h.u64(s);
  for (const auto& [rule, m] : dev_mean_peak) h.str(rule).f64(m);
  h.str(selected).u64(issued_at);
  return h.value();
}

HeldoutProtocol::HeldoutProtocol(std::vector<std::string> rules, std::vector<std::uint64_t> dev_seeds,
                                 std::vector<std::uint64_t> test_seeds)
    : rules_(std::move(rules)), dev_(std::move(dev_seeds)), test_(std::move(test_seeds)) {
  if (rules_.empty()) throw ConfigError("held-out selection needs at least one rule");
  if (dev_.empty() || test_.empty()) throw ConfigError("held-out selection needs dev and test seeds");
  if (std::set<std::string>(rules_.begin(), rules_.end()).size() != rules_.size()) {
    throw ConfigError("held-out rule list has duplicates");
  }
  const std::set<std::uint64_t> dev(dev_.begin(), dev_.end()), test(test_.begin(), test_.end());
  if (dev.size() != dev_.size() || test.size() != test_.size()) throw ConfigError("seed lists must be unique");
  for (auto s : test) {
    if (dev.contains(s)) throw ProtocolViolation("seed " + std::to_string(s) + " is in both dev and test sets");
  }
}

void HeldoutProtocol::record_dev(const std::string& rule, std::uint64_t seed, double peak) {
  if (std::find(rules_.begin(), rules_.end(), rule) == rules_.end()) {
    throw ProtocolViolation("rule '" + rule + "' is not in the frozen rule list");
  }
  if (std::find(dev_.begin(), dev_.end(), seed) == dev_.end()) {
    throw ProtocolViolation("seed " + std::to_string(seed) + " is not a dev seed");
  }
  if (manifest_) throw ProtocolViolation("dev evidence added after selection");
  ++clock_;
  dev_peaks_[rule].push_back(peak);
}

const SelectionManifest& HeldoutProtocol::select() {
  if (manifest_) return *manifest_;
  SelectionManifest m;
  m.rules = rules_;
  m.dev_seeds = dev_;
  m.test_seeds = test_;
  m.selected = heldout_select(dev_peaks_, rules_);
  for (const auto& r : rules_) m.dev_mean_peak[r] = stats::mean(dev_peaks_.at(r));
  m.issued_at = ++clock_;
  manifest_ = std::move(m);
  return *manifest_;
}

std::uint64_t HeldoutProtocol::authorize_test(const std::string& rule, std::uint64_t seed) {
  if (!manifest_) {
    throw ProtocolViolation("test-seed evaluation of '" + rule + "' requested before a selection manifest exists");
  }
  if (std::find(test_.begin(), test_.end(), seed) == test_.end()) {
    throw ProtocolViolation("seed " + std::to_string(seed) + " is not a test seed");
  }
  if (std::find(rules_.begin(), rules_.end(), rule) == rules_.end()) {
    throw ProtocolViolation("rule '" + rule + "' is not in the frozen rule list");
  }
  return ++clock_;
}

std::string heldout_select(const std::map<std::string, std::vector<double>>& dev_peaks,
                           std::span<const std::string> candidate_rules) {
  if (candidate_rules.empty()) throw ConfigError("heldout_select: no candidate rules");
  std::string best;
  double best_mean = 0.0;
  std::vector<std::string> sorted(candidate_rules.begin(), candidate_rules.end());
  std::sort(sorted.begin(), sorted.end());
  for (const auto& r : sorted) {
    const auto it = dev_peaks.find(r);
    if (it == dev_peaks.end() || it->second.empty()) {
      throw ConfigError("heldout_select: rule '" + r + "' has no dev runs");
    }
    const double m = stats::mean(it->second);
    if (best.empty() || m > best_mean) {
      best = r;
      best_mean = m;
    }
  }
  return best;
}

}  // namespace phasedeploy::deployment
