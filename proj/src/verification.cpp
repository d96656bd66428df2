#include "phasedeploy/verification.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <tuple>

#include "phasedeploy/error.hpp"
#include "phasedeploy/hash.hpp"
#include "phasedeploy/parallel.hpp"
#include "phasedeploy/stats.hpp"

namespace phasedeploy::verification {

namespace {

constexpr std::uint64_t kForkTag = 0xF04C;

}  // namespace

std::uint64_t fork_tag(const std::string& candidate_id, int repeat, StreamMode mode) {
  std::uint64_t base = kForkTag;
  if (mode == StreamMode::kPerCandidate) base ^= hash_string(candidate_id);
  return derive_stream(base, static_cast<std::uint64_t>(repeat));
}

std::vector<ForkResult> fork_verify(const rl::ActorCritic& learner, const rl::Checkpoint& ck,
                                    std::span<const rewards::RewardHypothesis> candidates, int L, int R,
                                    const rl::EvalSpec& eval, const ForkOptions& options) {
  if (candidates.empty()) throw UsageError("fork_verify: no candidates");
  if (L < 1) throw UsageError("fork_verify: fork horizon must be >= 1");
  if (R < 1) throw UsageError("fork_verify: repeats must be >= 1");
  const std::size_t K = candidates.size();
  std::vector<ForkResult> out(K * static_cast<std::size_t>(R));
  parallel_for(out.size(), options.threads, [&](std::size_t i) {
    const rewards::RewardHypothesis& h = candidates[i / static_cast<std::size_t>(R)];
    const int r = static_cast<int>(i % static_cast<std::size_t>(R));
    const auto start = std::chrono::steady_clock::now();
    ForkResult res;
    res.t = ck.step;
    res.candidate_id = h.id();
    res.horizon = L;
    res.repeat = r;
    // Each fork owns a fresh copy of the hypothesis, including scale state.
    rewards::ScheduledReward reward(h);
    rl::Checkpoint fork = rl::clone_checkpoint(ck, fork_tag(h.id(), r, options.streams));
    rl::Checkpoint scored;
    try {
      scored = learner.train(fork, reward, L);
    } catch (const rl::TrainingDiverged& e) {
      scored = e.last_finite();
      res.diverged = true;
    }
    res.executed_steps = scored.step - ck.step;
    res.J = learner.evaluate(scored, eval).mean;
    if (options.record_wallclock) {
      res.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    out[i] = std::move(res);
  });
  std::sort(out.begin(), out.end(), [](const ForkResult& a, const ForkResult& b) {
    return std::tie(a.candidate_id, a.repeat) < std::tie(b.candidate_id, b.repeat);
  });
  return out;
}

void VerificationConfig::validate() const {
  if (horizons.empty()) throw ConfigError("verification.horizons must be nonempty");
  for (int L : horizons) {
    if (L < 1) throw ConfigError("verification.horizons entries must be >= 1");
  }
  if (std::set<int>(horizons.begin(), horizons.end()).size() != horizons.size()) {
    throw ConfigError("verification.horizons entries must be unique");
  }
  if (repeats < 1) throw ConfigError("verification.repeats must be >= 1");
  if (!(rel_min > 0.0 && rel_min <= 1.0)) throw ConfigError("verification.rel_min must be in (0, 1]");
  if (!(margin_min > 0.0)) throw ConfigError("verification.margin_min must be positive");
  if (bootstrap_resamples < 1) throw ConfigError("verification.bootstrap_resamples must be >= 1");
}

std::uint64_t VerificationConfig::hash() const {
  Fnv1a h;
  h.i64(static_cast<std::int64_t>(horizons.size()));
  for (int L : horizons) h.i64(L);
  h.i64(repeats).f64(rel_min).f64(margin_min).i64(bootstrap_resamples).u64(bootstrap_seed);
  return h.value();
}

WinnerMargin winner_and_margin(std::span<const CandidateScore> scores) {
  if (scores.size() < 2) throw UsageError("winner_and_margin: margin needs at least two candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    const bool higher = scores[i].mean > scores[best].mean;
    const bool tie_smaller = scores[i].mean == scores[best].mean && scores[i].id < scores[best].id;
    if (higher || tie_smaller) best = i;
  }
  double runner_up = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != best) runner_up = std::max(runner_up, scores[i].mean);
  }
  return {scores[best].id, scores[best].mean - runner_up};
}

CheckpointVerdict aggregate_verdict(std::span<const ForkResult> results, const VerificationConfig& config,
                                    double competence) {
  if (results.empty()) throw UsageError("aggregate_verdict: no fork results");
  const std::int64_t t = results.front().t;
  const int L = results.front().horizon;
  std::set<std::string> ids;
  int R = 0;
  for (const ForkResult& r : results) {
    if (r.t != t || r.horizon != L) throw UsageError("aggregate_verdict: results mix checkpoints or horizons");
    ids.insert(r.candidate_id);
    R = std::max(R, r.repeat + 1);
  }
  const std::vector<std::string> roster(ids.begin(), ids.end());
  const std::size_t K = roster.size();
  // J[r][k]; NaN marks a missing cell.
  std::vector<std::vector<double>> J(static_cast<std::size_t>(R), std::vector<double>(K, std::nan("")));
  for (const ForkResult& r : results) {
    const auto k = static_cast<std::size_t>(std::lower_bound(roster.begin(), roster.end(), r.candidate_id) - roster.begin());
    if (r.repeat < 0) throw UsageError("aggregate_verdict: negative repeat index");
    J[static_cast<std::size_t>(r.repeat)][k] = r.J;
  }
  for (int r = 0; r < R; ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      if (std::isnan(J[static_cast<std::size_t>(r)][k])) {
        throw UsageError("aggregate_verdict: missing fork for candidate " + roster[k] + " repeat " + std::to_string(r));
      }
    }
  }

  CheckpointVerdict v;
  v.t = t;
  v.horizon = L;
  v.competence = competence;
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (int r = 0; r < R; ++r) s += J[static_cast<std::size_t>(r)][k];
    v.mean_scores.push_back({roster[k], s / R});
  }

  if (K == 1) {
    // A lone candidate wins trivially; no margin exists, so never informative.
    v.modal_winner = roster[0];
    v.repeat_winners.assign(static_cast<std::size_t>(R), roster[0]);
    v.rel = 1.0;
    return v;
  }

  std::map<std::string, int> counts;
  for (int r = 0; r < R; ++r) {
    std::vector<CandidateScore> row;
    for (std::size_t k = 0; k < K; ++k) row.push_back({roster[k], J[static_cast<std::size_t>(r)][k]});
    const std::string w = winner_and_margin(row).winner;
    v.repeat_winners.push_back(w);
    ++counts[w];
  }
  // std::map iterates ids in order, so the first maximum is the smallest id.
  int modal_count = 0;
  for (const auto& [id, c] : counts) {
    if (c > modal_count) {
      modal_count = c;
      v.modal_winner = id;
    }
  }
  v.rel = static_cast<double>(modal_count) / R;
  for (const auto& [id, c] : counts) {
    const double p = static_cast<double>(c) / R;
    v.entropy -= p * std::log(p);
  }
  if (v.entropy < 0.0) v.entropy = 0.0;

  const auto modal_k =
      static_cast<std::size_t>(std::lower_bound(roster.begin(), roster.end(), v.modal_winner) - roster.begin());
  std::vector<double> margins;
  for (int r = 0; r < R; ++r) {
    const auto& row = J[static_cast<std::size_t>(r)];
    double other = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      if (k != modal_k) other = std::max(other, row[k]);
    }
    margins.push_back(row[modal_k] - other);
  }
  v.margin_mean = stats::mean(margins);
  const std::uint64_t seed = derive_stream(config.bootstrap_seed ^ static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(L));
  const std::vector<double> boot = stats::bootstrap_means(margins, config.bootstrap_resamples, seed);
  // The percentile of resampled means can exceed the sample mean by rounding
  // only; clamp so the bound never sits above its own point estimate.
  v.margin_lcb95 = std::min(stats::quantile_sorted(boot, 0.025), v.margin_mean);
  v.informative = R >= 2 && v.rel >= config.rel_min && v.margin_lcb95 > config.margin_min;
  return v;
}

const CheckpointVerdict* PhaseProfile::find(std::int64_t t, int L) const {
  for (const CheckpointVerdict& v : verdicts) {
    if (v.t == t && v.horizon == L) return &v;
  }
  return nullptr;
}

std::vector<const CheckpointVerdict*> PhaseProfile::at_horizon(int L) const {
  std::vector<const CheckpointVerdict*> out;
  for (std::int64_t t : checkpoints) {
    if (const CheckpointVerdict* v = find(t, L)) out.push_back(v);
  }
  return out;
}

std::uint64_t PhaseProfile::fingerprint() const {
  Fnv1a h;
  h.u64(config.hash()).u64(eval.fingerprint());
  for (std::int64_t t : checkpoints) h.i64(t);
  for (const std::string& id : roster) h.str(id);
  for (const CheckpointVerdict& v : verdicts) {
    h.i64(v.t).i64(v.horizon).f64(v.competence).str(v.modal_winner).f64(v.rel).f64(v.margin_mean);
    h.f64(v.margin_lcb95).f64(v.entropy).u64(v.informative ? 1 : 0);
    for (const CandidateScore& s : v.mean_scores) h.str(s.id).f64(s.mean);
  }
  return h.value();
}

std::map<std::int64_t, rl::Checkpoint> train_probe(const rl::ActorCritic& learner, std::uint64_t seed,
                                                   const rewards::RewardHypothesis& probe_reward,
                                                   std::span<const std::int64_t> steps) {
  std::vector<std::int64_t> sorted(steps.begin(), steps.end());
  std::sort(sorted.begin(), sorted.end());
  std::map<std::int64_t, rl::Checkpoint> out;
  rewards::ScheduledReward reward(probe_reward);
  rl::Checkpoint ck = learner.init(seed);
  for (std::int64_t t : sorted) {
    if (t < 0) throw UsageError("train_probe: negative probe step");
    if (t > ck.step) ck = learner.train(ck, reward, t - ck.step);
    out.emplace(t, ck);
  }
  return out;
}

ProfileRun build_phase_profile(const rl::ActorCritic& learner, const std::map<std::int64_t, rl::Checkpoint>& checkpoints,
                               std::span<const std::int64_t> steps, std::span<const rewards::RewardHypothesis> candidates,
                               const VerificationConfig& config, const rl::EvalSpec& eval,
                               const ForkOptions& options) {
  config.validate();
  if (candidates.empty()) throw UsageError("build_phase_profile: empty candidate list");
  if (steps.empty()) throw UsageError("build_phase_profile: no checkpoints to probe");
  std::vector<std::int64_t> T(steps.begin(), steps.end());
  std::sort(T.begin(), T.end());
  if (std::adjacent_find(T.begin(), T.end()) != T.end()) throw UsageError("build_phase_profile: duplicate probe step");
  std::string missing;
  for (std::int64_t t : T) {
    if (!checkpoints.contains(t)) missing += (missing.empty() ? "" : ", ") + std::to_string(t);
  }
  if (!missing.empty()) throw ConfigError("build_phase_profile: no checkpoint for t = " + missing);

  ProfileRun run;
  PhaseProfile& p = run.profile;
  p.checkpoints = T;
  for (const auto& h : candidates) p.roster.push_back(h.id());
  std::sort(p.roster.begin(), p.roster.end());
  p.config = config;
  p.eval = eval;
  for (std::int64_t t : T) {
    const rl::Checkpoint& ck = checkpoints.at(t);
    const double competence = learner.competence(ck, eval).value;
    for (int L : config.horizons) {
      std::vector<ForkResult> forks = fork_verify(learner, ck, candidates, L, config.repeats, eval, options);
      p.verdicts.push_back(aggregate_verdict(forks, config, competence));
      for (ForkResult& f : forks) {
        p.executed_steps += f.executed_steps;
        run.forks.push_back(std::move(f));
      }
    }
  }
  std::stable_sort(p.verdicts.begin(), p.verdicts.end(), [](const CheckpointVerdict& a, const CheckpointVerdict& b) {
    return std::tie(a.t, a.horizon) < std::tie(b.t, b.horizon);
  });
  std::stable_sort(run.forks.begin(), run.forks.end(), [](const ForkResult& a, const ForkResult& b) {
    return std::tie(a.t, a.horizon, a.candidate_id, a.repeat) < std::tie(b.t, b.horizon, b.candidate_id, b.repeat);
  });
  return run;
}

std::optional<std::int64_t> first_informative(const PhaseProfile& profile, int L) {
  if (std::find(profile.config.horizons.begin(), profile.config.horizons.end(), L) == profile.config.horizons.end()) {
    throw UsageError("first_informative: horizon " + std::to_string(L) + " is not in the profile");
  }
  for (const CheckpointVerdict* v : profile.at_horizon(L)) {
    if (v->informative) return v->t;
  }
  return std::nullopt;
}

std::int64_t verification_cost(std::int64_t M, std::int64_t K, std::int64_t R, std::int64_t L) {
  if (M < 0 || K < 0 || R < 0 || L < 0) throw UsageError("verification_cost: arguments must be nonnegative");
  return M * K * R * L;
}

}  // namespace phasedeploy::verification
