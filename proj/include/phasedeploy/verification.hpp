#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phasedeploy/learner.hpp"
#include "phasedeploy/rewards.hpp"

namespace phasedeploy::verification {

struct ForkResult {
  std::int64_t t = 0;
  std::string candidate_id;
  int horizon = 0;
  int repeat = 0;
  double J = 0.0;
  bool diverged = false;
  double wallclock_s = 0.0;
  std::int64_t executed_steps = 0;
};

// kCommon gives every candidate the same stream for a given repeat, so
// candidates differ only in their reward. kPerCandidate also mixes in the id.
enum class StreamMode { kCommon, kPerCandidate };

struct ForkOptions {
  int threads = 1;
  StreamMode streams = StreamMode::kCommon;
  // Wall-clock timing makes output bytes differ run to run; off unless asked.
  bool record_wallclock = false;
};

// Stream tag for fork (candidate, repeat).
std::uint64_t fork_tag(const std::string& candidate_id, int repeat, StreamMode mode);

// K*R forks of `ck`, each trained L updates under one candidate and scored by
// `eval`. Output sorted by (candidate_id, repeat). `ck` is never modified. A
// diverged fork is scored at its last finite state and flagged.
std::vector<ForkResult> fork_verify(const rl::ActorCritic& learner, const rl::Checkpoint& ck,
                                    std::span<const rewards::RewardHypothesis> candidates, int L, int R,
                                    const rl::EvalSpec& eval, const ForkOptions& options = {});

struct VerificationConfig {
  std::vector<int> horizons{10, 20};
  int repeats = 4;
  double rel_min = 0.75;
  double margin_min = 0.01;
  int bootstrap_resamples = 10000;
  std::uint64_t bootstrap_seed = 0xB0075;

  void validate() const;
  std::uint64_t hash() const;
};

struct CandidateScore {
  std::string id;
  double mean = 0.0;
};

struct CheckpointVerdict {
  std::int64_t t = 0;
  int horizon = 0;
  double competence = 0.0;
  std::string modal_winner;
  double rel = 0.0;
  double margin_mean = 0.0;
  double margin_lcb95 = 0.0;
  double entropy = 0.0;
  bool informative = false;
  std::vector<CandidateScore> mean_scores;  // sorted by id
  std::vector<std::string> repeat_winners;  // index = repeat
};

struct WinnerMargin {
  std::string winner;
  double margin = 0.0;
};

// argmax with ties to the lexicographically smallest id; margin over the best
// other candidate. Throws UsageError with fewer than two candidates.
WinnerMargin winner_and_margin(std::span<const CandidateScore> scores);

// Aggregates the forks of one (t, L). Throws UsageError on mixed t or L, on an
// empty input, or when some (candidate, repeat) cell is missing.
CheckpointVerdict aggregate_verdict(std::span<const ForkResult> results, const VerificationConfig& config,
                                    double competence = 0.0);

struct PhaseProfile {
  std::vector<std::int64_t> checkpoints;
  std::vector<std::string> roster;
  VerificationConfig config;
  rl::EvalSpec eval;
  std::vector<CheckpointVerdict> verdicts;  // ordered by (t, horizon)
  std::int64_t executed_steps = 0;

  // Verdict at (t, L), or nullptr.
  const CheckpointVerdict* find(std::int64_t t, int L) const;
  // Verdicts at horizon L in checkpoint order.
  std::vector<const CheckpointVerdict*> at_horizon(int L) const;
  std::uint64_t fingerprint() const;
};

struct ProfileRun {
  PhaseProfile profile;
  std::vector<ForkResult> forks;  // ordered by (t, horizon, candidate_id, repeat)
};

// Trains a probe learner from `seed` under `probe_reward`, returning the
// checkpoint at each requested step.
std::map<std::int64_t, rl::Checkpoint> train_probe(const rl::ActorCritic& learner, std::uint64_t seed,
                                                   const rewards::RewardHypothesis& probe_reward,
                                                   std::span<const std::int64_t> steps);

// One verdict per (t, L). Throws UsageError on an empty roster or checkpoint
// list, and ConfigError naming every requested t with no checkpoint.
ProfileRun build_phase_profile(const rl::ActorCritic& learner, const std::map<std::int64_t, rl::Checkpoint>& checkpoints,
                               std::span<const std::int64_t> steps, std::span<const rewards::RewardHypothesis> candidates,
                               const VerificationConfig& config, const rl::EvalSpec& eval,
                               const ForkOptions& options = {});

// Smallest probed t whose verdict at L is informative. Throws UsageError when
// L is not one of the profile's horizons.
std::optional<std::int64_t> first_informative(const PhaseProfile& profile, int L);

// M * K * R * L fork updates.
std::int64_t verification_cost(std::int64_t M, std::int64_t K, std::int64_t R, std::int64_t L);

}  // namespace phasedeploy::verification
