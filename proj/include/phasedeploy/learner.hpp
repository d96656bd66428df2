#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "phasedeploy/env.hpp"
#include "phasedeploy/error.hpp"
#include "phasedeploy/mlp.hpp"
#include "phasedeploy/rewards.hpp"
#include "phasedeploy/rng.hpp"

namespace phasedeploy::rl {

// Hyperparameters of the clipped-surrogate actor-critic. One "update" is one
// batch of `episodes_per_update` on-policy episodes followed by `epochs`
// passes of `minibatches` Adam steps on each network.
struct LearnerConfig {
  std::vector<int> hidden{32, 32};
  double clip = 0.2;
  double gae_lambda = 0.95;
  double policy_lr = 3e-3;
  double critic_lr = 3e-3;
  int episodes_per_update = 8;
  int epochs = 4;
  int minibatches = 4;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  bool normalize_advantages = true;
  double policy_output_gain = 0.01;
  double critic_output_gain = 1.0;

  void validate() const;
  std::uint64_t hash() const;
};

struct AuditEntry {
  std::int64_t step = 0;
  std::string action;
  std::string detail;
  friend bool operator==(const AuditEntry&, const AuditEntry&) = default;
};

// Full learner state z_t. Plain value: copying a checkpoint yields an
// independent learner.
struct Checkpoint {
  std::int64_t step = 0;
  nn::Mlp policy;
  nn::Mlp critic;
  nn::AdamState policy_opt;
  nn::AdamState critic_opt;
  // Learning-rate schedule position (updates consumed); the schedule is constant.
  std::int64_t lr_position = 0;
  StreamState rng;
  std::uint64_t env_spec_hash = 0;
  std::vector<AuditEntry> audit;

  // Hash over every learner field except the audit trail.
  std::uint64_t fingerprint() const;
  std::uint64_t policy_fingerprint() const { return policy.fingerprint(); }
  std::uint64_t critic_fingerprint() const { return critic.fingerprint(); }
  bool learner_equal(const Checkpoint& other) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Independent duplicate whose RNG stream is split from the parent's by `tag`.
Checkpoint clone_checkpoint(const Checkpoint& ck, std::uint64_t tag = 0);

// Thrown when an update produces a non-finite loss or parameter. Carries the
// offending update index and the last checkpoint whose state was finite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::int64_t update_index, Checkpoint last_finite)
      : Error("training diverged at update " + std::to_string(update_index)),
        update_index_(update_index),
        last_finite_(std::move(last_finite)) {}
  std::int64_t update_index() const { return update_index_; }
  const Checkpoint& last_finite() const { return last_finite_; }

 private:
  std::int64_t update_index_;
  Checkpoint last_finite_;
};

struct UpdateStats {
  std::int64_t step = 0;  // update index that produced these stats
  double reward_mean = 0.0;
  double critic_peak_abs = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double train_success = 0.0;
};

// Fixed evaluation seed set: episode i uses derive_stream(seed, i).
struct EvalSpec {
  int n_episodes = 16;
  std::uint64_t seed = 0xE7A1;
  // Argmax actions instead of sampling from the policy with a per-episode stream.
  bool greedy = false;

  std::uint64_t episode_seed(int i) const { return derive_stream(seed, static_cast<std::uint64_t>(i)); }
  std::uint64_t fingerprint() const;
};

struct EvalResult {
  double mean = 0.0;
  std::vector<double> scores;
  double consec_mean = 0.0;
  std::vector<double> consec_scores;
};

struct CompetenceProxy {
  double value = 0.0;
  int batch_size = 0;
  std::uint64_t seed_set_fingerprint = 0;
};

// One on-policy sample after advantage estimation.
struct Sample {
  env::SmallVec obs;
  int action = 0;
  double old_logp = 0.0;
  double advantage = 0.0;
  double ret = 0.0;
};

// Clipped surrogate with entropy bonus:
//   L = -mean(min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)) - c_ent * mean(H).
// Returns L; when `grad` is nonempty adds dL/dparams into it.
double policy_loss(const nn::Mlp& policy, std::span<const Sample> batch, const LearnerConfig& cfg,
                   std::span<double> grad);
// L = 0.5 * mean((V(s) - R)^2).
double value_loss(const nn::Mlp& critic, std::span<const Sample> batch, std::span<double> grad);

// Generalized advantage estimates for one finished episode (no bootstrap
// past the last step). Returns advantages; returns are advantages + values.
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda);

// In-place (a - mean) / (std + 1e-8) with population std.
void normalize(std::span<double> values);

// Inverse-CDF draw from softmax(logits) with u01 in [0, 1).
int sampled_action(const nn::Mlp& policy, std::span<const double> obs, double u01);

// Greedy (argmax logit, lowest index on ties) action.
int greedy_action(const nn::Mlp& policy, std::span<const double> obs);

class ActorCritic {
 public:
  ActorCritic(env::Env env, LearnerConfig config);

  const env::Env& env() const { return env_; }
  const LearnerConfig& config() const { return config_; }

  // Fresh learner at step 0. Deterministic in `seed`.
  Checkpoint init(std::uint64_t seed) const;

  // Returns the checkpoint after `updates` further updates under `reward`.
  // The input checkpoint is never modified. `reward` carries any running
  // scale state forward, so pass the same object across consecutive chunks of
  // one run. Throws TrainingDiverged.
  Checkpoint train(const Checkpoint& ck, rewards::ScheduledReward& reward, std::int64_t updates,
                   std::vector<UpdateStats>* stats = nullptr) const;

  EvalResult evaluate(const Checkpoint& ck, const EvalSpec& spec) const;
  CompetenceProxy competence(const Checkpoint& ck, const EvalSpec& spec) const;

  // V(obs) of the checkpoint's critic. Throws UsageError on dimension mismatch.
  double critic_value(const Checkpoint& ck, std::span<const double> obs) const;

  // Keeps policy, policy optimizer, and step; reinitializes the critic and its
  // Adam moments from `seed`.
  Checkpoint reset_critic(const Checkpoint& ck, std::uint64_t seed) const;

 private:
  nn::Mlp fresh_critic(Rng& rng) const;
  std::vector<int> policy_sizes() const;
  std::vector<int> critic_sizes() const;

  env::Env env_;
  LearnerConfig config_;
};

}  // namespace phasedeploy::rl
