#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phasedeploy/env.hpp"
#include "phasedeploy/mlp.hpp"
#include "phasedeploy/reward_expr.hpp"

namespace phasedeploy::rewards {

enum class RewardSource { kStructuredBuiltin, kDslLoaded };
std::string_view to_string(RewardSource source);

enum class ScaleMode { kIdentity, kRunningNorm, kMatched };
std::string_view to_string(ScaleMode mode);

// Post-processing of the raw expression value.
//  identity:     stateless pass-through.
//  running_norm: Welford mean/variance over every value seen so far
//                (including the current one); emits 0 until two samples have
//                been seen, then (x - mean) / (sample_std + 1e-8).
//  matched:      fixed affine map scale * x + offset fitted on a calibration trace.
struct ScaleTransform {
  static constexpr double kEpsilon = 1e-8;

  ScaleMode mode = ScaleMode::kIdentity;
  double scale = 1.0;
  double offset = 0.0;
  double target_mean = 0.0;
  double target_std = 1.0;
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  double apply(double x);
};

// Frozen critic snapshot used as a shaping potential Phi(s) = V_old(s).
struct Potential {
  std::shared_ptr<const nn::Mlp> critic;
  double gamma = 0.99;

  double value(std::span<const double> obs) const;
};

// A candidate reward r_h(s, a, s'). Values are copyable; running_norm state
// travels with the copy, so every training run must own its own instance.
class RewardHypothesis {
 public:
  RewardHypothesis() = default;
  // `expr` must already be bound to the target environment's feature names.
  RewardHypothesis(std::string id, RewardSource source, RewardExpr expr);

  const std::string& id() const { return id_; }
  RewardSource source() const { return source_; }
  const RewardExpr& expr() const { return expr_; }
  const ScaleTransform& transform() const { return transform_; }
  const std::optional<Potential>& shaping() const { return shaping_; }

  // Raw expression value, no transform or shaping.
  double base(const env::Transition& t) const { return expr_.eval(t.features.span()); }

  // transform(base) + [gamma * Phi(s') - Phi(s)]. Advances running_norm state
  // exactly once. `step` is the learner update index (unused by stationary
  // hypotheses; kept so schedules and hypotheses share a signature).
  double eval(const env::Transition& t, std::int64_t step);

  RewardHypothesis with_id(std::string id) const;
  RewardHypothesis with_transform(ScaleTransform transform) const;
  RewardHypothesis with_shaping(Potential potential) const;

 private:
  std::string id_;
  RewardSource source_ = RewardSource::kStructuredBuiltin;
  RewardExpr expr_;
  ScaleTransform transform_;
  std::optional<Potential> shaping_;
};

// Builds a hypothesis from DSL text bound to `env`'s features. ParseError and
// EvaluationError propagate.
RewardHypothesis make_hypothesis(const env::Env& env, std::string id, std::string_view text,
                                 RewardSource source = RewardSource::kDslLoaded);

// Built-in family {early, late_oracle, late_alt} for each desk task.
//  key_door:     kd_early_dense  staged progress shaping (key distance, then door distance)
//                kd_late_oracle  sparse door-open success
//                kd_late_alt     door-distance shaping that ignores the key
//  line_balance: bb_speed_bias, bb_pos_speed (oracle-like), bb_dist_only
std::vector<RewardHypothesis> builtin_family(const env::Env& env);

// Role indices into builtin_family().
inline constexpr std::size_t kEarlyRole = 0;
inline constexpr std::size_t kOracleRole = 1;
inline constexpr std::size_t kAltRole = 2;

// Candidate-pool text: one `id := expression` per line, `#` starts a comment.
// Every expression is validated against `env`'s feature names; errors carry
// the line number. Duplicate ids are rejected.
std::vector<RewardHypothesis> parse_pool(const env::Env& env, std::string_view text);
std::vector<RewardHypothesis> load_pool_file(const env::Env& env, const std::string& path);

// r~ = r + gamma * Phi(s') - Phi(s) with Phi the given critic snapshot. The
// snapshot is copied so later training of the source never leaks in.
RewardHypothesis pbrs_wrap(const RewardHypothesis& h, const nn::Mlp& critic_snapshot, double gamma);

// Raw (pre-transform) values of `h` along `n_episodes` uniform-random
// episodes with pinned seeds derived from `seed`.
std::vector<double> calibration_trace(const env::Env& env, const RewardHypothesis& h, int n_episodes,
                                      std::uint64_t seed);

// Population mean and standard deviation.
std::pair<double, double> trace_stats(std::span<const double> values);

// identity / running_norm ignore the calibration arguments. matched fits the
// affine map so that `calibration` (raw values of h) gets target mean/std;
// throws ConfigError when either standard deviation is degenerate.
RewardHypothesis apply_scale(const RewardHypothesis& h, ScaleMode mode, std::span<const double> calibration = {},
                             double target_mean = 0.0, double target_std = 1.0);

// Reward selected by learner update index. Stages switch at t >= start.
class ScheduledReward {
 public:
  struct Stage {
    std::int64_t start = 0;
    RewardHypothesis reward;
  };

  ScheduledReward(RewardHypothesis single);  // NOLINT(google-explicit-constructor)
  static ScheduledReward staged(std::vector<Stage> stages);
  // (1 - alpha(t)) * r1 + alpha(t) * r2 with alpha linear from 0 at t0 to 1 at t1.
  static ScheduledReward interpolated(RewardHypothesis first, RewardHypothesis second, std::int64_t t0,
                                      std::int64_t t1);

  double eval(const env::Transition& t, std::int64_t step);
  double alpha(std::int64_t step) const;
  // Stage active at `step` (for interpolation: the dominant endpoint).
  const RewardHypothesis& active(std::int64_t step) const;
  bool is_interpolated() const { return interpolated_; }
  const std::vector<Stage>& stages() const { return stages_; }
  std::string describe() const;

 private:
  ScheduledReward() = default;
  std::size_t stage_index(std::int64_t step) const;

  std::vector<Stage> stages_;
  bool interpolated_ = false;
  std::int64_t t0_ = 0;
  std::int64_t t1_ = 0;
};

}  // namespace phasedeploy::rewards
