#include "phasedeploy/rewards.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "phasedeploy/error.hpp"
#include "phasedeploy/rng.hpp"

namespace phasedeploy::rewards {

std::string_view to_string(RewardSource source) {
  return source == RewardSource::kStructuredBuiltin ? "structured_builtin" : "dsl_loaded";
}

std::string_view to_string(ScaleMode mode) {
  switch (mode) {
    case ScaleMode::kIdentity: return "identity";
    case ScaleMode::kRunningNorm: return "running_norm";
    case ScaleMode::kMatched: return "matched";
  }
  return "?";
}

double ScaleTransform::apply(double x) {
  switch (mode) {
    case ScaleMode::kIdentity:
      return x;
    case ScaleMode::kMatched:
      return scale * x + offset;
    case ScaleMode::kRunningNorm: {
      ++count;
      const double delta = x - mean;
      mean += delta / static_cast<double>(count);
      m2 += delta * (x - mean);
      if (count < 2) return 0.0;
      const double std = std::sqrt(m2 / static_cast<double>(count - 1));
      return (x - mean) / (std + kEpsilon);
    }
  }
  return x;
}

double Potential::value(std::span<const double> obs) const {
  double out = 0.0;
  critic->forward(obs, {&out, 1});
  return out;
}

RewardHypothesis::RewardHypothesis(std::string id, RewardSource source, RewardExpr expr)
    : id_(std::move(id)), source_(source), expr_(std::move(expr)) {
  if (id_.empty()) throw ConfigError("reward hypothesis id must be nonempty");
  if (!expr_.is_bound()) throw UsageError("reward hypothesis '" + id_ + "' built from an unbound expression");
}

double RewardHypothesis::eval(const env::Transition& t, std::int64_t /*step*/) {
  double r = transform_.apply(base(t));
  if (shaping_) {
    r += shaping_->gamma * shaping_->value(t.next_obs.span()) - shaping_->value(t.obs.span());
  }
  return r;
}

RewardHypothesis RewardHypothesis::with_id(std::string id) const {
  RewardHypothesis h = *this;
  h.id_ = std::move(id);
  return h;
}

RewardHypothesis RewardHypothesis::with_transform(ScaleTransform transform) const {
  RewardHypothesis h = *this;
  h.transform_ = transform;
  return h;
}

RewardHypothesis RewardHypothesis::with_shaping(Potential potential) const {
  RewardHypothesis h = *this;
  h.shaping_ = std::move(potential);
  return h;
}

RewardHypothesis make_hypothesis(const env::Env& env, std::string id, std::string_view text, RewardSource source) {
  const auto& names = env.spec().feature_names;
  return RewardHypothesis(std::move(id), source, RewardExpr::parse(text, std::span<const std::string>(names)));
}

std::vector<RewardHypothesis> builtin_family(const env::Env& env) {
  const auto builtin = [&](std::string id, std::string_view text) {
    return make_hypothesis(env, std::move(id), text, RewardSource::kStructuredBuiltin);
  };
  if (env.spec().name == env::TaskName::kKeyDoorSparse) {
    return {
        builtin("kd_early_dense",
                "0.3 * ((1 - has_key) * 0.5 * (1 + dist_key) + has_key * (0.5 + 0.5 * (1 + dist_door))) + success"),
        builtin("kd_late_oracle", "success"),
        builtin("kd_late_alt", "1 + dist_door"),
    };
  }
  return {
      builtin("bb_speed_bias", "1 + 0.5 * dist_center - 2 * abs(vel)"),
      builtin("bb_pos_speed", "1 + dist_center - abs(vel)"),
      builtin("bb_dist_only", "1 + dist_center"),
  };
}

std::vector<RewardHypothesis> parse_pool(const env::Env& env, std::string_view text) {
  std::vector<RewardHypothesis> out;
  std::set<std::string> ids;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto sep = line.find(":=");
    const std::string where = "pool line " + std::to_string(line_no);
    if (sep == std::string::npos) throw ConfigError(where + ": expected 'id := expression'");
    const std::string id = trim(line.substr(0, sep));
    const std::string body = trim(line.substr(sep + 2));
    if (id.empty()) throw ConfigError(where + ": empty candidate id");
    if (!ids.insert(id).second) throw ConfigError(where + ": duplicate candidate id '" + id + "'");
    try {
      out.push_back(make_hypothesis(env, id, body, RewardSource::kDslLoaded));
    } catch (const ParseError& e) {
      throw ConfigError(where + " (" + id + "): " + e.what());
    }
  }
  return out;
}

std::vector<RewardHypothesis> load_pool_file(const env::Env& env, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open candidate pool file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pool(env, ss.str());
}

RewardHypothesis pbrs_wrap(const RewardHypothesis& h, const nn::Mlp& critic_snapshot, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw UsageError("pbrs_wrap: gamma must lie in (0, 1)");
  Potential p;
  p.critic = std::make_shared<const nn::Mlp>(critic_snapshot);
  p.gamma = gamma;
  return h.with_shaping(std::move(p)).with_id(h.id() + "+pbrs");
}

std::vector<double> calibration_trace(const env::Env& env, const RewardHypothesis& h, int n_episodes,
                                      std::uint64_t seed) {
  std::vector<double> values;
  const auto actions = static_cast<std::uint64_t>(env.spec().action_count);
  for (int e = 0; e < n_episodes; ++e) {
    Rng rng(derive_stream(seed, static_cast<std::uint64_t>(e)));
    const auto trace = env::rollout(env, rng.next_u64(), [&](const env::EnvState&) {
      return static_cast<int>(rng.below(actions));
    });
    for (const auto& t : trace.transitions) values.push_back(h.base(t));
  }
  return values;
}

std::pair<double, double> trace_stats(std::span<const double> values) {
  if (values.empty()) throw UsageError("trace_stats on an empty trace");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

RewardHypothesis apply_scale(const RewardHypothesis& h, ScaleMode mode, std::span<const double> calibration,
                             double target_mean, double target_std) {
  ScaleTransform t;
  t.mode = mode;
  std::string suffix;
  if (mode == ScaleMode::kRunningNorm) {
    suffix = "@running_norm";
  } else if (mode == ScaleMode::kMatched) {
    if (!(target_std > 1e-12) || !std::isfinite(target_std)) {
      throw ConfigError("matched scale: degenerate target std " + std::to_string(target_std));
    }
    const auto [mean, std] = trace_stats(calibration);
    if (!(std > 1e-12)) throw ConfigError("matched scale: calibration trace of '" + h.id() + "' has zero variance");
    t.target_mean = target_mean;
    t.target_std = target_std;
    t.scale = target_std / std;
    t.offset = target_mean - t.scale * mean;
    suffix = "@matched";
  }
  RewardHypothesis out = h.with_transform(t);
  return mode == ScaleMode::kIdentity ? out : out.with_id(h.id() + suffix);
}

ScheduledReward::ScheduledReward(RewardHypothesis single) { stages_.push_back({0, std::move(single)}); }

ScheduledReward ScheduledReward::staged(std::vector<Stage> stages) {
  if (stages.empty()) throw UsageError("scheduled reward needs at least one stage");
  if (stages.front().start != 0) throw UsageError("first stage must start at step 0");
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (stages[i].start <= stages[i - 1].start) throw UsageError("stage start steps must be strictly increasing");
  }
  ScheduledReward s;
  s.stages_ = std::move(stages);
  return s;
}

ScheduledReward ScheduledReward::interpolated(RewardHypothesis first, RewardHypothesis second, std::int64_t t0,
                                              std::int64_t t1) {
  if (t1 <= t0) throw UsageError("interpolation window must satisfy t1 > t0");
  ScheduledReward s;
  s.stages_.push_back({0, std::move(first)});
  s.stages_.push_back({t1, std::move(second)});
  s.interpolated_ = true;
  s.t0_ = t0;
  s.t1_ = t1;
  return s;
}

double ScheduledReward::alpha(std::int64_t step) const {
  if (!interpolated_) return 0.0;
  if (step <= t0_) return 0.0;
  if (step >= t1_) return 1.0;
  return static_cast<double>(step - t0_) / static_cast<double>(t1_ - t0_);
}

std::size_t ScheduledReward::stage_index(std::int64_t step) const {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (step >= stages_[i].start) idx = i;
  }
  return idx;
}

double ScheduledReward::eval(const env::Transition& t, std::int64_t step) {
  if (!interpolated_) return stages_[stage_index(step)].reward.eval(t, step);
  const double a = alpha(step);
  // Both endpoints are evaluated every step so running statistics stay aligned.
  const double r1 = stages_[0].reward.eval(t, step);
  const double r2 = stages_[1].reward.eval(t, step);
  return (1.0 - a) * r1 + a * r2;
}

const RewardHypothesis& ScheduledReward::active(std::int64_t step) const {
  if (interpolated_) return alpha(step) < 0.5 ? stages_[0].reward : stages_[1].reward;
  return stages_[stage_index(step)].reward;
}

std::string ScheduledReward::describe() const {
  std::string out;
  if (interpolated_) {
    return "interp(" + stages_[0].reward.id() + "->" + stages_[1].reward.id() + ", " + std::to_string(t0_) + ".." +
           std::to_string(t1_) + ")";
  }
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (i) out += " | ";
    out += stages_[i].reward.id() + "@" + std::to_string(stages_[i].start);
  }
  return out;
}

}  // namespace phasedeploy::rewards
