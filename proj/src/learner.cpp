#include "phasedeploy/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phasedeploy/hash.hpp"

namespace phasedeploy::rl {

namespace {

constexpr std::uint64_t kPolicyInitTag = 1;
constexpr std::uint64_t kCriticInitTag = 2;
constexpr std::uint64_t kStreamTag = 3;
constexpr std::uint64_t kResetTag = 0xC817;
constexpr std::uint64_t kEvalActionTag = 0xAC7;

void softmax(std::span<const double> logits, std::span<double> probs) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    z += probs[i];
  }
  for (double& p : probs) p /= z;
}

void hash_adam(Fnv1a& h, const nn::AdamState& s) {
  h.doubles(s.m).doubles(s.v).i64(s.t);
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

void LearnerConfig::validate() const {
  if (hidden.empty()) throw ConfigError("learner.hidden must list at least one width");
  for (int w : hidden) {
    if (w <= 0) throw ConfigError("learner.hidden widths must be positive");
  }
  if (!(clip > 0.0)) throw ConfigError("learner.clip must be positive");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("learner.gae_lambda must lie in [0, 1]");
  if (!(policy_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("learner learning rates must be positive");
  if (episodes_per_update < 1) throw ConfigError("learner.episodes_per_update must be >= 1");
  if (epochs < 1 || minibatches < 1) throw ConfigError("learner.epochs and learner.minibatches must be >= 1");
  if (entropy_coef < 0.0) throw ConfigError("learner.entropy_coef must be >= 0");
}

std::uint64_t LearnerConfig::hash() const {
  Fnv1a h;
  for (int w : hidden) h.i64(w);
  h.f64(clip).f64(gae_lambda).f64(policy_lr).f64(critic_lr).i64(episodes_per_update).i64(epochs).i64(minibatches);
  h.f64(entropy_coef).f64(max_grad_norm).i64(normalize_advantages ? 1 : 0).f64(policy_output_gain);
  h.f64(critic_output_gain);
  return h.value();
}

std::uint64_t Checkpoint::fingerprint() const {
  Fnv1a h;
  h.i64(step).u64(policy.fingerprint()).u64(critic.fingerprint());
  hash_adam(h, policy_opt);
  hash_adam(h, critic_opt);
  h.i64(lr_position).u64(rng.key).u64(rng.counter).u64(env_spec_hash);
  return h.value();
}

bool Checkpoint::learner_equal(const Checkpoint& o) const {
  return step == o.step && policy == o.policy && critic == o.critic && policy_opt == o.policy_opt &&
         critic_opt == o.critic_opt && lr_position == o.lr_position && env_spec_hash == o.env_spec_hash;
}

Checkpoint clone_checkpoint(const Checkpoint& ck, std::uint64_t tag) {
  Checkpoint out = ck;
  out.rng = StreamState{derive_stream(ck.rng.key ^ ck.rng.counter, tag), 0};
  return out;
}

std::uint64_t EvalSpec::fingerprint() const { return Fnv1a().i64(n_episodes).u64(seed).u64(greedy ? 1 : 0).value(); }

double policy_loss(const nn::Mlp& policy, std::span<const Sample> batch, const LearnerConfig& cfg,
                   std::span<double> grad) {
  const std::size_t n_actions = policy.output_dim();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> logits(n_actions), probs(n_actions), dlogits(n_actions);
  nn::Mlp::Tape tape;
  double loss = 0.0;
  for (const Sample& s : batch) {
    policy.forward(s.obs.span(), logits, grad.empty() ? nullptr : &tape);
    softmax(logits, probs);
    const double logp = std::log(probs[s.action]);
    const double ratio = std::exp(logp - s.old_logp);
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    const double surr = std::min(ratio * s.advantage, clipped * s.advantage);
    double entropy = 0.0;
    for (double p : probs) entropy -= p * std::log(p);
    loss += (-surr - cfg.entropy_coef * entropy) * inv_n;
    if (grad.empty()) continue;
    // The unclipped branch carries gradient only where it is the active minimum.
    const bool active = ratio * s.advantage <= clipped * s.advantage;
    const double g_logp = active ? -s.advantage * ratio : 0.0;
    for (std::size_t j = 0; j < n_actions; ++j) {
      const double dlogp = (j == static_cast<std::size_t>(s.action) ? 1.0 : 0.0) - probs[j];
      const double dentropy = -probs[j] * (std::log(probs[j]) + entropy);
      dlogits[j] = (g_logp * dlogp - cfg.entropy_coef * dentropy) * inv_n;
    }
    policy.backward(tape, dlogits, grad);
  }
  return loss;
}

double value_loss(const nn::Mlp& critic, std::span<const Sample> batch, std::span<double> grad) {
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  nn::Mlp::Tape tape;
  double loss = 0.0;
  double v = 0.0;
  for (const Sample& s : batch) {
    critic.forward(s.obs.span(), {&v, 1}, grad.empty() ? nullptr : &tape);
    const double err = v - s.ret;
    loss += 0.5 * err * err * inv_n;
    if (grad.empty()) continue;
    const double g = err * inv_n;
    critic.backward(tape, {&g, 1}, grad);
  }
  return loss;
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                        double lambda) {
  const std::size_t n = rewards.size();
  std::vector<double> adv(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = i + 1 < n ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + gamma * lambda * (i + 1 < n ? running : 0.0);
    adv[i] = running;
  }
  return adv;
}

void normalize(std::span<double> values) {
  if (values.empty()) return;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double std = std::sqrt(ss / static_cast<double>(values.size()));
  for (double& v : values) v = (v - mean) / (std + 1e-8);
}

int sampled_action(const nn::Mlp& policy, std::span<const double> obs, double u01) {
  std::vector<double> logits(policy.output_dim());
  std::vector<double> probs(logits.size());
  policy.forward(obs, logits);
  softmax(logits, probs);
  std::size_t a = 0;
  while (a + 1 < probs.size() && u01 >= probs[a]) {
    u01 -= probs[a];
    ++a;
  }
  return static_cast<int>(a);
}

int greedy_action(const nn::Mlp& policy, std::span<const double> obs) {
  std::vector<double> logits(policy.output_dim());
  policy.forward(obs, logits);
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

ActorCritic::ActorCritic(env::Env env, LearnerConfig config) : env_(std::move(env)), config_(std::move(config)) {
  config_.validate();
}

std::vector<int> ActorCritic::policy_sizes() const {
  std::vector<int> s{static_cast<int>(env_.obs_dim())};
  s.insert(s.end(), config_.hidden.begin(), config_.hidden.end());
  s.push_back(env_.spec().action_count);
  return s;
}

std::vector<int> ActorCritic::critic_sizes() const {
  std::vector<int> s{static_cast<int>(env_.obs_dim())};
  s.insert(s.end(), config_.hidden.begin(), config_.hidden.end());
  s.push_back(1);
  return s;
}

nn::Mlp ActorCritic::fresh_critic(Rng& rng) const {
  return nn::Mlp::initialized(critic_sizes(), rng, config_.critic_output_gain);
}

Checkpoint ActorCritic::init(std::uint64_t seed) const {
  const Rng root(seed);
  Rng policy_rng = root.split(kPolicyInitTag);
  Rng critic_rng = root.split(kCriticInitTag);
  Checkpoint ck;
  ck.policy = nn::Mlp::initialized(policy_sizes(), policy_rng, config_.policy_output_gain);
  ck.critic = fresh_critic(critic_rng);
  ck.policy_opt = nn::AdamState(ck.policy.param_count());
  ck.critic_opt = nn::AdamState(ck.critic.param_count());
  ck.rng = root.split(kStreamTag).state();
  ck.env_spec_hash = env_.spec().hash();
  return ck;
}

Checkpoint ActorCritic::train(const Checkpoint& start, rewards::ScheduledReward& reward, std::int64_t updates,
                              std::vector<UpdateStats>* stats) const {
  if (updates < 0) throw UsageError("train: update count must be >= 0");
  if (start.env_spec_hash != env_.spec().hash()) throw UsageError("train: checkpoint belongs to another env spec");
  Checkpoint ck = start;
  if (updates == 0) {
    ck.audit.push_back({ck.step, "train", "no-op (0 updates)"});
    return ck;
  }
  const double gamma = env_.spec().gamma;
  const std::size_t n_actions = static_cast<std::size_t>(env_.spec().action_count);
  const nn::AdamConfig policy_adam{config_.policy_lr};
  const nn::AdamConfig critic_adam{config_.critic_lr};
  std::vector<double> logits(n_actions), probs(n_actions);
  std::vector<Sample> batch;
  std::vector<double> ep_rewards, ep_values;
  std::vector<double> policy_grad(ck.policy.param_count()), critic_grad(ck.critic.param_count());

  const std::int64_t first_step = ck.step;
  for (std::int64_t u = 0; u < updates; ++u) {
    const Checkpoint last_finite = ck;
    Rng rng(ck.rng);
    batch.clear();
    double reward_sum = 0.0;
    double critic_peak = 0.0;
    double success_sum = 0.0;
    std::size_t steps = 0;

    for (int e = 0; e < config_.episodes_per_update; ++e) {
      env::EpisodeTrace trace;
      env::EnvState state = env_.reset(rng.next_u64());
      ep_rewards.clear();
      ep_values.clear();
      const std::size_t first = batch.size();
      while (!state.done) {
        Sample s;
        s.obs = env_.observe(state);
        ck.policy.forward(s.obs.span(), logits);
        softmax(logits, probs);
        double u01 = rng.uniform();
        std::size_t a = 0;
        while (a + 1 < n_actions && u01 >= probs[a]) {
          u01 -= probs[a];
          ++a;
        }
        s.action = static_cast<int>(a);
        s.old_logp = std::log(probs[a]);
        double v = 0.0;
        ck.critic.forward(s.obs.span(), {&v, 1});
        critic_peak = std::max(critic_peak, std::abs(v));
        env::StepResult r = env_.step(state, s.action);
        const double rew = reward.eval(r.transition, ck.step);
        trace.append(r.transition, r.success);
        ep_rewards.push_back(rew);
        ep_values.push_back(v);
        reward_sum += rew;
        ++steps;
        batch.push_back(s);
        state = r.state;
      }
      success_sum += env_.episode_success(trace);
      const std::vector<double> adv = gae(ep_rewards, ep_values, gamma, config_.gae_lambda);
      for (std::size_t i = 0; i < adv.size(); ++i) {
        batch[first + i].advantage = adv[i];
        batch[first + i].ret = adv[i] + ep_values[i];
      }
    }

    if (config_.normalize_advantages) {
      std::vector<double> adv(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) adv[i] = batch[i].advantage;
      normalize(adv);
      for (std::size_t i = 0; i < batch.size(); ++i) batch[i].advantage = adv[i];
    }

    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Sample> mb;
    double last_policy_loss = 0.0, last_value_loss = 0.0;
    const std::size_t n_mb = std::min<std::size_t>(static_cast<std::size_t>(config_.minibatches), batch.size());
    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      for (std::size_t m = 0; m < n_mb; ++m) {
        const std::size_t lo = m * batch.size() / n_mb;
        const std::size_t hi = (m + 1) * batch.size() / n_mb;
        mb.clear();
        for (std::size_t i = lo; i < hi; ++i) mb.push_back(batch[order[i]]);
        std::fill(policy_grad.begin(), policy_grad.end(), 0.0);
        std::fill(critic_grad.begin(), critic_grad.end(), 0.0);
        last_policy_loss = policy_loss(ck.policy, mb, config_, policy_grad);
        last_value_loss = value_loss(ck.critic, mb, critic_grad);
        if (!finite(last_policy_loss) || !finite(last_value_loss)) throw TrainingDiverged(ck.step, last_finite);
        nn::clip_grad_norm(policy_grad, config_.max_grad_norm);
        nn::clip_grad_norm(critic_grad, config_.max_grad_norm);
        nn::adam_step(ck.policy.params(), policy_grad, ck.policy_opt, policy_adam);
        nn::adam_step(ck.critic.params(), critic_grad, ck.critic_opt, critic_adam);
      }
    }
    if (!ck.policy.all_finite() || !ck.critic.all_finite()) throw TrainingDiverged(ck.step, last_finite);

    if (stats) {
      double entropy = 0.0;
      for (const Sample& s : batch) {
        ck.policy.forward(s.obs.span(), logits);
        softmax(logits, probs);
        for (double p : probs) entropy -= p * std::log(p);
      }
      stats->push_back({ck.step, reward_sum / static_cast<double>(steps), critic_peak, last_policy_loss,
                        last_value_loss, entropy / static_cast<double>(batch.size()),
                        success_sum / config_.episodes_per_update});
    }
    ck.rng = rng.state();
    ++ck.step;
    ++ck.lr_position;
  }
  ck.audit.push_back({first_step, "train", reward.describe() + " x" + std::to_string(updates)});
  return ck;
}

EvalResult ActorCritic::evaluate(const Checkpoint& ck, const EvalSpec& spec) const {
  if (spec.n_episodes < 1) throw UsageError("evaluate: n_episodes must be >= 1");
  EvalResult out;
  for (int i = 0; i < spec.n_episodes; ++i) {
    Rng action_rng(derive_stream(spec.episode_seed(i), kEvalActionTag));
    const auto trace = env::rollout(env_, spec.episode_seed(i), [&](const env::EnvState& s) {
      const auto obs = env_.observe(s);
      if (spec.greedy) return greedy_action(ck.policy, obs.span());
      return sampled_action(ck.policy, obs.span(), action_rng.uniform());
    });
    out.scores.push_back(env_.episode_success(trace));
    out.consec_scores.push_back(env_.consec_score(trace));
  }
  out.mean = std::accumulate(out.scores.begin(), out.scores.end(), 0.0) / spec.n_episodes;
  out.consec_mean = std::accumulate(out.consec_scores.begin(), out.consec_scores.end(), 0.0) / spec.n_episodes;
  return out;
}

CompetenceProxy ActorCritic::competence(const Checkpoint& ck, const EvalSpec& spec) const {
  const EvalResult r = evaluate(ck, spec);
  return {r.mean, spec.n_episodes, spec.fingerprint()};
}

double ActorCritic::critic_value(const Checkpoint& ck, std::span<const double> obs) const {
  if (obs.size() != ck.critic.input_dim()) {
    throw UsageError("critic_value: observation has " + std::to_string(obs.size()) + " entries, critic expects " +
                     std::to_string(ck.critic.input_dim()));
  }
  double v = 0.0;
  ck.critic.forward(obs, {&v, 1});
  return v;
}

Checkpoint ActorCritic::reset_critic(const Checkpoint& ck, std::uint64_t seed) const {
  Checkpoint out = ck;
  Rng rng = Rng(seed).split(kResetTag);
  out.critic = fresh_critic(rng);
  out.critic_opt = nn::AdamState(out.critic.param_count());
  out.audit.push_back({ck.step, "reset_critic", "seed " + std::to_string(seed)});
  return out;
}

}  // namespace phasedeploy::rl
