#include "phasedeploy/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "phasedeploy/error.hpp"
#include "phasedeploy/hash.hpp"

namespace phasedeploy::manifest {

using Json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kCalibrationSeed = 0xCA1;
constexpr int kCalibrationEpisodes = 20;

// Reads fields from one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Reader() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  const Json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string field(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError(field(k) + ": unknown field");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T>
void require_unique(const std::vector<T>& v, const std::string& path) {
  std::set<T> s;
  for (const auto& x : v) {
    if (!s.insert(x).second) {
      std::ostringstream os;
      os << x;
      throw ConfigError(path + ": duplicate entry " + os.str());
    }
  }
}

Json learner_json(const rl::LearnerConfig& c) {
  Json j;
  j["hidden"] = c.hidden;
  j["clip"] = c.clip;
  j["gae_lambda"] = c.gae_lambda;
  j["policy_lr"] = c.policy_lr;
  j["critic_lr"] = c.critic_lr;
  j["episodes_per_update"] = c.episodes_per_update;
  j["epochs"] = c.epochs;
  j["minibatches"] = c.minibatches;
  j["entropy_coef"] = c.entropy_coef;
  j["max_grad_norm"] = c.max_grad_norm;
  j["normalize_advantages"] = c.normalize_advantages;
  j["policy_output_gain"] = c.policy_output_gain;
  j["critic_output_gain"] = c.critic_output_gain;
  return j;
}

void read_learner(const Json& j, rl::LearnerConfig& c) {
  Reader r(j, "manifest.learner");
  r.get("hidden", c.hidden);
  r.get("clip", c.clip);
  r.get("gae_lambda", c.gae_lambda);
  r.get("policy_lr", c.policy_lr);
  r.get("critic_lr", c.critic_lr);
  r.get("episodes_per_update", c.episodes_per_update);
  r.get("epochs", c.epochs);
  r.get("minibatches", c.minibatches);
  r.get("entropy_coef", c.entropy_coef);
  r.get("max_grad_norm", c.max_grad_norm);
  r.get("normalize_advantages", c.normalize_advantages);
  r.get("policy_output_gain", c.policy_output_gain);
  r.get("critic_output_gain", c.critic_output_gain);
  r.finish();
}

}  // namespace

const std::vector<std::string>& evidence_statuses() {
  static const std::vector<std::string> v{
      "locked_main_existing",  "reduced_main_6x3090", "heldout_test_6x3090",
      "selector_support_6x3090", "compute_matched_6x3090", "appendix_support_topup",
      "optional_extra_task_pilot_6x3090", "oracle_upper_bound", "stress_tests",
      "historical_legacy",     "failed_or_blocked",
  };
  return v;
}

void ExperimentManifest::validate() const {
  env.validate();
  learner.validate();
  if (seeds.empty()) throw ConfigError("manifest.seeds: must be nonempty");
  require_unique(seeds, "manifest.seeds");
  require_unique(dev_seeds, "manifest.dev_seeds");
  require_unique(test_seeds, "manifest.test_seeds");
  for (auto s : test_seeds) {
    if (std::find(dev_seeds.begin(), dev_seeds.end(), s) != dev_seeds.end()) {
      throw ConfigError("manifest.test_seeds: seed " + std::to_string(s) + " is also a dev seed");
    }
  }
  if (budget < 1) throw ConfigError("manifest.budget: must be >= 1");
  if (eval_every < 1) throw ConfigError("manifest.eval.every: must be >= 1");
  if (eval_episodes < 1) throw ConfigError("manifest.eval.episodes: must be >= 1");
  if (shift_window < 1) throw ConfigError("manifest.shift_window: must be >= 1");
  for (auto t : probes) {
    if (t < 0) throw ConfigError("manifest.probes: entries must be >= 0");
  }
  require_unique(probes, "manifest.probes");
  try {
    verification.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("manifest.") + e.what());
  }
  if (rules.stable_min < 1) throw ConfigError("manifest.rules.stable_min: must be >= 1");
  if (rules.reference_horizon &&
      std::find(verification.horizons.begin(), verification.horizons.end(), *rules.reference_horizon) ==
          verification.horizons.end()) {
    throw ConfigError("manifest.rules.reference_horizon: not one of verification.horizons");
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const MethodSpec& ms = methods[i];
    const std::string path = "manifest.methods[" + std::to_string(i) + "]";
    if (ms.id.empty()) throw ConfigError(path + ".id: must be nonempty");
    if (!ids.insert(ms.id).second) throw ConfigError(path + ".id: duplicate method '" + ms.id + "'");
    deployment::parse_switch_operator(ms.op);
    if (ms.scale != "identity" && ms.scale != "running_norm" && ms.scale != "matched") {
      throw ConfigError(path + ".scale: expected identity, running_norm, or matched");
    }
    if (ms.kind == "single") {
      if (ms.reward.empty()) throw ConfigError(path + ".reward: required for single");
    } else if (ms.kind == "two_stage") {
      if (ms.first.empty() || ms.second.empty()) throw ConfigError(path + ": two_stage needs first and second");
      if (ms.first == ms.second) throw ConfigError(path + ": two_stage stages must differ");
      if (ms.t_s <= 0 || ms.t_s >= budget) throw ConfigError(path + ".t_s: must lie in (0, budget)");
    } else if (ms.kind == "interpolate") {
      if (ms.first.empty() || ms.second.empty()) throw ConfigError(path + ": interpolate needs first and second");
      if (ms.t0 < 0 || ms.t1 <= ms.t0) throw ConfigError(path + ": interpolate needs 0 <= t0 < t1");
    } else if (ms.kind == "profile") {
      if (probes.empty()) throw ConfigError(path + ": profile methods need manifest.probes");
    } else {
      throw ConfigError(path + ".kind: unknown kind '" + ms.kind + "' (expected single, two_stage, interpolate, profile)");
    }
  }
  for (const auto& op : operators) deployment::parse_switch_operator(op);
  std::set<std::string> sel;
  for (std::size_t i = 0; i < selectors.size(); ++i) {
    const std::string path = "manifest.selectors[" + std::to_string(i) + "]";
    if (!sel.insert(selectors[i].id).second) throw ConfigError(path + ".id: duplicate selector");
    try {
      selectors[i].config.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  metrics::collapse_indicator(0.0, 0.0, metric.tau_best, metric.tau_tail);
  if (!(metric.tail_fraction > 0.0 && metric.tail_fraction <= 1.0)) {
    throw ConfigError("manifest.metric.tail_fraction: must be in (0, 1]");
  }
  for (int k : pool_k) {
    if (k < 2) throw ConfigError("manifest.pool.k: entries must be >= 2");
  }
  if (pool_budget < 1) throw ConfigError("manifest.pool.budget: must be >= 1");
  const auto& st = evidence_statuses();
  if (std::find(st.begin(), st.end(), evidence_status) == st.end()) {
    std::string list;
    for (const auto& s : st) list += (list.empty() ? "" : ", ") + s;
    throw ConfigError("manifest.evidence_status: unknown status '" + evidence_status + "' (expected one of " + list + ")");
  }
}

rl::EvalSpec ExperimentManifest::eval_spec() const {
  rl::EvalSpec e;
  e.n_episodes = eval_episodes;
  e.seed = eval_seed;
  return e;
}

deployment::ExecutionConfig ExperimentManifest::execution() const {
  deployment::ExecutionConfig c;
  c.budget = budget;
  c.eval_every = eval_every;
  c.eval = eval_spec();
  c.shift_window = shift_window;
  return c;
}

const MethodSpec& ExperimentManifest::method(const std::string& id) const {
  for (const auto& m : methods) {
    if (m.id == id) return m;
  }
  throw ConfigError("manifest has no method '" + id + "'");
}

std::string to_text(const ExperimentManifest& m) {
  Json j;
  j["name"] = m.name;
  j["evidence_status"] = m.evidence_status;
  Json e;
  e["task"] = std::string(env::to_string(m.env.name));
  e["horizon"] = m.env.horizon;
  e["gamma"] = m.env.gamma;
  e["grid_size"] = m.env.grid_size;
  e["band"] = m.env.band;
  j["env"] = e;
  j["candidates"] = m.candidates;
  j["early"] = m.early;
  j["oracle"] = m.oracle;
  j["learner"] = learner_json(m.learner);
  j["seeds"] = m.seeds;
  j["dev_seeds"] = m.dev_seeds;
  j["test_seeds"] = m.test_seeds;
  j["budget"] = m.budget;
  j["eval"] = Json{{"every", m.eval_every}, {"episodes", m.eval_episodes}, {"seed", m.eval_seed}};
  j["shift_window"] = m.shift_window;
  j["probe_seed"] = m.probe_seed;
  j["probe_reward"] = m.probe_reward;
  j["probes"] = m.probes;
  const auto& v = m.verification;
  j["verification"] = Json{{"horizons", v.horizons},       {"repeats", v.repeats},
                           {"rel_min", v.rel_min},         {"margin_min", v.margin_min},
                           {"bootstrap_resamples", v.bootstrap_resamples}, {"bootstrap_seed", v.bootstrap_seed}};
  Json rules;
  rules["stable_min"] = m.rules.stable_min;
  rules["reference_horizon"] = m.rules.reference_horizon ? Json(*m.rules.reference_horizon) : Json(nullptr);
  rules["fallback"] = m.rules.fallback_candidate;
  rules["operator"] = deployment::to_string(m.rules.op);
  j["rules"] = rules;
  Json methods = Json::array();
  for (const auto& ms : m.methods) {
    Json x;
    x["id"] = ms.id;
    x["kind"] = ms.kind;
    if (ms.kind == "single") x["reward"] = ms.reward;
    if (ms.kind == "two_stage" || ms.kind == "interpolate") {
      x["first"] = ms.first;
      x["second"] = ms.second;
    }
    if (ms.kind == "two_stage") {
      x["t_s"] = ms.t_s;
      x["operator"] = ms.op;
    }
    if (ms.kind == "interpolate") {
      x["t0"] = ms.t0;
      x["t1"] = ms.t1;
    }
    x["scale"] = ms.scale;
    methods.push_back(x);
  }
  j["methods"] = methods;
  j["operators"] = m.operators;
  Json sels = Json::array();
  for (const auto& s : m.selectors) {
    const auto& c = s.config;
    sels.push_back(Json{{"id", s.id},
                        {"kind", deployment::to_string(s.kind)},
                        {"probe_every", c.probe_every},
                        {"fork_horizon", c.fork_horizon},
                        {"fork_repeats", c.fork_repeats},
                        {"delta", c.delta},
                        {"rel_min", c.rel_min},
                        {"ma_window", c.ma_window},
                        {"consecutive", c.consecutive},
                        {"operator", deployment::to_string(c.op)}});
  }
  j["selectors"] = sels;
  j["metric"] = Json{{"tau_best", m.metric.tau_best}, {"tau_tail", m.metric.tau_tail},
                     {"tail_fraction", m.metric.tail_fraction}};
  j["pool"] = Json{{"k", m.pool_k}, {"budget", m.pool_budget}};
  return j.dump(2) + "\n";
}

ExperimentManifest parse(std::string_view text, std::string base_dir) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: not valid JSON: ") + e.what());
  }
  ExperimentManifest m;
  m.base_dir = std::move(base_dir);
  Reader r(j, "manifest");
  r.get("name", m.name);
  r.get("evidence_status", m.evidence_status);
  if (const Json* e = r.sub("env")) {
    Reader er(*e, "manifest.env");
    std::string task = "key_door_sparse";
    er.get("task", task);
    m.env = env::EnvSpec::defaults(env::parse_task_name(task));
    er.get("horizon", m.env.horizon);
    er.get("gamma", m.env.gamma);
    er.get("grid_size", m.env.grid_size);
    er.get("band", m.env.band);
    er.finish();
  } else {
    m.env = env::EnvSpec::defaults(env::TaskName::kKeyDoorSparse);
  }
  r.get("candidates", m.candidates);
  r.get("early", m.early);
  r.get("oracle", m.oracle);
  if (const Json* l = r.sub("learner")) read_learner(*l, m.learner);
  r.get("seeds", m.seeds);
  r.get("dev_seeds", m.dev_seeds);
  r.get("test_seeds", m.test_seeds);
  r.get("budget", m.budget);
  if (const Json* e = r.sub("eval")) {
    Reader er(*e, "manifest.eval");
    er.get("every", m.eval_every);
    er.get("episodes", m.eval_episodes);
    er.get("seed", m.eval_seed);
    er.finish();
  }
  r.get("shift_window", m.shift_window);
  r.get("probe_seed", m.probe_seed);
  r.get("probe_reward", m.probe_reward);
  r.get("probes", m.probes);
  if (const Json* v = r.sub("verification")) {
    Reader vr(*v, "manifest.verification");
    vr.get("horizons", m.verification.horizons);
    vr.get("repeats", m.verification.repeats);
    vr.get("rel_min", m.verification.rel_min);
    vr.get("margin_min", m.verification.margin_min);
    vr.get("bootstrap_resamples", m.verification.bootstrap_resamples);
    vr.get("bootstrap_seed", m.verification.bootstrap_seed);
    vr.finish();
  }
  if (const Json* rj = r.sub("rules")) {
    Reader rr(*rj, "manifest.rules");
    rr.get("stable_min", m.rules.stable_min);
    if (const Json* h = rr.sub("reference_horizon"); h && !h->is_null()) {
      if (!h->is_number_integer()) throw ConfigError("manifest.rules.reference_horizon: expected an integer");
      m.rules.reference_horizon = h->get<int>();
    }
    rr.get("fallback", m.rules.fallback_candidate);
    std::string op = "hard";
    rr.get("operator", op);
    m.rules.op = deployment::parse_switch_operator(op);
    rr.finish();
  }
  if (const Json* ms = r.sub("methods")) {
    if (!ms->is_array()) throw ConfigError("manifest.methods: expected an array");
    for (std::size_t i = 0; i < ms->size(); ++i) {
      Reader mr((*ms)[i], "manifest.methods[" + std::to_string(i) + "]");
      MethodSpec s;
      mr.get("id", s.id);
      mr.get("kind", s.kind);
      mr.get("reward", s.reward);
      mr.get("first", s.first);
      mr.get("second", s.second);
      mr.get("t_s", s.t_s);
      mr.get("t0", s.t0);
      mr.get("t1", s.t1);
      mr.get("operator", s.op);
      mr.get("scale", s.scale);
      mr.finish();
      m.methods.push_back(std::move(s));
    }
  }
  r.get("operators", m.operators);
  if (const Json* ss = r.sub("selectors")) {
    if (!ss->is_array()) throw ConfigError("manifest.selectors: expected an array");
    for (std::size_t i = 0; i < ss->size(); ++i) {
      Reader sr((*ss)[i], "manifest.selectors[" + std::to_string(i) + "]");
      SelectorSpec s;
      std::string kind, op = "hard";
      sr.get("id", s.id);
      sr.get("kind", kind);
      s.kind = deployment::parse_selector_kind(kind);
      if (s.id.empty()) s.id = kind;
      auto& c = s.config;
      sr.get("probe_every", c.probe_every);
      sr.get("fork_horizon", c.fork_horizon);
      sr.get("fork_repeats", c.fork_repeats);
      sr.get("delta", c.delta);
      sr.get("rel_min", c.rel_min);
      sr.get("ma_window", c.ma_window);
      sr.get("consecutive", c.consecutive);
      sr.get("operator", op);
      c.op = deployment::parse_switch_operator(op);
      sr.finish();
      m.selectors.push_back(std::move(s));
    }
  }
  if (const Json* mj = r.sub("metric")) {
    Reader mr(*mj, "manifest.metric");
    mr.get("tau_best", m.metric.tau_best);
    mr.get("tau_tail", m.metric.tau_tail);
    mr.get("tail_fraction", m.metric.tail_fraction);
    mr.finish();
  }
  if (const Json* pj = r.sub("pool")) {
    Reader pr(*pj, "manifest.pool");
    pr.get("k", m.pool_k);
    pr.get("budget", m.pool_budget);
    pr.finish();
  }
  r.finish();
  if (m.probe_reward.empty()) m.probe_reward = m.early;
  for (auto& s : m.selectors) {
    s.config.incumbent = m.early;
    s.config.oracle = m.oracle;
  }
  m.validate();
  return m;
}

ExperimentManifest load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read manifest " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::filesystem::path p(path);
  return parse(ss.str(), p.has_parent_path() ? p.parent_path().string() : ".");
}

std::uint64_t hash(const ExperimentManifest& m) { return hash_string(to_text(m)); }

std::vector<rewards::RewardHypothesis> resolve_candidates(const ExperimentManifest& m) {
  const env::Env e(m.env);
  std::vector<rewards::RewardHypothesis> roster;
  if (m.candidates == "builtin") {
    roster = rewards::builtin_family(e);
  } else {
    std::filesystem::path p(m.candidates);
    if (p.is_relative()) p = std::filesystem::path(m.base_dir) / p;
    roster = rewards::load_pool_file(e, p.string());
  }
  auto known = [&](const std::string& id) {
    return std::any_of(roster.begin(), roster.end(), [&](const auto& h) { return h.id() == id; });
  };
  auto check = [&](const std::string& id, const std::string& field) {
    if (!id.empty() && !known(id)) throw ConfigError(field + ": unknown candidate '" + id + "'");
  };
  check(m.early, "manifest.early");
  check(m.oracle, "manifest.oracle");
  check(m.probe_reward, "manifest.probe_reward");
  check(m.rules.fallback_candidate, "manifest.rules.fallback");
  for (std::size_t i = 0; i < m.methods.size(); ++i) {
    const std::string path = "manifest.methods[" + std::to_string(i) + "]";
    check(m.methods[i].reward, path + ".reward");
    check(m.methods[i].first, path + ".first");
    check(m.methods[i].second, path + ".second");
  }
  return roster;
}

deployment::Schedule schedule_for(const ExperimentManifest& m, const MethodSpec& spec,
                                  std::span<const rewards::RewardHypothesis> roster,
                                  const deployment::DeploymentPlan* plan) {
  auto find = [&](const std::string& id) -> const rewards::RewardHypothesis& {
    for (const auto& h : roster) {
      if (h.id() == id) return h;
    }
    throw ConfigError("method '" + spec.id + "': unknown candidate '" + id + "'");
  };
  deployment::Schedule s;
  s.label = spec.id;
  s.op = deployment::parse_switch_operator(spec.op);
  if (spec.kind == "profile") {
    if (!plan) throw UsageError("method '" + spec.id + "' needs a deployment plan");
    s = deployment::schedule_for(*plan, roster, spec.id);
  } else if (spec.kind == "single") {
    s.stages.push_back({0, find(spec.reward)});
  } else {
    s.stages.push_back({0, find(spec.first)});
    s.stages.push_back({spec.kind == "two_stage" ? spec.t_s : spec.t0, find(spec.second)});
    if (spec.kind == "interpolate") s.interpolate = std::pair{spec.t0, spec.t1};
  }
  if (spec.scale == "running_norm") {
    for (auto& st : s.stages) st.reward = rewards::apply_scale(st.reward, rewards::ScaleMode::kRunningNorm);
  } else if (spec.scale == "matched" && s.stages.size() > 1) {
    const env::Env e(m.env);
    const auto ref = rewards::trace_stats(
        rewards::calibration_trace(e, s.stages[0].reward, kCalibrationEpisodes, kCalibrationSeed));
    for (std::size_t i = 1; i < s.stages.size(); ++i) {
      const auto cal = rewards::calibration_trace(e, s.stages[i].reward, kCalibrationEpisodes, kCalibrationSeed);
      s.stages[i].reward = rewards::apply_scale(s.stages[i].reward, rewards::ScaleMode::kMatched, cal, ref.first, ref.second);
    }
  }
  return s;
}

}  // namespace phasedeploy::manifest
